#pragma once

#include <string>

#include "bhrnet/network.hpp"
#include "bhrnet/tensor.hpp"

namespace bhrnet {

// Raw tensor file: magic "BHRT", then little-endian u32 rank (always 4 here),
// u64 extents, and the f32 payload in row-major order.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Weight file: magic "BHRW", u32 format version (1), u32 entry count; each
// entry is u32 name length + UTF-8 name, u32 rank, u64 extents, f32 data.
// Loading validates every entry against the network's parameter inventory and
// requires the file to cover it exactly (no unknown, duplicate, or missing
// names, no shape drift).
void save_weights(const std::string& path, Network& net);
void load_weights(const std::string& path, Network& net);

}  // namespace bhrnet
