#pragma once

#include <string>
#include <vector>

#include "bhrnet/network.hpp"

namespace bhrnet {

// Parses a network config from JSON text. Required fields: name, width,
// num_stages, block {variant, num_dw, expansion}, stages (list of {channels,
// num_blocks}), head {kind, num_keypoints}. Optional: flip_pairs (list of
// [a, b] keypoint index pairs). The parsed spec is validated before return.
NetworkSpec parse_spec_json(const std::string& text);

std::string spec_to_json(const NetworkSpec& spec);

std::vector<std::string> builtin_config_names();

// Resolution order: an existing file path wins; otherwise
// $BHRNET_CONFIG_DIR/<name>.json if present; otherwise a builtin name.
NetworkSpec resolve_config(const std::string& name_or_path);

}  // namespace bhrnet
