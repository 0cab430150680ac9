#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bhrnet/blocks.hpp"
#include "bhrnet/tensor.hpp"

namespace bhrnet {

// One stage of parallel branches, highest resolution first. Stage s (1-based)
// has exactly s branches; branch b lives at 1/2^(b+2) of the input resolution.
struct StageConfig {
  std::vector<int64_t> channels;
  std::vector<int> num_blocks;
};

// Block shape shared by every backbone block in the network.
struct BlockTypeConfig {
  BlockVariant variant = BlockVariant::DIR;
  int num_dw = 2;
  int expansion = 6;
};

struct NetworkSpec {
  std::string name = "custom";
  int64_t width = 32;  // stem output channels, equals stage-1 branch channels
  int num_stages = 4;
  BlockTypeConfig block;
  std::vector<StageConfig> stages;
  HeadSpec head;
  std::vector<std::array<int64_t, 2>> flip_pairs;  // for horizontal flip tests

  void validate() const;
};

// Four-stage specs with channels doubling per branch. hrnet uses two blocks
// per branch per stage; bhrnet shifts depth toward the cheap low-resolution
// branches (1, 2, 3, 4 blocks at stage 4) so per-resolution cost evens out.
NetworkSpec hrnet_spec(int64_t width = 32);
NetworkSpec bhrnet_spec(int64_t width = 32);

// Block counts that even out per-branch totals: n_i = ceil(B / c_i) with
// B = max_i c_i, so every branch lands within one block cost of the budget.
std::vector<int> balance_block_counts(const std::vector<uint64_t>& per_branch_block_cost);

// Between consecutive stages: optional 3x3 channel-adjust conv per existing
// branch, plus a stride-2 3x3 conv creating the next branch from the lowest
// existing one (its pre-adjust tensor).
struct Transition {
  std::vector<std::optional<ConvBn>> adjust;
  ConvBn new_branch;
};

struct Network {
  NetworkSpec spec;
  ConvBn stem1;  // 3 -> width, stride 2
  ConvBn stem2;  // width -> width, stride 2
  std::vector<std::vector<std::vector<BlockWeights>>> stages;  // [stage][branch][block]
  std::vector<FuseUnit> fuses;          // one per stage; the last outputs branch 0 only
  std::vector<Transition> transitions;  // num_stages - 1 entries
  HeadWeights head;
};

// Named view of one weight tensor inside a Network, in canonical order.
struct ParamRef {
  std::string name;
  std::vector<int64_t> extents;
  float* data = nullptr;
  size_t count = 0;
};

// Builds the graph with zero conv weights and identity batchnorm stats.
Network build_network(const NetworkSpec& spec);

std::vector<ParamRef> parameters(Network& net);

// Reproducible fan-in-scaled init: each tensor is seeded from the global seed
// and its own name, so values do not depend on enumeration order.
void init_weights(Network& net, uint64_t seed);

// Returns (heatmaps, tagmaps). Requires batch 1, 3 channels, spatial extents
// divisible by 2^(num_stages + 1). Non-finite intermediates raise an error
// naming the layer that produced them.
std::pair<Tensor, Tensor> network_forward(const Network& net, const Tensor& image);

}  // namespace bhrnet
