#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bhrnet/network.hpp"

namespace bhrnet {

// Geometry of one layer for analytic costing. conv fields mirror ConvParams;
// channels is used by batchnorm and add.
struct LayerDesc {
  std::string kind;  // "conv" | "conv_transpose" | "batchnorm" | "add"
  int64_t out_channels = 0;   // channels the layer produces
  int64_t in_per_group = 0;   // weight tensor's second extent
  int64_t fwd_out = 0;        // weight tensor's first extent (conv: == out_channels)
  int64_t kh = 0, kw = 0;
  int64_t groups = 1;
  bool has_bias = false;
  int64_t stride_h = 1, stride_w = 1;
  int64_t pad_h = 0, pad_w = 0;
  int64_t channels = 0;

  static LayerDesc conv(const ConvParams& p);
  static LayerDesc conv_transpose(const ConvParams& p);
  static LayerDesc batchnorm(int64_t channels);
  static LayerDesc add(int64_t channels);
};

// One costed layer. macs counts convolution multiply-accumulates; ops counts
// non-MAC elementwise work (batchnorm scale/shift, additions), kept out of
// the headline MAC totals.
struct LayerCost {
  std::string name;
  std::string kind;
  std::string bucket;
  uint64_t params = 0;
  uint64_t macs = 0;
  uint64_t ops = 0;
};

// (params, macs) for conv kinds; (params, ops) for batchnorm/add, where the
// second component is elementwise ops rather than MACs. Unknown kinds throw.
std::pair<uint64_t, uint64_t> layer_cost(const LayerDesc& d, int64_t in_h, int64_t in_w);

struct BucketShare {
  std::string bucket;
  uint64_t macs = 0;
  double percent = 0.0;  // of total macs
};

struct CostReport {
  std::string config_name;
  int64_t input_h = 0;
  int64_t input_w = 0;
  std::vector<LayerCost> layers;
  std::vector<BucketShare> buckets;  // stem, 1/4 ... 1/2^(stages+1), head
  uint64_t total_params = 0;         // conv weights and biases
  uint64_t total_macs = 0;
  uint64_t total_bn_params = 0;
  uint64_t total_bn_ops = 0;
  double gflops = 0.0;
  std::string flop_convention = "flops = 2 * macs";
};

// Walks the graph analytically; weight values never enter the numbers.
// Buckets are keyed by each layer's input-tensor resolution; the stem and
// head are itemized under their own buckets.
CostReport cost_report(const Network& net, int64_t input_h, int64_t input_w);

std::string report_to_json(const CostReport& r);
std::string report_to_text(const CostReport& r);

}  // namespace bhrnet
