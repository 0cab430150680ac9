#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bhrnet/tensor.hpp"

namespace bhrnet {

// Inverted-residual family. All variants share the same spine:
//   1x1 expand -> BN -> ReLU -> [3x3 depthwise -> BN -> ReLU] x num_dw
//   -> 1x1 project -> BN
// IR_DW adds extra depthwise convs, IR_SC adds an inner shortcut spanning the
// depthwise chain at expanded width, DIR adds both. The outer shortcut is
// active whenever stride == 1 and in_channels == out_channels.
enum class BlockVariant { IR, IR_DW, IR_SC, DIR };

const char* to_string(BlockVariant v);
BlockVariant block_variant_from_string(const std::string& s);

struct BlockSpec {
  BlockVariant variant = BlockVariant::DIR;
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int stride = 1;
  int expansion = 6;
  int num_dw = 2;

  int64_t expanded_channels() const { return in_channels * expansion; }
  bool inner_shortcut() const {
    return (variant == BlockVariant::IR_SC || variant == BlockVariant::DIR) &&
           stride == 1;
  }
  bool outer_shortcut() const { return stride == 1 && in_channels == out_channels; }

  // Throws std::invalid_argument on inconsistent specs, e.g. num_dw != 1 for
  // the single-depthwise variants or num_dw outside [1, 4].
  void validate() const;
};

struct ConvBn {
  ConvParams conv;
  BatchNormParams bn;
};

struct BlockWeights {
  BlockSpec spec;
  ConvBn expand;
  std::vector<ConvBn> dw;  // num_dw entries; the first one carries the stride
  ConvBn project;
};

// Allocates zero conv weights and identity batchnorm statistics for a spec.
BlockWeights make_block_weights(const BlockSpec& spec);

Tensor block_forward(const BlockWeights& w, const Tensor& input);

// One cross-resolution transform inside an exchange unit. Identity paths have
// no convs and factor 1; down paths chain stride-2 3x3 convs; up paths are a
// 1x1 conv at the source resolution followed by nearest upsampling.
struct FusePath {
  std::vector<ConvBn> convs;
  std::vector<bool> relu_after;  // per conv; final conv before the sum has none
  int up_factor = 1;
};

// Exchange unit over parallel branches ordered highest resolution first, each
// exactly one octave below the previous. paths[j][i] transforms input branch i
// into output branch j's geometry; outputs are summed and activated.
struct FuseUnit {
  int64_t num_inputs = 0;
  int64_t num_outputs = 0;
  std::vector<std::vector<FusePath>> paths;  // [output][input]
};

std::vector<Tensor> fuse_exchange(const FuseUnit& unit, const std::vector<Tensor>& branches);

enum class HeadKind { Higher, SingleConv };

const char* to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& s);

struct HeadSpec {
  HeadKind kind = HeadKind::Higher;
  int64_t num_keypoints = 17;  // tag channels equal this, output channels 2x
};

// Plain residual unit used inside the higher head: two 3x3 convs with an
// identity shortcut. Independent of the backbone block variant.
struct ResidualUnit {
  ConvBn conv1;
  ConvBn conv2;
};

struct HeadWeights {
  HeadSpec spec;
  std::optional<ConvParams> single;  // SingleConv: one biased 3x3 conv
  std::optional<ConvBn> deconv;      // Higher: 4x4 stride-2 transposed conv
  std::vector<ResidualUnit> res;     // Higher: three residual units
};

HeadWeights make_head_weights(const HeadSpec& spec, int64_t in_channels);

// Returns (heatmaps, tagmaps): channels [0, K) and [K, 2K) of the head output.
std::pair<Tensor, Tensor> head_forward(const HeadWeights& w, const Tensor& features);

}  // namespace bhrnet
