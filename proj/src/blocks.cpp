#include "bhrnet/blocks.hpp"

#include <stdexcept>

namespace bhrnet {

const char* to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::IR: return "IR";
    case BlockVariant::IR_DW: return "IR+DW";
    case BlockVariant::IR_SC: return "IR+SC";
    case BlockVariant::DIR: return "DIR";
  }
  return "?";
}

BlockVariant block_variant_from_string(const std::string& s) {
  if (s == "IR") return BlockVariant::IR;
  if (s == "IR+DW") return BlockVariant::IR_DW;
  if (s == "IR+SC") return BlockVariant::IR_SC;
  if (s == "DIR") return BlockVariant::DIR;
  throw std::invalid_argument("unknown block variant: " + s);
}

const char* to_string(HeadKind k) {
  return k == HeadKind::Higher ? "higher" : "single-conv";
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "higher") return HeadKind::Higher;
  if (s == "single-conv") return HeadKind::SingleConv;
  throw std::invalid_argument("unknown head kind: " + s);
}

void BlockSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) {
    throw std::invalid_argument("BlockSpec: channels must be positive");
  }
  if (stride < 1) throw std::invalid_argument("BlockSpec: stride must be positive");
  if (expansion < 1) throw std::invalid_argument("BlockSpec: expansion must be >= 1");
  if (num_dw < 1 || num_dw > 4) {
    throw std::invalid_argument("BlockSpec: num_dw must be in [1, 4]");
  }
  if ((variant == BlockVariant::IR || variant == BlockVariant::IR_SC) && num_dw != 1) {
    throw std::invalid_argument(std::string("BlockSpec: variant ") + to_string(variant) +
                                " requires num_dw == 1");
  }
}

namespace {

ConvBn zero_conv_bn(int64_t out, int64_t in_pg, int64_t k, int stride, int pad,
                    int groups) {
  ConvBn cb;
  cb.conv.weights = Tensor(out, in_pg, k, k, 0.0f);
  cb.conv.stride_h = cb.conv.stride_w = stride;
  cb.conv.pad_h = cb.conv.pad_w = pad;
  cb.conv.groups = groups;
  cb.bn = BatchNormParams::identity(out);
  return cb;
}

}  // namespace

BlockWeights make_block_weights(const BlockSpec& spec) {
  spec.validate();
  BlockWeights w;
  w.spec = spec;
  const int64_t ce = spec.expanded_channels();
  w.expand = zero_conv_bn(ce, spec.in_channels, 1, 1, 0, 1);
  for (int i = 0; i < spec.num_dw; ++i) {
    const int stride = (i == 0) ? spec.stride : 1;
    ConvBn dw = zero_conv_bn(ce, 1, 3, stride, 1, 1);
    dw.conv.groups = static_cast<int>(ce);
    w.dw.push_back(std::move(dw));
  }
  w.project = zero_conv_bn(spec.out_channels, ce, 1, 1, 0, 1);
  return w;
}

Tensor block_forward(const BlockWeights& w, const Tensor& input) {
  w.spec.validate();
  if (input.channels() != w.spec.in_channels) {
    throw std::invalid_argument("block_forward: expected " +
                                std::to_string(w.spec.in_channels) + " channels, got " +
                                std::to_string(input.channels()));
  }
  Tensor t = relu(batchnorm_infer(conv2d(input, w.expand.conv), w.expand.bn));
  Tensor u = t;
  for (const ConvBn& dw : w.dw) {
    u = relu(batchnorm_infer(depthwise_conv2d(u, dw.conv), dw.bn));
  }
  if (w.spec.inner_shortcut()) u = add(u, t);
  Tensor y = batchnorm_infer(conv2d(u, w.project.conv), w.project.bn);
  if (w.spec.outer_shortcut()) y = add(y, input);
  return y;
}

std::vector<Tensor> fuse_exchange(const FuseUnit& unit, const std::vector<Tensor>& branches) {
  if (static_cast<int64_t>(branches.size()) != unit.num_inputs || branches.empty()) {
    throw std::invalid_argument("fuse_exchange: expected " +
                                std::to_string(unit.num_inputs) + " branches, got " +
                                std::to_string(branches.size()));
  }
  // Adjacent branches must be exactly one octave apart.
  for (size_t i = 1; i < branches.size(); ++i) {
    if (branches[i].height() * 2 != branches[i - 1].height() ||
        branches[i].width() * 2 != branches[i - 1].width()) {
      throw std::invalid_argument("fuse_exchange: branch " + std::to_string(i) +
                                  " is not one octave below branch " +
                                  std::to_string(i - 1));
    }
  }
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(unit.num_outputs));
  for (int64_t j = 0; j < unit.num_outputs; ++j) {
    std::optional<Tensor> sum;
    for (int64_t i = 0; i < unit.num_inputs; ++i) {
      const FusePath& path = unit.paths[j][i];
      Tensor v = branches[i];
      for (size_t t = 0; t < path.convs.size(); ++t) {
        v = batchnorm_infer(conv2d(v, path.convs[t].conv), path.convs[t].bn);
        if (path.relu_after[t]) v = relu(v);
      }
      if (path.up_factor > 1) v = upsample_nearest(v, path.up_factor);
      sum = sum ? add(*sum, v) : std::move(v);
    }
    out.push_back(relu(*sum));
  }
  return out;
}

HeadWeights make_head_weights(const HeadSpec& spec, int64_t in_channels) {
  if (spec.num_keypoints < 1) {
    throw std::invalid_argument("HeadSpec: num_keypoints must be positive");
  }
  HeadWeights w;
  w.spec = spec;
  const int64_t out = 2 * spec.num_keypoints;
  if (spec.kind == HeadKind::SingleConv) {
    ConvParams conv;
    conv.weights = Tensor(out, in_channels, 3, 3, 0.0f);
    conv.bias.assign(static_cast<size_t>(out), 0.0f);
    conv.pad_h = conv.pad_w = 1;
    w.single = std::move(conv);
    return w;
  }
  // Higher head: the transposed conv doubles resolution and already emits the
  // final channel count; weights stay in the forward-conv layout (in, out, 4, 4).
  ConvBn deconv;
  deconv.conv.weights = Tensor(in_channels, out, 4, 4, 0.0f);
  deconv.conv.stride_h = deconv.conv.stride_w = 2;
  deconv.conv.pad_h = deconv.conv.pad_w = 1;
  deconv.bn = BatchNormParams::identity(out);
  w.deconv = std::move(deconv);
  for (int i = 0; i < 3; ++i) {
    ResidualUnit r;
    r.conv1 = zero_conv_bn(out, out, 3, 1, 1, 1);
    r.conv2 = zero_conv_bn(out, out, 3, 1, 1, 1);
    w.res.push_back(std::move(r));
  }
  return w;
}

std::pair<Tensor, Tensor> head_forward(const HeadWeights& w, const Tensor& features) {
  const int64_t k = w.spec.num_keypoints;
  Tensor out;
  if (w.spec.kind == HeadKind::SingleConv) {
    if (!w.single) throw std::invalid_argument("head_forward: missing single-conv weights");
    out = conv2d(features, *w.single);
  } else {
    if (!w.deconv || w.res.size() != 3) {
      throw std::invalid_argument("head_forward: missing higher-head weights");
    }
    Tensor v = relu(batchnorm_infer(conv_transpose2d(features, w.deconv->conv), w.deconv->bn));
    for (const ResidualUnit& r : w.res) {
      Tensor h = relu(batchnorm_infer(conv2d(v, r.conv1.conv), r.conv1.bn));
      h = batchnorm_infer(conv2d(h, r.conv2.conv), r.conv2.bn);
      v = relu(add(h, v));
    }
    out = std::move(v);
  }
  Tensor heat(out.batch(), k, out.height(), out.width());
  Tensor tag(out.batch(), k, out.height(), out.width());
  const int64_t plane = out.height() * out.width();
  for (int64_t n = 0; n < out.batch(); ++n) {
    for (int64_t c = 0; c < k; ++c) {
      std::copy_n(&out.data[out.index(n, c, 0, 0)], plane, &heat.data[heat.index(n, c, 0, 0)]);
      std::copy_n(&out.data[out.index(n, k + c, 0, 0)], plane, &tag.data[tag.index(n, c, 0, 0)]);
    }
  }
  return {std::move(heat), std::move(tag)};
}

}  // namespace bhrnet
