#include "bhrnet/network.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace bhrnet {

namespace {

ConvBn make_conv_bn(int64_t out_ch, int64_t in_ch, int64_t k, int stride, int pad) {
  ConvBn cb;
  cb.conv.weights = Tensor(out_ch, in_ch, k, k, 0.0f);
  cb.conv.stride_h = cb.conv.stride_w = stride;
  cb.conv.pad_h = cb.conv.pad_w = pad;
  cb.bn = BatchNormParams::identity(out_ch);
  return cb;
}

// Exchange unit over branches with the given channels. Output j receives an
// identity from branch j, chained stride-2 3x3 convs from higher-resolution
// branches (ReLU between steps, none on the last), and a 1x1 conv plus
// nearest upsampling from lower-resolution ones.
FuseUnit make_fuse_unit(const std::vector<int64_t>& channels, int64_t num_outputs) {
  FuseUnit unit;
  unit.num_inputs = static_cast<int64_t>(channels.size());
  unit.num_outputs = num_outputs;
  unit.paths.resize(num_outputs);
  for (int64_t j = 0; j < num_outputs; ++j) {
    unit.paths[j].resize(unit.num_inputs);
    for (int64_t i = 0; i < unit.num_inputs; ++i) {
      FusePath& p = unit.paths[j][i];
      if (i == j) continue;
      if (i < j) {
        const int64_t steps = j - i;
        for (int64_t t = 0; t < steps; ++t) {
          const bool last = (t == steps - 1);
          p.convs.push_back(make_conv_bn(last ? channels[j] : channels[i], channels[i], 3, 2, 1));
          p.relu_after.push_back(!last);
        }
      } else {
        p.convs.push_back(make_conv_bn(channels[j], channels[i], 1, 1, 0));
        p.relu_after.push_back(false);
        p.up_factor = 1 << (i - j);
      }
    }
  }
  return unit;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

void NetworkSpec::validate() const {
  if (width <= 0) throw std::invalid_argument("spec: width must be positive");
  if (num_stages < 1) throw std::invalid_argument("spec: need at least one stage");
  if (static_cast<int>(stages.size()) != num_stages) {
    throw std::invalid_argument("spec: stage list length must equal num_stages");
  }
  for (int s = 0; s < num_stages; ++s) {
    const StageConfig& sc = stages[s];
    if (static_cast<int>(sc.channels.size()) != s + 1 ||
        static_cast<int>(sc.num_blocks.size()) != s + 1) {
      throw std::invalid_argument("spec: stage " + std::to_string(s + 1) + " must have " +
                                  std::to_string(s + 1) + " branches");
    }
    for (int64_t c : sc.channels) {
      if (c <= 0) throw std::invalid_argument("spec: channels must be positive");
    }
    for (int n : sc.num_blocks) {
      if (n <= 0) throw std::invalid_argument("spec: block counts must be positive");
    }
  }
  if (stages[0].channels[0] != width) {
    throw std::invalid_argument("spec: stage-1 channels must equal width");
  }
  BlockSpec probe;
  probe.variant = block.variant;
  probe.in_channels = probe.out_channels = width;
  probe.stride = 1;
  probe.expansion = block.expansion;
  probe.num_dw = block.num_dw;
  probe.validate();
  if (head.num_keypoints <= 0) {
    throw std::invalid_argument("spec: head needs at least one keypoint type");
  }
  std::vector<bool> seen(static_cast<size_t>(head.num_keypoints), false);
  for (const auto& pr : flip_pairs) {
    for (int64_t k : pr) {
      if (k < 0 || k >= head.num_keypoints) {
        throw std::invalid_argument("spec: flip pair index out of range");
      }
      if (seen[static_cast<size_t>(k)]) {
        throw std::invalid_argument("spec: keypoint appears in two flip pairs");
      }
      seen[static_cast<size_t>(k)] = true;
    }
    if (pr[0] == pr[1]) throw std::invalid_argument("spec: flip pair maps a keypoint to itself");
  }
}

namespace {

// COCO keypoint order: left/right pairs for eyes, ears, shoulders, elbows,
// wrists, hips, knees, ankles.
const std::vector<std::array<int64_t, 2>> kCocoFlipPairs = {
    {1, 2}, {3, 4}, {5, 6}, {7, 8}, {9, 10}, {11, 12}, {13, 14}, {15, 16}};

NetworkSpec ladder_spec(const std::string& name, int64_t width, bool balanced) {
  NetworkSpec s;
  s.name = name;
  s.width = width;
  s.num_stages = 4;
  s.block = BlockTypeConfig{};
  for (int st = 0; st < 4; ++st) {
    StageConfig sc;
    for (int b = 0; b <= st; ++b) {
      sc.channels.push_back(width << b);
      sc.num_blocks.push_back(balanced ? b + 1 : 2);
    }
    s.stages.push_back(std::move(sc));
  }
  s.head.kind = HeadKind::Higher;
  s.head.num_keypoints = 17;
  s.flip_pairs = kCocoFlipPairs;
  return s;
}

}  // namespace

NetworkSpec hrnet_spec(int64_t width) {
  return ladder_spec("hrnet-" + std::to_string(width), width, false);
}

NetworkSpec bhrnet_spec(int64_t width) {
  return ladder_spec("bhrnet-" + std::to_string(width), width, true);
}

std::vector<int> balance_block_counts(const std::vector<uint64_t>& per_branch_block_cost) {
  if (per_branch_block_cost.empty()) {
    throw std::invalid_argument("balance_block_counts: empty cost list");
  }
  uint64_t budget = 0;
  for (uint64_t c : per_branch_block_cost) {
    if (c == 0) throw std::invalid_argument("balance_block_counts: costs must be positive");
    if (c > budget) budget = c;
  }
  std::vector<int> counts;
  counts.reserve(per_branch_block_cost.size());
  for (uint64_t c : per_branch_block_cost) {
    counts.push_back(static_cast<int>((budget + c - 1) / c));
  }
  return counts;
}

Network build_network(const NetworkSpec& spec) {
  spec.validate();
  Network net;
  net.spec = spec;
  net.stem1 = make_conv_bn(spec.width, 3, 3, 2, 1);
  net.stem2 = make_conv_bn(spec.width, spec.width, 3, 2, 1);

  net.stages.resize(spec.stages.size());
  for (size_t s = 0; s < spec.stages.size(); ++s) {
    const StageConfig& sc = spec.stages[s];
    net.stages[s].resize(sc.channels.size());
    for (size_t b = 0; b < sc.channels.size(); ++b) {
      BlockSpec bs;
      bs.variant = spec.block.variant;
      bs.in_channels = bs.out_channels = sc.channels[b];
      bs.stride = 1;
      bs.expansion = spec.block.expansion;
      bs.num_dw = spec.block.num_dw;
      for (int i = 0; i < sc.num_blocks[b]; ++i) {
        net.stages[s][b].push_back(make_block_weights(bs));
      }
    }
    const bool last_stage = (s + 1 == spec.stages.size());
    net.fuses.push_back(make_fuse_unit(
        sc.channels, last_stage ? 1 : static_cast<int64_t>(sc.channels.size())));
    if (!last_stage) {
      const StageConfig& next = spec.stages[s + 1];
      Transition tr;
      for (size_t b = 0; b < sc.channels.size(); ++b) {
        if (sc.channels[b] != next.channels[b]) {
          tr.adjust.push_back(make_conv_bn(next.channels[b], sc.channels[b], 3, 1, 1));
        } else {
          tr.adjust.push_back(std::nullopt);
        }
      }
      tr.new_branch = make_conv_bn(next.channels.back(), sc.channels.back(), 3, 2, 1);
      net.transitions.push_back(std::move(tr));
    }
  }
  net.head = make_head_weights(spec.head, spec.stages.back().channels[0]);
  return net;
}

namespace {

void add_tensor(std::vector<ParamRef>& out, const std::string& name, Tensor& t) {
  ParamRef r;
  r.name = name;
  r.extents.assign(t.shape.begin(), t.shape.end());
  r.data = t.data.data();
  r.count = t.data.size();
  out.push_back(std::move(r));
}

void add_vec(std::vector<ParamRef>& out, const std::string& name, std::vector<float>& v) {
  ParamRef r;
  r.name = name;
  r.extents = {static_cast<int64_t>(v.size())};
  r.data = v.data();
  r.count = v.size();
  out.push_back(std::move(r));
}

void add_conv(std::vector<ParamRef>& out, const std::string& prefix, ConvParams& p) {
  add_tensor(out, prefix + ".weight", p.weights);
  if (!p.bias.empty()) add_vec(out, prefix + ".bias", p.bias);
}

void add_bn(std::vector<ParamRef>& out, const std::string& prefix, BatchNormParams& bn) {
  add_vec(out, prefix + ".mean", bn.mean);
  add_vec(out, prefix + ".var", bn.var);
  add_vec(out, prefix + ".scale", bn.scale);
  add_vec(out, prefix + ".shift", bn.shift);
}

void add_conv_bn(std::vector<ParamRef>& out, const std::string& prefix, ConvBn& cb) {
  add_conv(out, prefix + ".conv", cb.conv);
  add_bn(out, prefix + ".bn", cb.bn);
}

void add_block(std::vector<ParamRef>& out, const std::string& prefix, BlockWeights& w) {
  add_conv_bn(out, prefix + ".expand", w.expand);
  for (size_t d = 0; d < w.dw.size(); ++d) {
    add_conv_bn(out, prefix + ".dw" + std::to_string(d + 1), w.dw[d]);
  }
  add_conv_bn(out, prefix + ".project", w.project);
}

}  // namespace

std::vector<ParamRef> parameters(Network& net) {
  std::vector<ParamRef> out;
  add_conv_bn(out, "stem1", net.stem1);
  add_conv_bn(out, "stem2", net.stem2);
  for (size_t s = 0; s < net.stages.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    for (size_t b = 0; b < net.stages[s].size(); ++b) {
      for (size_t i = 0; i < net.stages[s][b].size(); ++i) {
        add_block(out,
                  stage + ".branch" + std::to_string(b) + ".block" + std::to_string(i + 1),
                  net.stages[s][b][i]);
      }
    }
    FuseUnit& fu = net.fuses[s];
    for (int64_t j = 0; j < fu.num_outputs; ++j) {
      for (int64_t i = 0; i < fu.num_inputs; ++i) {
        FusePath& p = fu.paths[j][i];
        for (size_t k = 0; k < p.convs.size(); ++k) {
          add_conv_bn(out,
                      stage + ".fuse.out" + std::to_string(j) + ".in" + std::to_string(i) +
                          ".step" + std::to_string(k + 1),
                      p.convs[k]);
        }
      }
    }
    if (s < net.transitions.size()) {
      Transition& tr = net.transitions[s];
      const std::string prefix = "transition" + std::to_string(s + 1);
      for (size_t b = 0; b < tr.adjust.size(); ++b) {
        if (tr.adjust[b]) {
          add_conv_bn(out, prefix + ".adjust" + std::to_string(b), *tr.adjust[b]);
        }
      }
      add_conv_bn(out, prefix + ".new", tr.new_branch);
    }
  }
  if (net.head.single) add_conv(out, "head.final", *net.head.single);
  if (net.head.deconv) add_conv_bn(out, "head.deconv", *net.head.deconv);
  for (size_t r = 0; r < net.head.res.size(); ++r) {
    const std::string prefix = "head.res" + std::to_string(r + 1);
    add_conv_bn(out, prefix + ".conv1", net.head.res[r].conv1);
    add_conv_bn(out, prefix + ".conv2", net.head.res[r].conv2);
  }
  return out;
}

void init_weights(Network& net, uint64_t seed) {
  for (ParamRef& p : parameters(net)) {
    const std::string& n = p.name;
    if (n.ends_with(".weight")) {
      // Fan-in over the per-group input channels and the kernel window.
      int64_t fan_in = 1;
      for (size_t d = 1; d < p.extents.size(); ++d) fan_in *= p.extents[d];
      const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
      std::mt19937_64 rng(seed ^ fnv1a64(n));
      for (size_t i = 0; i < p.count; ++i) {
        const double u = static_cast<double>(rng() >> 40) / 16777216.0;  // [0, 1)
        p.data[i] = bound * static_cast<float>(2.0 * u - 1.0);
      }
    } else if (n.ends_with(".bn.var") || n.ends_with(".bn.scale")) {
      for (size_t i = 0; i < p.count; ++i) p.data[i] = 1.0f;
    } else {
      // Biases, batchnorm means and shifts.
      for (size_t i = 0; i < p.count; ++i) p.data[i] = 0.0f;
    }
  }
}

namespace {

template <typename F>
Tensor with_layer(const std::string& name, F&& f) {
  try {
    return f();
  } catch (const std::exception& e) {
    throw std::runtime_error(name + ": " + e.what());
  }
}

Tensor conv_bn_relu(const ConvBn& cb, const Tensor& x, const std::string& name) {
  return with_layer(name,
                    [&] { return relu(batchnorm_infer(conv2d(x, cb.conv), cb.bn)); });
}

}  // namespace

std::pair<Tensor, Tensor> network_forward(const Network& net, const Tensor& image) {
  if (image.shape[0] != 1) throw std::invalid_argument("network_forward: batch must be 1");
  if (image.shape[1] != 3) throw std::invalid_argument("network_forward: expected 3 channels");
  const int64_t div = int64_t{1} << (net.spec.num_stages + 1);
  if (image.shape[2] % div != 0 || image.shape[3] % div != 0) {
    throw std::invalid_argument("network_forward: spatial extents must be divisible by " +
                                std::to_string(div));
  }

  Tensor x = conv_bn_relu(net.stem1, image, "stem1");
  x = conv_bn_relu(net.stem2, x, "stem2");

  std::vector<Tensor> branches;
  branches.push_back(std::move(x));
  for (size_t s = 0; s < net.stages.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    for (size_t b = 0; b < net.stages[s].size(); ++b) {
      for (size_t i = 0; i < net.stages[s][b].size(); ++i) {
        const BlockWeights& blk = net.stages[s][b][i];
        branches[b] = with_layer(
            stage + ".branch" + std::to_string(b) + ".block" + std::to_string(i + 1),
            [&] { return block_forward(blk, branches[b]); });
      }
    }
    {
      std::vector<Tensor> fused;
      try {
        fused = fuse_exchange(net.fuses[s], branches);
      } catch (const std::exception& e) {
        throw std::runtime_error(stage + ".fuse: " + e.what());
      }
      branches = std::move(fused);
    }
    if (s < net.transitions.size()) {
      const Transition& tr = net.transitions[s];
      const std::string prefix = "transition" + std::to_string(s + 1);
      Tensor lowest = branches.back();
      for (size_t b = 0; b < tr.adjust.size(); ++b) {
        if (tr.adjust[b]) {
          branches[b] =
              conv_bn_relu(*tr.adjust[b], branches[b], prefix + ".adjust" + std::to_string(b));
        }
      }
      branches.push_back(conv_bn_relu(tr.new_branch, lowest, prefix + ".new"));
    }
  }

  try {
    return head_forward(net.head, branches[0]);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("head: ") + e.what());
  }
}

}  // namespace bhrnet
