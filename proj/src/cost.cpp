#include "bhrnet/cost.hpp"

#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bhrnet {

LayerDesc LayerDesc::conv(const ConvParams& p) {
  LayerDesc d;
  d.kind = "conv";
  d.out_channels = p.out_channels();
  d.in_per_group = p.weights.shape[1];
  d.fwd_out = p.weights.shape[0];
  d.kh = p.kernel_h();
  d.kw = p.kernel_w();
  d.groups = p.groups;
  d.has_bias = !p.bias.empty();
  d.stride_h = p.stride_h;
  d.stride_w = p.stride_w;
  d.pad_h = p.pad_h;
  d.pad_w = p.pad_w;
  return d;
}

LayerDesc LayerDesc::conv_transpose(const ConvParams& p) {
  LayerDesc d = conv(p);
  d.kind = "conv_transpose";
  d.out_channels = p.weights.shape[1] * p.groups;  // produced channels
  return d;
}

LayerDesc LayerDesc::batchnorm(int64_t channels) {
  LayerDesc d;
  d.kind = "batchnorm";
  d.channels = channels;
  return d;
}

LayerDesc LayerDesc::add(int64_t channels) {
  LayerDesc d;
  d.kind = "add";
  d.channels = channels;
  return d;
}

std::pair<uint64_t, uint64_t> layer_cost(const LayerDesc& d, int64_t in_h, int64_t in_w) {
  if (in_h <= 0 || in_w <= 0) throw std::invalid_argument("layer_cost: bad extents");
  const uint64_t area = static_cast<uint64_t>(in_h) * static_cast<uint64_t>(in_w);
  const uint64_t weight_params = static_cast<uint64_t>(d.fwd_out) *
                                 static_cast<uint64_t>(d.in_per_group) *
                                 static_cast<uint64_t>(d.kh) * static_cast<uint64_t>(d.kw);
  if (d.kind == "conv") {
    const int64_t out_h = conv_out_extent(in_h, d.kh, d.stride_h, d.pad_h);
    const int64_t out_w = conv_out_extent(in_w, d.kw, d.stride_w, d.pad_w);
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("layer_cost: empty conv output");
    const uint64_t macs =
        static_cast<uint64_t>(out_h) * static_cast<uint64_t>(out_w) * weight_params;
    const uint64_t params =
        weight_params + (d.has_bias ? static_cast<uint64_t>(d.out_channels) : 0);
    return {params, macs};
  }
  if (d.kind == "conv_transpose") {
    // Every input pixel multiplies its group's full kernel slab, so MACs are
    // input-area times the weight-element count.
    const uint64_t macs = area * weight_params;
    const uint64_t params =
        weight_params + (d.has_bias ? static_cast<uint64_t>(d.out_channels) : 0);
    return {params, macs};
  }
  if (d.kind == "batchnorm") {
    return {2 * static_cast<uint64_t>(d.channels),
            2 * area * static_cast<uint64_t>(d.channels)};
  }
  if (d.kind == "add") {
    return {0, area * static_cast<uint64_t>(d.channels)};
  }
  throw std::invalid_argument("layer_cost: unknown layer kind \"" + d.kind + "\"");
}

namespace {

struct Walker {
  CostReport report;
  int64_t in_h = 0, in_w = 0;

  int64_t res_h(int idx) const { return in_h >> (idx + 2); }
  int64_t res_w(int idx) const { return in_w >> (idx + 2); }
  static std::string res_bucket(int idx) { return "1/" + std::to_string(4 << idx); }

  void conv_bn(const std::string& name, const std::string& bucket, const ConvBn& cb,
               int64_t h, int64_t w) {
    const LayerDesc cd = LayerDesc::conv(cb.conv);
    auto [cp, cm] = layer_cost(cd, h, w);
    report.layers.push_back({name + ".conv", "conv", bucket, cp, cm, 0});
    const int64_t oh = conv_out_extent(h, cd.kh, cd.stride_h, cd.pad_h);
    const int64_t ow = conv_out_extent(w, cd.kw, cd.stride_w, cd.pad_w);
    auto [bp, bo] = layer_cost(LayerDesc::batchnorm(cd.out_channels), oh, ow);
    report.layers.push_back({name + ".bn", "batchnorm", bucket, bp, 0, bo});
  }

  void block(const std::string& name, const std::string& bucket, const BlockWeights& w,
             int64_t h, int64_t ww) {
    conv_bn(name + ".expand", bucket, w.expand, h, ww);
    for (size_t d = 0; d < w.dw.size(); ++d) {
      conv_bn(name + ".dw" + std::to_string(d + 1), bucket, w.dw[d], h, ww);
    }
    conv_bn(name + ".project", bucket, w.project, h, ww);
  }
};

}  // namespace

CostReport cost_report(const Network& net, int64_t input_h, int64_t input_w) {
  const int64_t div = int64_t{1} << (net.spec.num_stages + 1);
  if (input_h <= 0 || input_w <= 0 || input_h % div != 0 || input_w % div != 0) {
    throw std::invalid_argument("cost_report: extents must be positive multiples of " +
                                std::to_string(div));
  }
  Walker wk;
  wk.in_h = input_h;
  wk.in_w = input_w;
  wk.report.config_name = net.spec.name;
  wk.report.input_h = input_h;
  wk.report.input_w = input_w;

  wk.conv_bn("stem1", "stem", net.stem1, input_h, input_w);
  wk.conv_bn("stem2", "stem", net.stem2, input_h / 2, input_w / 2);

  for (size_t s = 0; s < net.stages.size(); ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    for (size_t b = 0; b < net.stages[s].size(); ++b) {
      const int bi = static_cast<int>(b);
      for (size_t i = 0; i < net.stages[s][b].size(); ++i) {
        wk.block(stage + ".branch" + std::to_string(b) + ".block" + std::to_string(i + 1),
                 Walker::res_bucket(bi), net.stages[s][b][i], wk.res_h(bi), wk.res_w(bi));
      }
    }
    const FuseUnit& fu = net.fuses[s];
    for (int64_t j = 0; j < fu.num_outputs; ++j) {
      for (int64_t i = 0; i < fu.num_inputs; ++i) {
        const FusePath& p = fu.paths[j][i];
        for (size_t k = 0; k < p.convs.size(); ++k) {
          // Down chains step one octave per conv starting at branch i's
          // resolution; up paths hold a single conv at the source resolution.
          const int idx = (i < j) ? static_cast<int>(i + static_cast<int64_t>(k))
                                  : static_cast<int>(i);
          wk.conv_bn(stage + ".fuse.out" + std::to_string(j) + ".in" + std::to_string(i) +
                         ".step" + std::to_string(k + 1),
                     Walker::res_bucket(idx), p.convs[k], wk.res_h(idx), wk.res_w(idx));
        }
      }
    }
    if (s < net.transitions.size()) {
      const Transition& tr = net.transitions[s];
      const std::string prefix = "transition" + std::to_string(s + 1);
      for (size_t b = 0; b < tr.adjust.size(); ++b) {
        if (tr.adjust[b]) {
          const int bi = static_cast<int>(b);
          wk.conv_bn(prefix + ".adjust" + std::to_string(b), Walker::res_bucket(bi),
                     *tr.adjust[b], wk.res_h(bi), wk.res_w(bi));
        }
      }
      const int parent = static_cast<int>(tr.adjust.size()) - 1;
      wk.conv_bn(prefix + ".new", Walker::res_bucket(parent), tr.new_branch, wk.res_h(parent),
                 wk.res_w(parent));
    }
  }

  const int64_t head_h = wk.res_h(0);
  const int64_t head_w = wk.res_w(0);
  if (net.head.single) {
    const LayerDesc d = LayerDesc::conv(*net.head.single);
    auto [p, m] = layer_cost(d, head_h, head_w);
    wk.report.layers.push_back({"head.final.conv", "conv", "head", p, m, 0});
  }
  if (net.head.deconv) {
    const LayerDesc d = LayerDesc::conv_transpose(net.head.deconv->conv);
    auto [p, m] = layer_cost(d, head_h, head_w);
    wk.report.layers.push_back({"head.deconv.conv", "conv_transpose", "head", p, m, 0});
    const int64_t out_h = (head_h - 1) * net.head.deconv->conv.stride_h -
                          2 * net.head.deconv->conv.pad_h + net.head.deconv->conv.kernel_h();
    const int64_t out_w = (head_w - 1) * net.head.deconv->conv.stride_w -
                          2 * net.head.deconv->conv.pad_w + net.head.deconv->conv.kernel_w();
    auto [bp, bo] = layer_cost(LayerDesc::batchnorm(d.out_channels), out_h, out_w);
    wk.report.layers.push_back({"head.deconv.bn", "batchnorm", "head", bp, 0, bo});
    for (size_t r = 0; r < net.head.res.size(); ++r) {
      const std::string prefix = "head.res" + std::to_string(r + 1);
      wk.conv_bn(prefix + ".conv1", "head", net.head.res[r].conv1, out_h, out_w);
      wk.conv_bn(prefix + ".conv2", "head", net.head.res[r].conv2, out_h, out_w);
    }
  }

  CostReport& rep = wk.report;
  std::vector<std::string> bucket_order = {"stem"};
  for (int b = 0; b < net.spec.num_stages; ++b) bucket_order.push_back(Walker::res_bucket(b));
  bucket_order.push_back("head");
  for (const std::string& name : bucket_order) {
    BucketShare bs;
    bs.bucket = name;
    rep.buckets.push_back(bs);
  }
  for (const LayerCost& lc : rep.layers) {
    if (lc.kind == "batchnorm") {
      rep.total_bn_params += lc.params;
      rep.total_bn_ops += lc.ops;
    } else {
      rep.total_params += lc.params;
      rep.total_macs += lc.macs;
    }
    for (BucketShare& bs : rep.buckets) {
      if (bs.bucket == lc.bucket) bs.macs += lc.macs;
    }
  }
  for (BucketShare& bs : rep.buckets) {
    bs.percent = 100.0 * static_cast<double>(bs.macs) / static_cast<double>(rep.total_macs);
  }
  rep.gflops = 2.0 * static_cast<double>(rep.total_macs) / 1e9;
  return rep;
}

std::string report_to_json(const CostReport& r) {
  nlohmann::json j;
  j["config"] = r.config_name;
  j["input"] = {r.input_h, r.input_w};
  j["layers"] = nlohmann::json::array();
  for (const LayerCost& lc : r.layers) {
    j["layers"].push_back({{"name", lc.name},
                           {"kind", lc.kind},
                           {"bucket", lc.bucket},
                           {"params", lc.params},
                           {"macs", lc.macs},
                           {"ops", lc.ops}});
  }
  j["buckets"] = nlohmann::json::array();
  for (const BucketShare& bs : r.buckets) {
    j["buckets"].push_back({{"bucket", bs.bucket}, {"macs", bs.macs}, {"percent", bs.percent}});
  }
  j["total_params"] = r.total_params;
  j["total_macs"] = r.total_macs;
  j["total_bn_params"] = r.total_bn_params;
  j["total_bn_ops"] = r.total_bn_ops;
  j["gflops"] = r.gflops;
  j["flop_convention"] = r.flop_convention;
  return j.dump(2) + "\n";
}

std::string report_to_text(const CostReport& r) {
  std::ostringstream os;
  os << r.config_name << " @ " << r.input_h << "x" << r.input_w << "\n\n";
  size_t name_w = 4;
  for (const LayerCost& lc : r.layers) name_w = std::max(name_w, lc.name.size());
  os << std::left << std::setw(static_cast<int>(name_w)) << "name" << "  " << std::setw(14)
     << "kind" << std::right << std::setw(12) << "params" << std::setw(16) << "macs" << "\n";
  for (const LayerCost& lc : r.layers) {
    os << std::left << std::setw(static_cast<int>(name_w)) << lc.name << "  " << std::setw(14)
       << lc.kind << std::right << std::setw(12) << lc.params << std::setw(16)
       << (lc.kind == "batchnorm" ? lc.ops : lc.macs) << "\n";
  }
  os << "\nper-resolution distribution (conv macs):\n";
  for (const BucketShare& bs : r.buckets) {
    os << "  " << std::left << std::setw(6) << bs.bucket << std::right << std::setw(16)
       << bs.macs << "  " << std::fixed << std::setprecision(2) << std::setw(6) << bs.percent
       << "%\n";
  }
  os << "\ntotals: params " << r.total_params << ", macs " << r.total_macs << ", bn params "
     << r.total_bn_params << ", bn ops " << r.total_bn_ops << "\n";
  os << "gflops " << std::fixed << std::setprecision(3) << r.gflops << " (" << r.flop_convention
     << ")\n";
  return os.str();
}

}  // namespace bhrnet
