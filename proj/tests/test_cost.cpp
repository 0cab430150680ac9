#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include "bhrnet/config.hpp"
#include "bhrnet/cost.hpp"

using namespace bhrnet;

namespace {

LayerDesc std_conv(int64_t out, int64_t in, int64_t k, int64_t stride, int64_t pad,
                   int64_t groups = 1, bool bias = false) {
  LayerDesc d;
  d.kind = "conv";
  d.out_channels = out;
  d.in_per_group = in / groups;
  d.fwd_out = out;
  d.kh = d.kw = k;
  d.groups = groups;
  d.has_bias = bias;
  d.stride_h = d.stride_w = stride;
  d.pad_h = d.pad_w = pad;
  return d;
}

uint64_t bucket_macs(const CostReport& r, const std::string& name) {
  for (const BucketShare& bs : r.buckets) {
    if (bs.bucket == name) return bs.macs;
  }
  FAIL("no bucket named " << name);
  return 0;
}

}  // namespace

TEST_CASE("layer_cost reproduces the standard and depthwise formulas") {
  auto [p_std, m_std] = layer_cost(std_conv(64, 64, 3, 1, 1), 16, 16);
  CHECK(m_std == 9437184);  // 16*16*64*64*9
  CHECK(p_std == 36864);

  auto [p_dw, m_dw] = layer_cost(std_conv(64, 64, 3, 1, 1, /*groups=*/64), 16, 16);
  CHECK(m_dw == 147456);
  CHECK(m_std == 64 * m_dw);
  CHECK(p_dw == 576);

  auto [p_b, m_b] = layer_cost(std_conv(64, 64, 3, 1, 1, 1, /*bias=*/true), 16, 16);
  CHECK(p_b == 36864 + 64);
  CHECK(m_b == m_std);

  // Stride halves each output extent: quarter the MACs.
  auto [p_s, m_s] = layer_cost(std_conv(64, 64, 3, 2, 1), 16, 16);
  CHECK(m_s == m_std / 4);
  CHECK(p_s == p_std);

  auto [p_bn, o_bn] = layer_cost(LayerDesc::batchnorm(64), 16, 16);
  CHECK(p_bn == 128);
  CHECK(o_bn == 2 * 16 * 16 * 64);

  auto [p_add, o_add] = layer_cost(LayerDesc::add(64), 16, 16);
  CHECK(p_add == 0);
  CHECK(o_add == 16 * 16 * 64);

  LayerDesc weird;
  weird.kind = "pool";
  CHECK_THROWS_AS(layer_cost(weird, 16, 16), std::invalid_argument);
  CHECK_THROWS_AS(layer_cost(std_conv(4, 4, 3, 1, 1), 0, 16), std::invalid_argument);
}

TEST_CASE("the depthwise + pointwise pair costs 1/9 + 1/C of a standard conv") {
  // Exact rational identity, checked by integer cross-multiplication:
  // (dw + pw) / std == 1/9 + 1/C == (C + 9) / (9C).
  const int64_t C = 64;
  auto [pd, dw] = layer_cost(std_conv(C, C, 3, 1, 1, C), 16, 16);
  auto [pp, pw] = layer_cost(std_conv(C, C, 1, 1, 0), 16, 16);
  auto [ps, st] = layer_cost(std_conv(C, C, 3, 1, 1), 16, 16);
  CHECK((dw + pw) * 9 * C == st * (C + 9));
  CHECK(doctest::Approx(static_cast<double>(dw + pw) / static_cast<double>(st))
            .epsilon(1e-12) == 1.0 / 9.0 + 1.0 / 64.0);
}

TEST_CASE("cost_report on a tiny network matches hand arithmetic") {
  NetworkSpec spec;
  spec.name = "tiny";
  spec.width = 8;
  spec.num_stages = 1;
  spec.block = BlockTypeConfig{BlockVariant::DIR, 2, 4};
  spec.stages = {StageConfig{{8}, {1}}};
  spec.head.kind = HeadKind::SingleConv;
  spec.head.num_keypoints = 2;
  Network net = build_network(spec);
  CostReport r = cost_report(net, 32, 32);

  CHECK(r.layers.size() == 13);  // 2 stem pairs + 4 block pairs + 1 head conv
  CHECK(r.total_macs == 55296 + 36864 + 69632 + 18432);
  CHECK(r.total_params == 216 + 576 + 256 + 288 + 288 + 256 + 292);
  CHECK(r.total_bn_params == 240);
  CHECK(r.total_bn_ops == 18432);
  CHECK(r.gflops == doctest::Approx(2.0 * 180224 / 1e9).epsilon(1e-12));

  CHECK(bucket_macs(r, "stem") == 92160);
  CHECK(bucket_macs(r, "1/4") == 69632);
  CHECK(bucket_macs(r, "head") == 18432);
  double percent_sum = 0;
  for (const BucketShare& bs : r.buckets) percent_sum += bs.percent;
  CHECK(percent_sum == doctest::Approx(100.0).epsilon(1e-9));
}

TEST_CASE("totals equal the sum of layer rows") {
  Network net = build_network(bhrnet_spec(32));
  CostReport r = cost_report(net, 256, 256);
  uint64_t params = 0, macs = 0, bn_params = 0, bn_ops = 0, bucket_sum = 0;
  for (const LayerCost& lc : r.layers) {
    if (lc.kind == "batchnorm") {
      bn_params += lc.params;
      bn_ops += lc.ops;
    } else {
      params += lc.params;
      macs += lc.macs;
    }
  }
  for (const BucketShare& bs : r.buckets) bucket_sum += bs.macs;
  CHECK(params == r.total_params);
  CHECK(macs == r.total_macs);
  CHECK(bn_params == r.total_bn_params);
  CHECK(bn_ops == r.total_bn_ops);
  CHECK(bucket_sum == r.total_macs);
}

TEST_CASE("cost is a pure function of structure, not weights") {
  Network a = build_network(bhrnet_spec(8));
  Network b = build_network(bhrnet_spec(8));
  init_weights(b, 1234);
  CHECK(report_to_json(cost_report(a, 64, 64)) == report_to_json(cost_report(b, 64, 64)));
}

TEST_CASE("MACs scale exactly quadratically with input size") {
  for (const std::string& name : builtin_config_names()) {
    Network net = build_network(resolve_config(name));
    const uint64_t m256 = cost_report(net, 256, 256).total_macs;
    const uint64_t m384 = cost_report(net, 384, 384).total_macs;
    const uint64_t m512 = cost_report(net, 512, 512).total_macs;
    CHECK(4 * m384 == 9 * m256);  // (384/256)^2 = 2.25
    CHECK(m512 == 4 * m256);
  }
}

TEST_CASE("resolution buckets are itemized and ordered") {
  Network net = build_network(bhrnet_spec(32));
  CostReport r = cost_report(net, 256, 256);
  std::vector<std::string> names;
  for (const BucketShare& bs : r.buckets) names.push_back(bs.bucket);
  CHECK(names == std::vector<std::string>{"stem", "1/4", "1/8", "1/16", "1/32", "head"});
  CHECK(bucket_macs(r, "stem") > 0);
  CHECK(bucket_macs(r, "head") > 0);

  bool found = false;
  for (const LayerCost& lc : r.layers) {
    if (lc.name == "stage4.branch3.block4.project.conv") {
      found = true;
      CHECK(lc.bucket == "1/32");
    }
  }
  CHECK(found);
}

TEST_CASE("hrnet concentrates cost at high resolution; bhrnet evens it out") {
  Network hr = build_network(hrnet_spec(32));
  Network bh = build_network(bhrnet_spec(32));
  CostReport rh = cost_report(hr, 256, 256);
  CostReport rb = cost_report(bh, 256, 256);

  const std::vector<std::string> res = {"1/4", "1/8", "1/16", "1/32"};
  std::vector<double> h, b;
  for (const std::string& k : res) {
    h.push_back(static_cast<double>(bucket_macs(rh, k)));
    b.push_back(static_cast<double>(bucket_macs(rb, k)));
  }
  CHECK(h[0] > h[1]);
  CHECK(h[1] > h[2]);
  CHECK(h[2] > h[3]);

  const double h_ratio = *std::max_element(h.begin(), h.end()) /
                         *std::min_element(h.begin(), h.end());
  const double b_ratio = *std::max_element(b.begin(), b.end()) /
                         *std::min_element(b.begin(), b.end());
  CHECK(b_ratio <= 0.5 * h_ratio);
}

TEST_CASE("each added depthwise conv costs the same params and macs") {
  std::vector<uint64_t> params, macs, bn_params;
  for (int d = 1; d <= 4; ++d) {
    NetworkSpec spec = hrnet_spec(32);
    spec.block.num_dw = d;
    Network net = build_network(spec);
    CostReport r = cost_report(net, 256, 256);
    params.push_back(r.total_params);
    macs.push_back(r.total_macs);
    bn_params.push_back(r.total_bn_params);
  }
  for (int i = 0; i < 2; ++i) {
    CHECK(params[i + 2] - params[i + 1] == params[i + 1] - params[i]);
    CHECK(macs[i + 2] - macs[i + 1] == macs[i + 1] - macs[i]);
    CHECK(bn_params[i + 2] - bn_params[i + 1] == bn_params[i + 1] - bn_params[i]);
  }
  CHECK(params[1] > params[0]);
}

TEST_CASE("the second depthwise conv adds at most 5 percent MACs") {
  NetworkSpec dir2 = hrnet_spec(32);
  NetworkSpec ir1 = hrnet_spec(32);
  ir1.block.variant = BlockVariant::IR;
  ir1.block.num_dw = 1;
  const uint64_t m_dir = cost_report(build_network(dir2), 256, 256).total_macs;
  const uint64_t m_ir = cost_report(build_network(ir1), 256, 256).total_macs;
  CHECK(m_dir > m_ir);
  const double overhead = static_cast<double>(m_dir - m_ir) / static_cast<double>(m_ir);
  CHECK(overhead <= 0.05);
}

TEST_CASE("report serializations are well formed") {
  Network net = build_network(bhrnet_spec(8));
  CostReport r = cost_report(net, 64, 64);
  const std::string js = report_to_json(r);
  nlohmann::json parsed = nlohmann::json::parse(js);
  CHECK(parsed["total_macs"].get<uint64_t>() == r.total_macs);
  CHECK(parsed["layers"].size() == r.layers.size());
  CHECK(parsed["flop_convention"].get<std::string>() == r.flop_convention);

  const std::string text = report_to_text(r);
  CHECK(text.find("per-resolution distribution") != std::string::npos);
  CHECK(text.find("gflops") != std::string::npos);
  CHECK(text.find("stage2.branch1.block2.project.conv") != std::string::npos);
}

TEST_CASE("cost_report validates extents") {
  Network net = build_network(bhrnet_spec(8));
  CHECK_THROWS_AS(cost_report(net, 100, 64), std::invalid_argument);
  CHECK_THROWS_AS(cost_report(net, 0, 64), std::invalid_argument);
}
