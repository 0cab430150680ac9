#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <random>

#include "bhrnet/blocks.hpp"
#include "oracles.hpp"

using namespace bhrnet;

namespace {

void fill_random(ConvParams& p, std::mt19937& rng) {
  std::uniform_real_distribution<float> d(-0.5f, 0.5f);
  for (float& v : p.weights.data) v = d(rng);
  for (float& v : p.bias) v = d(rng);
}

void fill_random(ConvBn& cb, std::mt19937& rng) {
  fill_random(cb.conv, rng);
  std::uniform_real_distribution<float> d(-0.5f, 0.5f);
  std::uniform_real_distribution<float> dv(0.5f, 2.0f);
  for (size_t c = 0; c < cb.bn.mean.size(); ++c) {
    cb.bn.mean[c] = d(rng);
    cb.bn.var[c] = dv(rng);
    cb.bn.scale[c] = 1.0f + d(rng);
    cb.bn.shift[c] = d(rng);
  }
}

void fill_random(BlockWeights& w, std::mt19937& rng) {
  fill_random(w.expand, rng);
  for (ConvBn& dw : w.dw) fill_random(dw, rng);
  fill_random(w.project, rng);
}

// Depthwise conv that forwards its input untouched: center tap 1, exact
// identity BN (eps 0 so the 1/sqrt(var+eps) factor is exactly 1).
void make_identity_dw(ConvBn& dw) {
  for (float& v : dw.conv.weights.data) v = 0.0f;
  for (int64_t c = 0; c < dw.conv.weights.shape[0]; ++c) {
    dw.conv.weights.at(c, 0, 1, 1) = 1.0f;
  }
  dw.bn = BatchNormParams::identity(dw.conv.weights.shape[0], 0.0f);
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

BlockSpec spec_of(BlockVariant v, int64_t in, int64_t out, int stride, int num_dw) {
  BlockSpec s;
  s.variant = v;
  s.in_channels = in;
  s.out_channels = out;
  s.stride = stride;
  s.num_dw = num_dw;
  return s;
}

}  // namespace

TEST_CASE("BlockSpec validation rejects inconsistent variants") {
  CHECK_THROWS_AS(spec_of(BlockVariant::IR, 4, 4, 1, 2).validate(), std::invalid_argument);
  CHECK_THROWS_AS(spec_of(BlockVariant::IR_SC, 4, 4, 1, 3).validate(), std::invalid_argument);
  CHECK_THROWS_AS(spec_of(BlockVariant::DIR, 4, 4, 1, 5).validate(), std::invalid_argument);
  CHECK_THROWS_AS(spec_of(BlockVariant::DIR, 0, 4, 1, 2).validate(), std::invalid_argument);
  CHECK_NOTHROW(spec_of(BlockVariant::DIR, 4, 4, 1, 4).validate());
  CHECK_NOTHROW(spec_of(BlockVariant::IR, 4, 8, 2, 1).validate());
}

TEST_CASE("zero conv weights leave only the outer shortcut") {
  std::mt19937 rng(5);
  BlockWeights w = make_block_weights(spec_of(BlockVariant::DIR, 6, 6, 1, 2));
  Tensor in = oracle::random_tensor(rng, 1, 6, 8, 8);
  Tensor out = block_forward(w, in);
  CHECK(bit_equal(out, in));
}

TEST_CASE("block_forward equals an explicit composition of primitives") {
  std::mt19937 rng(9);
  for (BlockVariant v : {BlockVariant::IR, BlockVariant::IR_DW, BlockVariant::IR_SC,
                         BlockVariant::DIR}) {
    const int num_dw = (v == BlockVariant::IR_DW || v == BlockVariant::DIR) ? 2 : 1;
    BlockSpec s = spec_of(v, 4, 4, 1, num_dw);
    BlockWeights w = make_block_weights(s);
    fill_random(w, rng);
    Tensor in = oracle::random_tensor(rng, 1, 4, 6, 6);

    Tensor t = relu(batchnorm_infer(conv2d(in, w.expand.conv), w.expand.bn));
    Tensor u = t;
    for (const ConvBn& dw : w.dw) {
      u = relu(batchnorm_infer(depthwise_conv2d(u, dw.conv), dw.bn));
    }
    if (v == BlockVariant::IR_SC || v == BlockVariant::DIR) u = add(u, t);
    Tensor y = batchnorm_infer(conv2d(u, w.project.conv), w.project.bn);
    y = add(y, in);  // stride 1, in == out

    CHECK(bit_equal(block_forward(w, in), y));
  }
}

TEST_CASE("variant lattice collapses when the extra parts are disabled") {
  std::mt19937 rng(15);
  Tensor in = oracle::random_tensor(rng, 1, 5, 7, 7);

  // IR+DW with a single depthwise conv is IR.
  BlockWeights ir = make_block_weights(spec_of(BlockVariant::IR, 5, 5, 1, 1));
  fill_random(ir, rng);
  BlockWeights irdw = ir;
  irdw.spec.variant = BlockVariant::IR_DW;
  CHECK(bit_equal(block_forward(ir, in), block_forward(irdw, in)));

  // DIR with a single depthwise conv is IR+SC.
  BlockWeights irsc = ir;
  irsc.spec.variant = BlockVariant::IR_SC;
  BlockWeights dir1 = ir;
  dir1.spec.variant = BlockVariant::DIR;
  CHECK(bit_equal(block_forward(irsc, in), block_forward(dir1, in)));

  // An identity second depthwise conv changes nothing: the chain output is
  // already non-negative, so the extra ReLU is a no-op.
  for (BlockVariant v : {BlockVariant::IR_DW, BlockVariant::DIR}) {
    BlockWeights two = make_block_weights(spec_of(v, 5, 5, 1, 2));
    fill_random(two, rng);
    make_identity_dw(two.dw[1]);
    BlockWeights one = make_block_weights(spec_of(v, 5, 5, 1, 1));
    one.expand = two.expand;
    one.dw[0] = two.dw[0];
    one.project = two.project;
    if (v == BlockVariant::IR_DW) {
      one.spec.variant = BlockVariant::IR;
      two.spec.num_dw = 2;
    } else {
      one.spec.variant = BlockVariant::IR_SC;
    }
    one.spec.num_dw = 1;
    CHECK(bit_equal(block_forward(one, in), block_forward(two, in)));
  }
}

TEST_CASE("inner shortcut changes the result when active") {
  std::mt19937 rng(21);
  BlockWeights sc = make_block_weights(spec_of(BlockVariant::IR_SC, 4, 4, 1, 1));
  fill_random(sc, rng);
  BlockWeights plain = sc;
  plain.spec.variant = BlockVariant::IR;
  Tensor in = oracle::random_tensor(rng, 1, 4, 6, 6);
  CHECK_FALSE(bit_equal(block_forward(sc, in), block_forward(plain, in)));
}

TEST_CASE("strided blocks halve spatial extents and drop both shortcuts") {
  std::mt19937 rng(27);
  BlockWeights w = make_block_weights(spec_of(BlockVariant::DIR, 4, 8, 2, 2));
  fill_random(w, rng);
  Tensor in = oracle::random_tensor(rng, 1, 4, 8, 8);
  Tensor out = block_forward(w, in);
  CHECK(out.shape == std::array<int64_t, 4>{1, 8, 4, 4});
}

TEST_CASE("shortcuts change no shapes") {
  std::mt19937 rng(33);
  for (BlockVariant v : {BlockVariant::IR, BlockVariant::DIR}) {
    BlockWeights w = make_block_weights(
        spec_of(v, 6, 6, 1, v == BlockVariant::DIR ? 3 : 1));
    fill_random(w, rng);
    Tensor in = oracle::random_tensor(rng, 2, 6, 5, 9);
    CHECK(block_forward(w, in).same_shape(in));
  }
}

TEST_CASE("block_forward rejects channel mismatches") {
  BlockWeights w = make_block_weights(spec_of(BlockVariant::DIR, 4, 4, 1, 2));
  Tensor in(1, 3, 6, 6, 0.0f);
  CHECK_THROWS_AS(block_forward(w, in), std::invalid_argument);
}

namespace {

FusePath identity_path() { return FusePath{}; }

FusePath down_path(std::mt19937& rng, int64_t in_ch, int64_t out_ch, int steps,
                   bool zero = false) {
  FusePath p;
  for (int t = 0; t < steps; ++t) {
    const bool last = (t == steps - 1);
    ConvBn cb;
    cb.conv.weights = Tensor(last ? out_ch : in_ch, in_ch, 3, 3, 0.0f);
    cb.conv.stride_h = cb.conv.stride_w = 2;
    cb.conv.pad_h = cb.conv.pad_w = 1;
    cb.bn = BatchNormParams::identity(last ? out_ch : in_ch);
    if (!zero) fill_random(cb, rng);
    p.convs.push_back(std::move(cb));
    p.relu_after.push_back(!last);
  }
  return p;
}

FusePath up_path(std::mt19937& rng, int64_t in_ch, int64_t out_ch, int factor,
                 bool zero = false) {
  FusePath p;
  ConvBn cb;
  cb.conv.weights = Tensor(out_ch, in_ch, 1, 1, 0.0f);
  cb.bn = BatchNormParams::identity(out_ch);
  if (!zero) fill_random(cb, rng);
  p.convs.push_back(std::move(cb));
  p.relu_after.push_back(false);
  p.up_factor = factor;
  return p;
}

}  // namespace

TEST_CASE("fuse_exchange with one branch is the activated identity") {
  std::mt19937 rng(39);
  FuseUnit unit;
  unit.num_inputs = unit.num_outputs = 1;
  unit.paths = {{identity_path()}};
  Tensor in = oracle::random_tensor(rng, 1, 4, 6, 6);
  auto out = fuse_exchange(unit, {in});
  REQUIRE(out.size() == 1);
  CHECK(bit_equal(out[0], relu(in)));
}

TEST_CASE("fuse_exchange with zero cross weights keeps each branch") {
  std::mt19937 rng(45);
  FuseUnit unit;
  unit.num_inputs = unit.num_outputs = 2;
  unit.paths.resize(2);
  unit.paths[0] = {identity_path(), up_path(rng, 8, 4, 2, /*zero=*/true)};
  unit.paths[1] = {down_path(rng, 4, 8, 1, /*zero=*/true), identity_path()};
  Tensor a = oracle::random_tensor(rng, 1, 4, 8, 8);
  Tensor b = oracle::random_tensor(rng, 1, 8, 4, 4);
  auto out = fuse_exchange(unit, {a, b});
  REQUIRE(out.size() == 2);
  CHECK(bit_equal(out[0], relu(a)));
  CHECK(bit_equal(out[1], relu(b)));
}

TEST_CASE("fuse_exchange equals a manual two-branch composition") {
  std::mt19937 rng(51);
  FuseUnit unit;
  unit.num_inputs = unit.num_outputs = 2;
  unit.paths.resize(2);
  unit.paths[0] = {identity_path(), up_path(rng, 8, 4, 2)};
  unit.paths[1] = {down_path(rng, 4, 8, 1), identity_path()};
  Tensor a = oracle::random_tensor(rng, 1, 4, 8, 8);
  Tensor b = oracle::random_tensor(rng, 1, 8, 4, 4);
  auto out = fuse_exchange(unit, {a, b});

  const ConvBn& up = unit.paths[0][1].convs[0];
  Tensor want0 = relu(add(a, upsample_nearest(batchnorm_infer(conv2d(b, up.conv), up.bn), 2)));
  const ConvBn& down = unit.paths[1][0].convs[0];
  Tensor want1 = relu(add(batchnorm_infer(conv2d(a, down.conv), down.bn), b));
  CHECK(bit_equal(out[0], want0));
  CHECK(bit_equal(out[1], want1));
}

TEST_CASE("fuse_exchange rejects a broken resolution chain") {
  std::mt19937 rng(57);
  FuseUnit unit;
  unit.num_inputs = unit.num_outputs = 2;
  unit.paths.resize(2);
  unit.paths[0] = {identity_path(), up_path(rng, 8, 4, 2)};
  unit.paths[1] = {down_path(rng, 4, 8, 1), identity_path()};
  Tensor a = oracle::random_tensor(rng, 1, 4, 8, 8);
  Tensor bad = oracle::random_tensor(rng, 1, 8, 3, 3);
  CHECK_THROWS_AS(fuse_exchange(unit, {a, bad}), std::invalid_argument);
}

TEST_CASE("single-conv head emits split channels at the input resolution") {
  std::mt19937 rng(63);
  HeadSpec spec;
  spec.kind = HeadKind::SingleConv;
  spec.num_keypoints = 17;
  HeadWeights w = make_head_weights(spec, 32);
  fill_random(*w.single, rng);
  Tensor in = oracle::random_tensor(rng, 1, 32, 64, 64);
  auto [heat, tag] = head_forward(w, in);
  CHECK(heat.shape == std::array<int64_t, 4>{1, 17, 64, 64});
  CHECK(tag.shape == std::array<int64_t, 4>{1, 17, 64, 64});

  // The split must take channels [0, K) and [K, 2K) in order.
  Tensor full = conv2d(in, *w.single);
  for (int64_t c = 0; c < 17; ++c) {
    CHECK(heat.at(0, c, 10, 10) == full.at(0, c, 10, 10));
    CHECK(tag.at(0, c, 10, 10) == full.at(0, 17 + c, 10, 10));
  }
}

TEST_CASE("higher head doubles spatial extents") {
  std::mt19937 rng(69);
  HeadSpec spec;
  spec.kind = HeadKind::Higher;
  spec.num_keypoints = 3;
  HeadWeights w = make_head_weights(spec, 8);
  fill_random(w.deconv->conv, rng);
  for (ResidualUnit& r : w.res) {
    fill_random(r.conv1, rng);
    fill_random(r.conv2, rng);
  }
  Tensor in = oracle::random_tensor(rng, 1, 8, 16, 16);
  auto [heat, tag] = head_forward(w, in);
  CHECK(heat.shape == std::array<int64_t, 4>{1, 3, 32, 32});
  CHECK(tag.shape == std::array<int64_t, 4>{1, 3, 32, 32});
}

TEST_CASE("zero-weight heads produce all-zero maps") {
  std::mt19937 rng(75);
  Tensor in = oracle::random_tensor(rng, 1, 8, 16, 16);
  for (HeadKind kind : {HeadKind::SingleConv, HeadKind::Higher}) {
    HeadSpec spec;
    spec.kind = kind;
    spec.num_keypoints = 4;
    HeadWeights w = make_head_weights(spec, 8);
    auto [heat, tag] = head_forward(w, in);
    for (float v : heat.data) CHECK(v == 0.0f);
    for (float v : tag.data) CHECK(v == 0.0f);
  }
}
