#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "mcg/encoder.hpp"

using namespace mcg;
using mcg::testing::gradcheck;
using mcg::testing::param_gradcheck;
using mcg::testing::project;
using mcg::testing::random_tensor;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.base_channels = 4;
  c.state_dim = 2;
  c.stage_depths = {1, 1, 1, 1};
  return c;
}

}  // namespace

TEST(Stem, ShapeAndDivisibility) {
  std::mt19937_64 rng(1);
  ParamSet<double> ps;
  EncoderConfig cfg;
  Stem<double> stem(ps, cfg, rng);
  const auto f = stem(Var<double>(random_tensor({3, 64, 64}, rng)), TimeTag::T1);
  EXPECT_EQ(f.data.shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(f.stage, 1);
  EXPECT_THROW(stem(Var<double>(Tensor<double>({3, 48, 40})), TimeTag::T1), ShapeError);
  EXPECT_THROW(stem(Var<double>(Tensor<double>({1, 64, 64})), TimeTag::T1), ShapeError);
}

TEST(Stem, ZeroInputZeroOutput) {
  std::mt19937_64 rng(2);
  ParamSet<double> ps;
  Stem<double> stem(ps, EncoderConfig{}, rng);
  const auto y = stem(Var<double>(Tensor<double>({3, 32, 32})), TimeTag::T2).data.value();
  for (auto v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Stem, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  ParamSet<double> ps;
  Stem<double> stem(ps, tiny_config(), rng);
  const auto img = random_tensor({3, 8, 8}, rng);
  const auto r = gradcheck([&](const auto& v) { return stem(v[0], TimeTag::T1, 1).data; }, {img});
  EXPECT_LT(r.max_rel_err, 1e-6);
  EXPECT_LT(param_gradcheck(ps, [&] { return project(stem(Var<double>(img), TimeTag::T1, 1).data); }), 1e-6);
}

TEST(Downsample, HalvesExtentsDoublesChannels) {
  std::mt19937_64 rng(4);
  ParamSet<double> ps;
  Downsample<double> ds(ps, "ds", 3, rng);
  const FeatureMap<double> x{Var<double>(random_tensor({3, 8, 8}, rng)), 1, TimeTag::T1};
  const auto y = ds(x);
  EXPECT_EQ(y.data.shape(), (Shape{6, 4, 4}));
  EXPECT_EQ(y.stage, 2);
  EXPECT_THROW(ds(FeatureMap<double>{Var<double>(Tensor<double>({3, 7, 8})), 1, TimeTag::T1}), ShapeError);
}

TEST(Downsample, SelectorKernelPicksTopLeft) {
  std::mt19937_64 rng(5);
  ParamSet<double> ps;
  Downsample<double> ds(ps, "ds", 1, rng);
  auto& w = ds.conv().weight.mutable_value();  // [2,1,2,2]
  w.fill(0.0);
  w[0] = 1.0;      // out 0 <- (0,0) of each cell
  w[4 + 3] = 1.0;  // out 1 <- (1,1)
  const auto x = random_tensor({1, 6, 6}, rng);
  const auto y = ds(FeatureMap<double>{Var<double>(x), 1, TimeTag::T1}).data.value();
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t n = 0; n < 3; ++n) {
      EXPECT_EQ(y.at(0, m, n), x.at(0, 2 * m, 2 * n));
      EXPECT_EQ(y.at(1, m, n), x.at(0, 2 * m + 1, 2 * n + 1));
    }
}

TEST(Downsample, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  ParamSet<double> ps;
  Downsample<double> ds(ps, "ds", 2, rng);
  const auto x = random_tensor({2, 4, 6}, rng);
  const auto r = gradcheck([&](const auto& v) { return ds(FeatureMap<double>{v[0], 1, TimeTag::T1}).data; }, {x});
  EXPECT_LT(r.max_rel_err, 1e-6);
  EXPECT_LT(param_gradcheck(ps, [&] { return project(ds(FeatureMap<double>{Var<double>(x), 1, TimeTag::T1}).data); }),
            1e-6);
}

TEST(Mamba2dBlock, ShapePreserving) {
  std::mt19937_64 rng(7);
  ParamSet<double> ps;
  Mamba2dBlock<double> block(ps, "blk", 4, tiny_config(), rng);
  const Var<double> x(random_tensor({4, 5, 7}, rng));
  EXPECT_EQ(block(x).shape(), x.shape());
  EXPECT_THROW(block(Var<double>(Tensor<double>({3, 5, 7}))), ShapeError);
}

TEST(Mamba2dBlock, ZeroOutputProjectionIsIdentity) {
  std::mt19937_64 rng(8);
  ParamSet<double> ps;
  Mamba2dBlock<double> block(ps, "blk", 4, tiny_config(), rng);
  block.out_proj().weight.mutable_value().fill(0.0);
  block.out_proj().bias->mutable_value().fill(0.0);
  const Var<double> x(random_tensor({4, 6, 6}, rng));
  EXPECT_EQ(block(x).value(), x.value());
}

TEST(Mamba2dBlock, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(9);
  for (auto dw : {DepthwiseKernel::K3x3, DepthwiseKernel::K1x3}) {
    ParamSet<double> ps;
    auto cfg = tiny_config();
    cfg.dw_kernel = dw;
    Mamba2dBlock<double> block(ps, "blk", 4, cfg, rng);
    const auto x = random_tensor({4, 6, 6}, rng);
    EXPECT_LT(gradcheck([&](const auto& v) { return block(v[0]); }, {x}).max_rel_err, 1e-5);
    EXPECT_LT(param_gradcheck(ps, [&] { return project(block(Var<double>(x))); }), 1e-5);
  }
}

TEST(Mamba2dBlock, GlobalReceptiveField) {
  std::mt19937_64 rng(10);
  ParamSet<double> ps;
  Mamba2dBlock<double> block(ps, "blk", 4, tiny_config(), rng);
  const auto x = random_tensor({4, 4, 4}, rng);
  const auto base = block(Var<double>(x)).value();
  for (std::size_t k = 0; k < 16; ++k) {
    auto xp = x;
    xp[k] += 0.5;  // channel 0, position k
    const auto y = block(Var<double>(xp)).value();
    for (std::size_t q = 0; q < 16; ++q) {
      double d = 0;
      for (std::size_t c = 0; c < 4; ++c) d += std::abs(y[c * 16 + q] - base[c * 16 + q]);
      EXPECT_GT(d, 0.0) << "pixel " << k << " does not reach " << q;
    }
  }
}

TEST(Encoder, StageShapes) {
  std::mt19937_64 rng(11);
  ParamSet<double> ps;
  Encoder<double> enc(ps, EncoderConfig{}, rng);
  const auto f = enc.encode(Var<double>(random_tensor({3, 64, 64}, rng, 0, 1)));
  const std::array<Shape, 4> expect{Shape{16, 16, 16}, Shape{32, 8, 8}, Shape{64, 4, 4}, Shape{128, 2, 2}};
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(f[s].data.shape(), expect[s]);
    EXPECT_EQ(f[s].stage, static_cast<int>(s + 1));
  }
  const auto g = enc.encode(Var<double>(random_tensor({3, 96, 64}, rng, 0, 1)));
  EXPECT_EQ(g[3].data.shape(), (Shape{128, 3, 2}));
}

TEST(Encoder, SiameseSharingAndDeterminism) {
  std::mt19937_64 rng(12);
  ParamSet<double> ps;
  Encoder<double> enc(ps, tiny_config(), rng);
  const auto img = random_tensor({3, 32, 32}, rng, 0, 1);
  const auto a = enc.encode(Var<double>(img), TimeTag::T1);
  const auto b = enc.encode(Var<double>(img), TimeTag::T2);
  for (std::size_t s = 0; s < 4; ++s) {
    EXPECT_EQ(a[s].data.value(), b[s].data.value());
    EXPECT_EQ(a[s].tag, TimeTag::T1);
    EXPECT_EQ(b[s].tag, TimeTag::T2);
  }
  // Both passes feed the same leaves: gradients from T1 and T2 add up.
  const auto n_params = ps.size();
  ps.zero_grad();
  backward(add(sum(enc.encode(Var<double>(img), TimeTag::T1)[3].data), sum(enc.encode(Var<double>(img), TimeTag::T2)[3].data)));
  const auto both = ps.entries()[0].second.grad();
  ps.zero_grad();
  backward(sum(enc.encode(Var<double>(img), TimeTag::T1)[3].data));
  const auto one = ps.entries()[0].second.grad();
  for (std::size_t k = 0; k < one.size(); ++k) EXPECT_NEAR(both[k], 2 * one[k], 1e-12 * (1 + std::abs(one[k])));
  EXPECT_EQ(ps.size(), n_params);
}

TEST(Encoder, ConfigValidation) {
  EncoderConfig c;
  c.stage_depths = {1, 0, 1, 1};
  EXPECT_THROW(c.validate(), ConfigError);
  c = EncoderConfig{};
  c.conv_kernel = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Encoder, FlatScanAblationDiffersOnTwoDimensionalMaps) {
  std::mt19937_64 rng(13);
  ParamSet<double> ps;
  Mamba2dBlock<double> block(ps, "blk", 4, tiny_config(), rng);
  const Var<double> x(random_tensor({4, 4, 4}, rng));
  const auto two_d = block(x).value();
  block.set_use_2ds(false);
  EXPECT_GT(max_rel_diff(block(x).value(), two_d), 1e-6);
}
