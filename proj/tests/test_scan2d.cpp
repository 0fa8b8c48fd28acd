#include <gtest/gtest.h>

#include <random>

#include "gradcheck.hpp"
#include "mcg/scan1d.hpp"
#include "mcg/scan2d.hpp"

using namespace mcg;
using namespace mcg::scan2d;
using mcg::testing::random_tensor;

namespace {

Tensor<double> plane(const Tensor<double>& t, std::size_t d) {
  const std::size_t H = t.dim(1), W = t.dim(2);
  Tensor<double> p({H, W});
  std::copy(t.data() + d * H * W, t.data() + (d + 1) * H * W, p.data());
  return p;
}

Scan2dResult<double> run_single(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t H = a.dim(0), W = a.dim(1);
  return scan2d_forward(a.reshaped({1, H, W}), b.reshaped({1, H, W}), Tensor<double>({1, H, W}, 1.0));
}

}  // namespace

TEST(Scan2d, SingleRowEqualsOneDimensionalScan) {
  std::mt19937_64 rng(1);
  const auto a = random_tensor({1, 1, 11}, rng, 0.1, 0.95), b = random_tensor({1, 1, 11}, rng);
  const auto r = scan2d_forward(a, b, Tensor<double>({1, 1, 11}, 1.0));
  Tensor<double> h({11});
  scan1d::scan_strided(a.data(), b.data(), h.data(), 11, 1);
  for (std::size_t j = 0; j < 11; ++j) EXPECT_EQ(r.h[j], h[j]);
}

TEST(Scan2d, TwoByTwoUnrolledByHand) {
  const double a = 0.7;
  const Tensor<double> av({2, 2}, a), bv({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const auto r = run_single(av, bv);
  EXPECT_NEAR(r.h[3], a * a * 1.0 + a * 2.0 + a * 3.0 + 4.0, 1e-15);
  EXPECT_EQ(r.h[0], 1.0);
}

TEST(Scan2d, UnitTransitionGivesPrefixSums) {
  std::mt19937_64 rng(2);
  const auto b = random_tensor({5, 6}, rng);
  const auto r = run_single(Tensor<double>({5, 6}, 1.0), b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double s = 0;
      for (std::size_t ip = 0; ip <= i; ++ip)
        for (std::size_t jp = 0; jp <= j; ++jp) s += b.at(ip, jp);
      EXPECT_NEAR(r.h[i * 6 + j], s, 1e-13);
    }
}

TEST(Scan2dOracle, ConstantTransitionIsManhattanDecay) {
  const std::size_t H = 4, W = 5;
  const double a = 0.8;
  for (std::size_t ip = 0; ip < H; ++ip)
    for (std::size_t jp = 0; jp < W; ++jp) {
      Tensor<double> b({H, W});
      b.at(ip, jp) = 1.0;
      const auto h = scan2d_oracle(Tensor<double>({H, W}, a), b);
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double expect = (i >= ip && j >= jp) ? std::pow(a, double(i - ip + j - jp)) : 0.0;
          EXPECT_NEAR(h.at(i, j), expect, 1e-15);
        }
    }
}

TEST(Scan2dOracle, OriginIgnoresTransitions) {
  std::mt19937_64 rng(3);
  const auto a = random_tensor({3, 3}, rng, 0, 5), b = random_tensor({3, 3}, rng);
  EXPECT_EQ(scan2d_oracle(a, b).at(0, 0), b.at(0, 0));
}

TEST(Scan2dOracle, MatchesTwoPassOnVaryingTransitions) {
  std::mt19937_64 rng(4);
  const auto a = random_tensor({5, 7}, rng, 0.05, 0.99), b = random_tensor({5, 7}, rng);
  EXPECT_LT(max_rel_diff(run_single(a, b).h.reshaped({5, 7}), scan2d_oracle(a, b)), 1e-12);
}

TEST(Scan2dOracle, SizeGuard) {
  EXPECT_THROW(scan2d_oracle(Tensor<double>({33, 32}), Tensor<double>({33, 32})), ShapeError);
  EXPECT_NO_THROW(scan2d_oracle(Tensor<double>({32, 32}), Tensor<double>({32, 32})));
}

TEST(Scan2d, ExtentMismatchIsShapeError) {
  EXPECT_THROW(scan2d_forward(Tensor<double>({1, 2, 3}), Tensor<double>({1, 3, 2}), Tensor<double>({1, 2, 3})),
               ShapeError);
  EXPECT_THROW(scan2d_forward(Tensor<double>({1, 2, 3}), Tensor<double>({1, 2, 3}), Tensor<double>({2, 2, 3})),
               ShapeError);
}

TEST(Scan2d, ForwardIntoReusesDirtyBuffers) {
  std::mt19937_64 rng(12);
  const auto a = random_tensor({3, 6, 7}, rng, 0.1, 0.95), b = random_tensor({3, 6, 7}, rng), c = random_tensor({3, 6, 7}, rng);
  const auto fresh = scan2d_forward(a, b, c);
  Scan2dResult<double> r{Tensor<double>({6, 7}, 9.0), Tensor<double>({3, 6, 7}, -9.0), Tensor<double>({3, 6, 7}, 9.0)};
  for (int rep = 0; rep < 2; ++rep) {
    scan2d_forward_into(a, b, c, r);
    EXPECT_EQ(r.y.vec(), fresh.y.vec());
    EXPECT_EQ(r.hhor.vec(), fresh.hhor.vec());
    EXPECT_EQ(r.h.vec(), fresh.h.vec());
  }
  Scan2dResult<double> bad{Tensor<double>({7, 6}), Tensor<double>({3, 6, 7}), Tensor<double>({3, 6, 7})};
  EXPECT_THROW(scan2d_forward_into(a, b, c, bad), ShapeError);
}

TEST(Scan2d, ForwardMatchesBlockPlaneKernel) {
  std::mt19937_64 rng(13);
  const auto a = random_tensor({2, 9, 5}, rng, 0.1, 0.95), b = random_tensor({2, 9, 5}, rng);
  const auto r = scan2d_forward(a, b, Tensor<double>({2, 9, 5}, 1.0));
  Tensor<double> hh({2, 9, 5}), h({2, 9, 5});
  for (std::size_t d = 0; d < 2; ++d)
    plane_forward(a.data() + d * 45, b.data() + d * 45, hh.data() + d * 45, h.data() + d * 45, 9, 5, Orientation{},
                  ScanMode::TwoD);
  EXPECT_EQ(r.hhor.vec(), hh.vec());
  EXPECT_EQ(r.h.vec(), h.vec());
}

TEST(Scan2d, OutputAggregatesStates) {
  std::mt19937_64 rng(5);
  const auto a = random_tensor({3, 4, 5}, rng, 0.1, 0.9), b = random_tensor({3, 4, 5}, rng), c = random_tensor({3, 4, 5}, rng);
  const auto r = scan2d_forward(a, b, c);
  for (std::size_t k = 0; k < 20; ++k) {
    double y = 0;
    for (std::size_t d = 0; d < 3; ++d) y += c[d * 20 + k] * scan2d_oracle(plane(a, d), plane(b, d))[k];
    EXPECT_NEAR(r.y[k], y, 1e-13);
  }
}

TEST(Scan2d, ParallelMatchesSequential) {
  std::mt19937_64 rng(6);
  for (auto [H, W] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 100}, {17, 9}, {64, 64}}) {
    const auto a = random_tensor({2, H, W}, rng, 0.1, 0.99), b = random_tensor({2, H, W}, rng),
               c = random_tensor({2, H, W}, rng);
    const auto s = scan2d_forward(a, b, c);
    for (std::size_t threads : {1, 3}) {
      const auto p = scan2d_forward_parallel(a, b, c, threads, 8);
      EXPECT_LT(max_rel_diff(p.h, s.h), 1e-12);
      EXPECT_LT(max_rel_diff(p.y, s.y), 1e-12);
    }
  }
}

TEST(Scan2d, LinearInInput) {
  std::mt19937_64 rng(7);
  const auto a = random_tensor({2, 6, 5}, rng, 0.1, 0.99), c = random_tensor({2, 6, 5}, rng);
  const auto x1 = random_tensor({2, 6, 5}, rng), x2 = random_tensor({2, 6, 5}, rng);
  const double al = 0.7, be = -1.3;
  Tensor<double> mix(x1.shape());
  for (std::size_t k = 0; k < mix.size(); ++k) mix[k] = al * x1[k] + be * x2[k];
  const auto y1 = scan2d_forward(a, x1, c).y, y2 = scan2d_forward(a, x2, c).y, ym = scan2d_forward(a, mix, c).y;
  for (std::size_t k = 0; k < ym.size(); ++k) EXPECT_NEAR(ym[k], al * y1[k] + be * y2[k], 1e-12);
}

TEST(Scan2d, CausalUpperLeftReceptiveField) {
  std::mt19937_64 rng(8);
  const std::size_t H = 6, W = 6;
  const auto a = random_tensor({1, H, W}, rng, 0.1, 0.99), b = random_tensor({1, H, W}, rng), c = random_tensor({1, H, W}, rng);
  const auto base = scan2d_forward(a, b, c).y;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      auto bp = b, ap = a;
      bp[i * W + j] += 1.0;
      ap[i * W + j] *= 0.5;
      const auto yb = scan2d_forward(a, bp, c).y, ya = scan2d_forward(ap, b, c).y;
      for (std::size_t ii = 0; ii < H; ++ii)
        for (std::size_t jj = 0; jj < W; ++jj) {
          const bool reachable = ii >= i && jj >= j;
          if (!reachable) {
            EXPECT_EQ(yb[ii * W + jj], base[ii * W + jj]);
            EXPECT_EQ(ya[ii * W + jj], base[ii * W + jj]);
          } else {
            EXPECT_NE(yb[ii * W + jj], base[ii * W + jj]);
          }
        }
    }
}

TEST(Scan2dBackward, SingleRowEqualsOneDimensionalAdjoint) {
  std::mt19937_64 rng(9);
  const std::size_t L = 8;
  const auto a = random_tensor({1, 1, L}, rng, 0.1, 0.99), b = random_tensor({1, 1, L}, rng), gy = random_tensor({1, L}, rng);
  const Tensor<double> c({1, 1, L}, 1.0);
  const auto saved = scan2d_forward(a, b, c);
  const auto g = scan2d_backward(gy, a, c, saved);
  Tensor<double> ga({L}), gb({L});
  scan1d::scan_strided_backward(a.data(), saved.h.data(), gy.data(), ga.data(), gb.data(), L, 1);
  EXPECT_LT(max_rel_diff(g.a_bar.reshaped({L}), ga), 1e-14);
  EXPECT_LT(max_rel_diff(g.bx.reshaped({L}), gb), 1e-14);
}

TEST(Scan2dBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t N = 1 + rep % 3, H = 2 + rep % 4, W = 2 + (rep / 2) % 4;
    const auto a = random_tensor({N, H, W}, rng, 0.1, 0.99), b = random_tensor({N, H, W}, rng),
               c = random_tensor({N, H, W}, rng), gy = random_tensor({H, W}, rng);
    const auto g = scan2d_backward(gy, a, c, scan2d_forward(a, b, c));
    auto loss = [&](const Tensor<double>& aa, const Tensor<double>& bb, const Tensor<double>& cc) {
      const auto y = scan2d_forward(aa, bb, cc).y;
      double s = 0;
      for (std::size_t k = 0; k < y.size(); ++k) s += gy[k] * y[k];
      return s;
    };
    const double eps = 1e-5;
    Tensor<double> na(a.shape()), nb(b.shape()), nc(c.shape());
    for (std::size_t k = 0; k < a.size(); ++k) {
      auto p = a, m = a;
      p[k] += eps, m[k] -= eps;
      na[k] = (loss(p, b, c) - loss(m, b, c)) / (2 * eps);
      p = b, m = b;
      p[k] += eps, m[k] -= eps;
      nb[k] = (loss(a, p, c) - loss(a, m, c)) / (2 * eps);
      p = c, m = c;
      p[k] += eps, m[k] -= eps;
      nc[k] = (loss(a, b, p) - loss(a, b, m)) / (2 * eps);
    }
    EXPECT_LT(max_rel_diff(g.a_bar, na, 1e-7), 1e-6);
    EXPECT_LT(max_rel_diff(g.bx, nb, 1e-7), 1e-6);
    EXPECT_LT(max_rel_diff(g.c, nc, 1e-7), 1e-6);
  }
}

TEST(Scan2dBackward, ZeroTransitionsDoNotPropagate) {
  std::mt19937_64 rng(11);
  const std::size_t H = 4, W = 4;
  const Tensor<double> a({1, H, W}, 0.0), c({1, H, W}, 1.0);
  const auto b = random_tensor({1, H, W}, rng);
  for (std::size_t k = 0; k < H * W; ++k) {
    Tensor<double> gy({H, W});
    gy[k] = 1.0;  // d y_k / d b
    const auto g = scan2d_backward(gy, a, c, scan2d_forward(a, b, c));
    for (std::size_t q = 0; q < H * W; ++q) EXPECT_EQ(g.bx[q], q == k ? 1.0 : 0.0);
  }
}

TEST(SelectiveScan, FourWayGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t D = 2, N = 2, H = 2 + rep % 3, W = 2 + (rep / 3) % 3;
    const auto mode = rep % 2 ? ScanMode::Flat1D : ScanMode::TwoD;
    const auto r = mcg::testing::gradcheck(
        [mode](const auto& v) { return selective_scan(v[0], softplus(v[1]), v[2], v[3], v[4], {mode, true}); },
        {random_tensor({D, H, W}, rng), random_tensor({D, H, W}, rng, -2, 0), random_tensor({D, N}, rng, -0.5, 0.5),
         random_tensor({N, H, W}, rng), random_tensor({N, H, W}, rng)});
    EXPECT_LT(r.max_rel_err, 1e-6) << "rep " << rep;
  }
}

TEST(SelectiveScan, FourWayReachesEveryPosition) {
  std::mt19937_64 rng(13);
  const std::size_t H = 4, W = 4;
  const auto x = random_tensor({1, H, W}, rng), dl = random_tensor({1, H, W}, rng, 0.2, 0.5);
  const auto la = random_tensor({1, 2}, rng, -1, 0), b = random_tensor({2, H, W}, rng), c = random_tensor({2, H, W}, rng);
  const auto base = selective_scan(Var<double>(x), Var<double>(dl), Var<double>(la), Var<double>(b), Var<double>(c)).value();
  for (std::size_t k = 0; k < H * W; ++k) {
    auto xp = x;
    xp[k] += 1.0;
    const auto y = selective_scan(Var<double>(xp), Var<double>(dl), Var<double>(la), Var<double>(b), Var<double>(c)).value();
    for (std::size_t q = 0; q < H * W; ++q) EXPECT_NE(y[q], base[q]);
  }
}

TEST(SelectiveScan, ShapeChecks) {
  const Var<double> x(Tensor<double>({2, 3, 3})), la(Tensor<double>({2, 4})), bc(Tensor<double>({4, 3, 3}));
  EXPECT_THROW(selective_scan(x, Var<double>(Tensor<double>({2, 3, 2})), la, bc, bc), ShapeError);
  EXPECT_THROW(selective_scan(x, x, Var<double>(Tensor<double>({3, 4})), bc, bc), ShapeError);
  EXPECT_THROW(selective_scan(x, x, la, Var<double>(Tensor<double>({4, 3, 2})), bc), ShapeError);
}
