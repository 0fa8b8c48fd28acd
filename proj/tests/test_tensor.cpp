#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gradcheck.hpp"
#include "mcg/checkpoint.hpp"
#include "mcg/ops.hpp"

using namespace mcg;
using mcg::testing::gradcheck;
using mcg::testing::random_tensor;

namespace {

Var<double> leaf(std::vector<double> v, bool grad = true) {
  const std::size_t n = v.size();
  return Var<double>(Tensor<double>({n}, std::move(v)), grad);
}

}  // namespace

TEST(Tensor, ShapeAndDataMustAgree) {
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  Tensor<float> t({2, 3}, 1.5f);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW((void)t.reshaped({4, 2}), ShapeError);
  EXPECT_EQ(t.reshaped({3, 2}).dim(0), 3u);
}

TEST(Elementwise, SpecExamples) {
  auto a = leaf({1, 2}), b = leaf({3, 4});
  EXPECT_EQ(mul(a, b).value().vec(), (std::vector<double>{3, 8}));
  const auto x = leaf({1.5, -2, 7});
  EXPECT_EQ(add(x, Var<double>(Tensor<double>::scalar(0))).value(), x.value());

  backward(sum(mul(a, b)));
  EXPECT_EQ(a.grad().vec(), (std::vector<double>{3, 4}));
  EXPECT_EQ(b.grad().vec(), (std::vector<double>{1, 2}));
}

TEST(Elementwise, MismatchIsBroadcastError) {
  const Var<double> a(Tensor<double>({2, 3})), b(Tensor<double>({4}));
  EXPECT_THROW(add(a, b), BroadcastError);
  EXPECT_THROW(mul(Var<double>(Tensor<double>({3, 2})), Var<double>(Tensor<double>({3}))), BroadcastError);
}

// Every pair of shapes with rank <= 4 and extents <= 4: the broadcast result
// and its adjoints must equal an explicit tiling computation.
TEST(Elementwise, BroadcastMatchesExplicitTilingExhaustive) {
  std::vector<Shape> shapes;
  for (std::size_t r = 1; r <= 4; ++r) {
    Shape s(r, 1);
    while (true) {
      shapes.push_back(s);
      std::size_t d = 0;
      while (d < r && s[d] == 4) s[d++] = 1;
      if (d == r) break;
      ++s[d];
    }
  }
  ASSERT_EQ(shapes.size(), 4u + 16u + 64u + 256u);

  std::mt19937_64 rng(3);
  std::size_t compatible = 0;
  for (const auto& sa : shapes)
    for (const auto& sb : shapes) {
      // Oracle for compatibility.
      const std::size_t R = std::max(sa.size(), sb.size());
      Shape out(R);
      bool ok = true;
      for (std::size_t i = 0; i < R; ++i) {
        const std::size_t ea = i < R - sa.size() ? 1 : sa[i - (R - sa.size())];
        const std::size_t eb = i < R - sb.size() ? 1 : sb[i - (R - sb.size())];
        if (ea != eb && ea != 1 && eb != 1) ok = false;
        out[i] = std::max(ea, eb);
      }
      const Var<double> a(random_tensor(sa, rng), true), b(random_tensor(sb, rng), true);
      if (!ok) {
        EXPECT_THROW(mul(a, b), BroadcastError);
        continue;
      }
      ++compatible;
      // Only every 7th pair runs the (costlier) adjoint check.
      const bool check_grad = compatible % 7 == 0;
      const Var<double> y = mul(a, b);
      ASSERT_EQ(y.shape(), out);
      Tensor<double> ga(sa), gb(sb);
      const std::size_t n = shape_numel(out);
      std::vector<std::size_t> idx(R);
      for (std::size_t k = 0; k < n; ++k) {
        std::size_t rem = k;
        for (std::size_t i = R; i-- > 0;) {
          idx[i] = rem % out[i];
          rem /= out[i];
        }
        auto offset = [&](const Shape& s) {
          std::size_t o = 0;
          for (std::size_t i = 0; i < s.size(); ++i) o = o * s[i] + (s[i] == 1 ? 0 : idx[i + R - s.size()]);
          return o;
        };
        const std::size_t oa = offset(sa), ob = offset(sb);
        ASSERT_EQ(y.value()[k], a.value()[oa] * b.value()[ob]);
        ga[oa] += b.value()[ob];
        gb[ob] += a.value()[oa];
      }
      if (check_grad) {
        backward(sum(y));
        EXPECT_LT(max_rel_diff(a.grad(), ga), 1e-12);
        EXPECT_LT(max_rel_diff(b.grad(), gb), 1e-12);
      }
    }
  EXPECT_GT(compatible, 1000u);
}

TEST(Matmul, SpecExamples) {
  const Var<double> id(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  const Var<double> m(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(matmul(id, m).value().vec(), m.value().vec());
  const Var<double> row(Tensor<double>({1, 2}, {1, 0})), col(Tensor<double>({2, 1}, {2, 5}));
  EXPECT_EQ(matmul(row, col).value().vec(), std::vector<double>{2});
  EXPECT_THROW(matmul(m, Var<double>(Tensor<double>({3, 1}))), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  const auto r = gradcheck([](const auto& v) { return matmul(v[0], v[1]); },
                           {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  EXPECT_LT(r.max_rel_err, 1e-6);
}

TEST(Conv2d, IdentityKernelAndCounting) {
  std::mt19937_64 rng(2);
  const Var<double> x(random_tensor({1, 3, 3}, rng));
  const Var<double> w(Tensor<double>({1, 1, 1, 1}, 1.0));
  EXPECT_EQ(conv2d<double>(x, w, std::nullopt).value(), x.value());

  const Var<double> ones(Tensor<double>({1, 5, 5}, 1.0));
  const Var<double> k(Tensor<double>({1, 1, 3, 3}, 1.0));
  const auto y = conv2d<double>(ones, k, std::nullopt, {1, 1});
  EXPECT_EQ(y.value().at(0, 2, 2), 9.0);
  EXPECT_EQ(y.value().at(0, 0, 0), 4.0);
}

TEST(Conv2d, OutputExtentsAndKernelTooLarge) {
  const Var<double> x(Tensor<double>({2, 7, 6}));
  const auto y = conv2d<double>(x, Var<double>(Tensor<double>({3, 2, 3, 3})), std::nullopt, {2, 1});
  EXPECT_EQ(y.shape(), (Shape{3, 4, 3}));
  EXPECT_THROW(conv2d<double>(Var<double>(Tensor<double>({1, 2, 2})), Var<double>(Tensor<double>({1, 1, 5, 5})),
                              std::nullopt),
               KernelTooLarge);
  EXPECT_THROW(conv2d<double>(x, Var<double>(Tensor<double>({3, 4, 3, 3})), std::nullopt), ShapeError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (std::size_t stride : {1, 2}) {
    const auto r = gradcheck(
        [stride](const auto& v) { return conv2d<double>(v[0], v[1], v[2], {stride, 1}); },
        {random_tensor({2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)});
    EXPECT_LT(r.max_rel_err, 1e-6) << "stride " << stride;
  }
  const auto pw = gradcheck([](const auto& v) { return conv2d<double>(v[0], v[1], std::nullopt); },
                            {random_tensor({3, 4, 5}, rng), random_tensor({2, 3, 1, 1}, rng)});
  EXPECT_LT(pw.max_rel_err, 1e-6);
}

TEST(Backward, SpecExamples) {
  auto x = leaf({0.3, -1, 2});
  backward(sum(x));
  EXPECT_EQ(x.grad().vec(), (std::vector<double>{1, 1, 1}));

  auto y = leaf({1, 2});
  backward(sum(square(y)));
  EXPECT_EQ(y.grad().vec(), (std::vector<double>{2, 4}));
  // Repeated call without reset accumulates.
  backward(sum(square(y)));
  EXPECT_EQ(y.grad().vec(), (std::vector<double>{4, 8}));

  EXPECT_THROW(backward(square(y)), NotScalarError);
}

TEST(Backward, DagEqualsTreeWithDuplicatedInputs) {
  std::mt19937_64 rng(4);
  const auto tx = random_tensor({5}, rng), ty = random_tensor({5}, rng);
  // DAG: s = x*y is shared by both terms; x is also reused.
  Var<double> x(tx, true), y(ty, true);
  const auto s = mul(x, y);
  backward(sum(add(mul(s, s), mul(s, x))));

  // Tree: every use gets its own leaf copy; grads are summed afterwards.
  Var<double> x1(tx, true), x2(tx, true), x3(tx, true), x4(tx, true), y1(ty, true), y2(ty, true), y3(ty, true);
  backward(sum(add(mul(mul(x1, y1), mul(x2, y2)), mul(mul(x3, y3), x4))));
  Tensor<double> gx(tx.shape()), gy(ty.shape());
  for (std::size_t k = 0; k < 5; ++k) {
    gx[k] = x1.grad()[k] + x2.grad()[k] + x3.grad()[k] + x4.grad()[k];
    gy[k] = y1.grad()[k] + y2.grad()[k] + y3.grad()[k];
  }
  EXPECT_LT(max_rel_diff(x.grad(), gx), 1e-14);
  EXPECT_LT(max_rel_diff(y.grad(), gy), 1e-14);
}

TEST(Backward, TapeVisitsEachNodeOnce) {
  auto x = leaf({1, 2, 3});
  Var<double> acc = x;
  for (int i = 0; i < 10; ++i) acc = add(acc, mul(acc, x));  // heavy sharing
  const auto order = tape_order(sum(acc).node());
  std::set<Node<double>*> unique(order.begin(), order.end());
  EXPECT_EQ(unique.size(), order.size());
  EXPECT_EQ(order.size(), 1u + 10u * 2u + 1u);  // sum + (mul, add) per iteration + leaf
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = leaf({1, 2});
  NoGradGuard g;
  const auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(y.node()->inputs.empty());
}

TEST(Ops, EveryAdjointMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  using V = std::vector<Var<double>>;
  struct Case {
    const char* name;
    mcg::testing::Fn f;
    std::vector<Tensor<double>> in;
  };
  const auto pos = [&](Shape s) { return random_tensor(std::move(s), rng, 0.5, 2.0); };
  const std::vector<Case> cases = {
      {"add", [](const V& v) { return add(v[0], v[1]); }, {random_tensor({2, 3}, rng), random_tensor({3}, rng)}},
      {"sub", [](const V& v) { return sub(v[0], v[1]); }, {random_tensor({2, 3}, rng), random_tensor({2, 1}, rng)}},
      {"div", [](const V& v) { return div(v[0], v[1]); }, {random_tensor({2, 3}, rng), pos({3})}},
      {"exp", [](const V& v) { return exp(v[0]); }, {random_tensor({4}, rng)}},
      {"log", [](const V& v) { return log(v[0]); }, {pos({4})}},
      {"sigmoid", [](const V& v) { return sigmoid(v[0]); }, {random_tensor({4}, rng, -3, 3)}},
      {"softplus", [](const V& v) { return softplus(v[0]); }, {random_tensor({4}, rng, -3, 3)}},
      {"silu", [](const V& v) { return silu(v[0]); }, {random_tensor({4}, rng, -3, 3)}},
      {"mean", [](const V& v) { return mean(v[0]); }, {random_tensor({2, 3}, rng)}},
      {"reshape", [](const V& v) { return reshape(v[0], {3, 2}); }, {random_tensor({2, 3}, rng)}},
      {"layer_norm", [](const V& v) { return layer_norm_channels(v[0], v[1], v[2]); },
       {random_tensor({4, 3, 2}, rng), random_tensor({4}, rng), random_tensor({4}, rng)}},
      {"concat", [](const V& v) { return concat_channels<double>({v[0], v[1]}); },
       {random_tensor({2, 2, 3}, rng), random_tensor({1, 2, 3}, rng)}},
      {"slice", [](const V& v) { return slice_channels(v[0], 1, 3); }, {random_tensor({4, 2, 2}, rng)}},
      {"softmax", [](const V& v) { return softmax_channels(v[0]); }, {random_tensor({2, 3, 3}, rng, -2, 2)}},
      {"depthwise", [](const V& v) { return depthwise_conv2d(v[0], v[1], v[2]); },
       {random_tensor({3, 4, 5}, rng), random_tensor({3, 3, 3}, rng), random_tensor({3}, rng)}},
      {"depthwise_1x3", [](const V& v) { return depthwise_conv2d(v[0], v[1], v[2]); },
       {random_tensor({2, 3, 4}, rng), random_tensor({2, 1, 3}, rng), random_tensor({2}, rng)}},
  };
  for (const auto& c : cases) {
    const auto r = gradcheck(c.f, c.in);
    EXPECT_LT(r.max_rel_err, 1e-6) << c.name;
  }
}

TEST(Ops, ValuesStayFinite) {
  const Var<double> big(Tensor<double>({3}, {-800.0, 0.0, 800.0}));
  EXPECT_TRUE(softplus(big).value().all_finite());
  EXPECT_TRUE(sigmoid(big).value().all_finite());
  EXPECT_TRUE(softmax_channels(Var<double>(Tensor<double>({2, 1, 1}, {1000.0, -1000.0}))).value().all_finite());
}

TEST(Checkpoint, RoundTripAndMismatch) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "mcg_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "p.ckpt").string();

  std::mt19937_64 rng(6);
  ParamSet<float> ps;
  ps.add("a.weight", random_tensor({2, 3}, rng).cast<float>());
  ps.add("a.bias", random_tensor({3}, rng).cast<float>());
  save_checkpoint(ps, path);

  std::ifstream in(path, std::ios::binary);
  char magic[6];
  in.read(magic, 6);
  EXPECT_EQ(std::string(magic, 6), std::string("2DMCG\0", 6));

  ParamSet<float> same;
  same.add("a.weight", Tensor<float>({2, 3}));
  same.add("a.bias", Tensor<float>({3}));
  load_checkpoint(same, path);
  EXPECT_EQ(same.checksum(), ps.checksum());

  ParamSet<float> other;
  other.add("a.weight", Tensor<float>({3, 2}));
  other.add("a.bias", Tensor<float>({3}));
  EXPECT_THROW(load_checkpoint(other, path), ConfigError);
  ParamSet<float> fewer;
  fewer.add("a.weight", Tensor<float>({2, 3}));
  EXPECT_THROW(load_checkpoint(fewer, path), ConfigError);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(same, (dir / "junk.ckpt").string()), IoError);
  EXPECT_THROW(load_checkpoint(same, (dir / "missing.ckpt").string()), IoError);
  fs::remove_all(dir);
}

TEST(ParamSet, DuplicateNamesRejected) {
  ParamSet<float> ps;
  ps.add("x", Tensor<float>({1}));
  EXPECT_THROW(ps.add("x", Tensor<float>({1})), ConfigError);
}
