#pragma once

// Finite-difference oracle shared by the unit and acceptance tests.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mcg/ops.hpp"
#include "mcg/params.hpp"

namespace mcg::testing {

using Fn = std::function<Var<double>(const std::vector<Var<double>>&)>;

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.vec()) v = u(rng);
  return t;
}

/// Reduces any output to a scalar through a fixed random projection so that
/// every output element carries a distinct weight.
inline Var<double> project(const Var<double>& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(out, Var<double>(random_tensor(out.shape(), rng))));
}

struct GradCheck {
  double max_rel_err = 0;  // over inputs, ||analytic - numeric|| / ||numeric||
  std::vector<Tensor<double>> analytic;
  std::vector<Tensor<double>> numeric;
};

/// Five-point central difference. Its truncation error is O(h^4); the plain
/// two-point stencil leaves ~1e-5 relative error on blocks whose LayerNorm
/// sees near-constant channels (large third derivative).
inline double central_diff(const std::function<double(double)>& f, double h) {
  return (8 * (f(h) - f(-h)) - (f(2 * h) - f(-2 * h))) / (12 * h);
}

/// Central differences (step h) of project(f(inputs)) against backward().
inline GradCheck gradcheck(const Fn& f, const std::vector<Tensor<double>>& inputs, double h = 1e-5) {
  GradCheck r;
  std::vector<Var<double>> vars;
  for (const auto& t : inputs) vars.emplace_back(t, true);
  backward(project(f(vars)));
  for (const auto& v : vars) r.analytic.push_back(v.has_grad() ? v.grad() : Tensor<double>(v.shape()));

  auto eval = [&](const std::vector<Tensor<double>>& xs) {
    NoGradGuard g;
    std::vector<Var<double>> vs;
    for (const auto& t : xs) vs.emplace_back(t);
    return project(f(vs)).item();
  };
  std::vector<Tensor<double>> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    Tensor<double> num(xs[i].shape());
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      const double orig = xs[i][k];
      num[k] = central_diff([&](double d) {
        xs[i][k] = orig + d;
        return eval(xs);
      }, h);
      xs[i][k] = orig;
    }
    double diff = 0, ref = 0;
    for (std::size_t k = 0; k < num.size(); ++k) {
      diff += (num[k] - r.analytic[i][k]) * (num[k] - r.analytic[i][k]);
      ref += num[k] * num[k];
    }
    const double rel = ref > 0 ? std::sqrt(diff / ref) : std::sqrt(diff);
    r.max_rel_err = std::max(r.max_rel_err, rel);
    r.numeric.push_back(std::move(num));
  }
  return r;
}

/// Same check with respect to every entry of a parameter set; `loss` must
/// rebuild the graph from the current parameter values on each call.
inline double param_gradcheck(ParamSet<double>& ps, const std::function<Var<double>()>& loss, double h = 1e-5) {
  ps.zero_grad();
  backward(loss());
  double diff = 0, ref = 0;
  for (auto& [name, p] : ps.entries()) {
    Tensor<double>& v = p.mutable_value();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double orig = v[k];
      double num;
      {
        NoGradGuard g;
        num = central_diff([&](double d) {
          v[k] = orig + d;
          return loss().item();
        }, h);
      }
      v[k] = orig;
      const double ana = p.has_grad() ? p.grad()[k] : 0.0;
      diff += (num - ana) * (num - ana);
      ref += num * num;
    }
  }
  return ref > 0 ? std::sqrt(diff / ref) : std::sqrt(diff);
}

}  // namespace mcg::testing
