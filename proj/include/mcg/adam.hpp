#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mcg/params.hpp"

namespace mcg {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates, one pair per parameter, plus the step count.
template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t t = 0;

  explicit AdamState(const ParamSet<T>& ps) {
    for (const auto& [_, p] : ps.entries()) {
      m.emplace_back(p.shape());
      v.emplace_back(p.shape());
    }
  }
};

/// One bias-corrected Adam update in place. Parameters that received no
/// gradient this step are left untouched (moments included).
template <class T>
void adam_step(ParamSet<T>& ps, AdamState<T>& st, const AdamConfig& cfg) {
  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  auto& entries = ps.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var<T>& p = entries[i].second;
    if (!p.has_grad()) continue;
    const Tensor<T>& g = p.grad();
    Tensor<T>& val = p.mutable_value();
    Tensor<T>& m = st.m[i];
    Tensor<T>& v = st.v[i];
    for (std::size_t k = 0; k < val.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1, vhat = vk / bc2;
      val[k] = static_cast<T>(val[k] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

}  // namespace mcg
