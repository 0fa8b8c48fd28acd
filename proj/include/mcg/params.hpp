#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mcg/autodiff.hpp"

namespace mcg {

/// Ordered registry of trainable tensors. Order is registration order, which
/// is also checkpoint order.
template <class T>
class ParamSet {
 public:
  Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& [n, _] : entries_) {
      if (n == name) throw ConfigError("duplicate parameter name " + name);
    }
    Var<T> v(std::move(init), true);
    v.node()->op = name;
    entries_.emplace_back(name, v);
    return v;
  }

  const std::vector<std::pair<std::string, Var<T>>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var<T>>>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  /// Order-sensitive FNV-1a over names, shapes and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
      }
    };
    for (const auto& [name, v] : entries_) {
      mix(name.data(), name.size());
      for (std::size_t d : v.shape()) mix(&d, sizeof d);
      mix(v.value().data(), v.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
};

namespace init {

template <class T, class Rng>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> nd(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(nd(rng));
  return t;
}

/// Conv/linear weights with fan-in scaling; shape is [out, in, kh, kw].
template <class T, class Rng>
Tensor<T> conv_weight(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw, Rng& rng, double gain = 1.0) {
  const double fan_in = static_cast<double>(in * kh * kw);
  return normal<T>({out, in, kh, kw}, gain / std::sqrt(fan_in), rng);
}

}  // namespace init

}  // namespace mcg
