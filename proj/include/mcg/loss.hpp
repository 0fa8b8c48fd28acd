#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mcg/autodiff.hpp"

namespace mcg {

struct LossWeights {
  double ce = 1.0;
  double dice = 1.0;
};

/// Components of the most recent loss evaluation (for logging).
struct LossParts {
  double ce = 0;
  double dice = 0;
  double total = 0;
};

/// Cross-entropy plus soft dice on a two-class probability map.
///   ce   = mean_i -log p[y_i, i]
///   dice = 1 - (2 Σ p1·y + eps) / (Σ p1 + Σ y + eps),  eps = 1
/// probs: [2,H,W] (channel 1 = change), label: H·W values in {0,1}.
template <class T>
Var<T> ce_dice_loss(const Var<T>& probs, std::span<const std::uint8_t> label, LossWeights w = {},
                    LossParts* parts = nullptr) {
  if (probs.shape().size() != 3 || probs.dim(0) != 2) throw ShapeError("loss expects probs[2,H,W]");
  const std::size_t P = probs.dim(1) * probs.dim(2);
  if (label.size() != P) throw ShapeError("loss: label extent mismatch");
  for (auto v : label)
    if (v > 1) throw LabelError("label values must be 0 or 1");
  if (w.ce < 0 || w.dice < 0 || (w.ce == 0 && w.dice == 0)) throw ConfigError("loss weights must be >= 0 and not both zero");

  constexpr T kEps{1};
  const T floor = std::numeric_limits<T>::min() * T(1e6);  // keeps log finite
  const T* p = probs.value().data();
  T ce{0}, spy{0}, sp{0}, sy{0};
  for (std::size_t i = 0; i < P; ++i) {
    const T pt = std::max(p[label[i] * P + i], floor);
    ce -= std::log(pt);
    spy += p[P + i] * label[i];
    sp += p[P + i];
    sy += label[i];
  }
  ce /= static_cast<T>(P);
  const T num = T{2} * spy + kEps, den = sp + sy + kEps;
  const T dice = T{1} - num / den;
  const T wce = static_cast<T>(w.ce), wd = static_cast<T>(w.dice);
  const T total = wce * ce + wd * dice;
  if (parts) *parts = {static_cast<double>(ce), static_cast<double>(dice), static_cast<double>(total)};

  std::vector<std::uint8_t> lab(label.begin(), label.end());
  Node<T>* np = probs.node().get();
  Tensor<T> ps = probs.value();
  return make_op<T>("ce_dice_loss", Tensor<T>::scalar(total), {probs}, [=](const Tensor<T>& g) {
    accumulate(*np, [&](Tensor<T>& gp) {
      const T invP = T{1} / static_cast<T>(P);
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t k = lab[i] * P + i;
        if (ps[k] > floor) gp[k] += g[0] * wce * (-invP / ps[k]);
        // d dice / d p1_i = -(2 y_i den - num) / den^2
        gp[P + i] += g[0] * wd * (-(T{2} * lab[i] * den - num) / (den * den));
      }
    });
  });
}

}  // namespace mcg
