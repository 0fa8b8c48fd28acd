#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "mcg/errors.hpp"

namespace mcg {

/// Pixel tallies with change as the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// pred, truth: binary masks of equal length (nonzero = change).
inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("confusion: mask sizes differ (" + std::to_string(pred.size()) + " vs " + std::to_string(truth.size()) + ")");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    if (p && t) ++c.tp;
    else if (!p && !t) ++c.tn;
    else if (p) ++c.fp;
    else ++c.fn;
  }
  return c;
}

/// Bits set in Metrics::undefined when a denominator was zero; the metric is
/// then reported as 0.
enum MetricFlag : unsigned {
  kUndefinedOa = 1u << 0,
  kUndefinedPrecision = 1u << 1,
  kUndefinedRecall = 1u << 2,
  kUndefinedF1 = 1u << 3,
  kUndefinedIou = 1u << 4,
  kUndefinedKc = 1u << 5,
};

struct Metrics {
  double oa = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double iou = 0;
  double kc = 0;
  unsigned undefined = 0;
};

/// OA, precision, recall, F1 (harmonic mean), IoU and Cohen's kappa.
inline Metrics metrics(const ConfusionCounts& c) {
  Metrics m;
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double n = tp + tn + fp + fn;
  auto ratio = [&m](double num, double den, unsigned flag) {
    if (den == 0) {
      m.undefined |= flag;
      return 0.0;
    }
    return num / den;
  };
  m.oa = ratio(tp + tn, n, kUndefinedOa);
  m.precision = ratio(tp, tp + fp, kUndefinedPrecision);
  m.recall = ratio(tp, tp + fn, kUndefinedRecall);
  if (m.precision > 0 && m.recall > 0) {
    m.f1 = 2.0 / (1.0 / m.recall + 1.0 / m.precision);
  } else {
    m.f1 = 0;
    if (m.undefined & (kUndefinedPrecision | kUndefinedRecall)) m.undefined |= kUndefinedF1;
  }
  m.iou = ratio(tp, tp + fp + fn, kUndefinedIou);
  if (n == 0) {
    m.undefined |= kUndefinedKc;
  } else {
    const double pe = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n);
    m.kc = ratio(m.oa - pe, 1.0 - pe, kUndefinedKc);
  }
  return m;
}

}  // namespace mcg
