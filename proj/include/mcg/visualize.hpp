#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>

#include "mcg/flow_decoder.hpp"
#include "mcg/image_io.hpp"

namespace mcg {

/// Error overlay: white = TP, black = TN, red = FP, blue = FN.
inline Raster overlay(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth, std::size_t height,
                      std::size_t width) {
  if (pred.size() != height * width || truth.size() != pred.size()) throw ShapeError("overlay: mask extents differ");
  Raster r{width, height, 3, std::vector<std::uint8_t>(height * width * 3, 0)};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const bool p = pred[k] != 0, t = truth[k] != 0;
    std::uint8_t* px = &r.pixels[k * 3];
    if (p && t) px[0] = px[1] = px[2] = 255;
    else if (p) px[0] = 255;
    else if (t) px[2] = 255;
  }
  return r;
}

/// Colour-wheel rendering of a flow field: hue = direction, saturation =
/// magnitude relative to the largest vector (or `max_magnitude` if > 0).
/// Zero flow renders as a uniform white image.
template <class T>
Raster flow_to_color(const FlowField<T>& flow, double max_magnitude = 0) {
  const Tensor<T>& d = flow.delta.value();
  const std::size_t H = d.dim(1), W = d.dim(2), P = H * W;
  double scale = max_magnitude;
  if (scale <= 0) {
    for (std::size_t k = 0; k < P; ++k) scale = std::max(scale, std::hypot(double(d[k]), double(d[P + k])));
  }
  Raster r{W, H, 3, std::vector<std::uint8_t>(P * 3, 255)};
  if (scale <= 0) return r;
  constexpr double kTwoPi = 6.283185307179586;
  for (std::size_t k = 0; k < P; ++k) {
    const double dx = d[k], dy = d[P + k];
    const double s = std::min(1.0, std::hypot(dx, dy) / scale);
    double hue = std::atan2(dy, dx) / kTwoPi;
    if (hue < 0) hue += 1;
    // HSV -> RGB with V = 1.
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    const double p = 1 - s, q = 1 - s * f, t = 1 - s * (1 - f);
    double rgb[3];
    switch (sector) {
      case 0: rgb[0] = 1, rgb[1] = t, rgb[2] = p; break;
      case 1: rgb[0] = q, rgb[1] = 1, rgb[2] = p; break;
      case 2: rgb[0] = p, rgb[1] = 1, rgb[2] = t; break;
      case 3: rgb[0] = p, rgb[1] = q, rgb[2] = 1; break;
      case 4: rgb[0] = t, rgb[1] = p, rgb[2] = 1; break;
      default: rgb[0] = 1, rgb[1] = p, rgb[2] = q; break;
    }
    for (int c = 0; c < 3; ++c) r.pixels[k * 3 + c] = static_cast<std::uint8_t>(std::lround(rgb[c] * 255));
  }
  return r;
}

}  // namespace mcg
