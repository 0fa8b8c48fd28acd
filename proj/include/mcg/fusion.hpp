#pragma once

#include <array>
#include <string>
#include <vector>

#include "mcg/encoder.hpp"

namespace mcg {

namespace detail {

inline void check_pair(const Shape& a, const Shape& b, const char* what) {
  if (a.size() != 3 || a != b) throw ShapeError(std::string(what) + ": feature extents differ " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

/// Cross-channel fusion: channel concatenation, T1 channels first.
template <class T>
FeatureMap<T> ccf(const FeatureMap<T>& f1, const FeatureMap<T>& f2) {
  detail::check_pair(f1.data.shape(), f2.data.shape(), "ccf");
  return {concat_channels<T>({f1.data, f2.data}), f1.stage, TimeTag::Fused};
}

/// Spatial reorganization fusion: C×H×W pair -> C×2H×2W with
/// out(2m+a, 2n+b) = f1(m,n) when a != b, f2(m,n) when a == b.
template <class T>
Var<T> srf(const Var<T>& f1, const Var<T>& f2) {
  detail::check_pair(f1.shape(), f2.shape(), "srf");
  const std::size_t C = f1.dim(0), H = f1.dim(1), W = f1.dim(2);
  const std::size_t W2 = 2 * W, P2 = 4 * H * W;
  Tensor<T> out({C, 2 * H, 2 * W});
  const T* v1 = f1.value().data();
  const T* v2 = f2.value().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < H; ++m)
      for (std::size_t n = 0; n < W; ++n) {
        const std::size_t src = (c * H + m) * W + n;
        T* o = out.data() + c * P2 + (2 * m) * W2 + 2 * n;
        o[0] = v2[src];
        o[1] = v1[src];
        o[W2] = v1[src];
        o[W2 + 1] = v2[src];
      }
  Node<T>* n1 = f1.node().get();
  Node<T>* n2 = f2.node().get();
  return make_op<T>("srf", std::move(out), {f1, f2}, [=](const Tensor<T>& g) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < H; ++m)
        for (std::size_t n = 0; n < W; ++n) {
          const std::size_t src = (c * H + m) * W + n;
          const T* gg = g.data() + c * P2 + (2 * m) * W2 + 2 * n;
          accumulate(*n1, [&](Tensor<T>& g1) { g1[src] += gg[1] + gg[W2]; });
          accumulate(*n2, [&](Tensor<T>& g2) { g2[src] += gg[0] + gg[W2 + 1]; });
        }
  });
}

template <class T>
FeatureMap<T> srf(const FeatureMap<T>& f1, const FeatureMap<T>& f2) {
  return {srf(f1.data, f2.data), f1.stage, TimeTag::Fused};
}

/// Extracts the phase sub-grid x(2m+a, 2n+b) of a C×2H×2W map.
template <class T>
Var<T> phase(const Var<T>& x, std::size_t a, std::size_t b) {
  if (x.shape().size() != 3 || x.dim(1) % 2 || x.dim(2) % 2 || a > 1 || b > 1) {
    throw ShapeError("phase expects a C×2H×2W map and a, b in {0,1}");
  }
  const std::size_t C = x.dim(0), H = x.dim(1) / 2, W = x.dim(2) / 2;
  const std::size_t W2 = 2 * W, P2 = 4 * H * W;
  Tensor<T> out({C, H, W});
  const T* xv = x.value().data();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < H; ++m)
      for (std::size_t n = 0; n < W; ++n) out[(c * H + m) * W + n] = xv[c * P2 + (2 * m + a) * W2 + 2 * n + b];
  Node<T>* nx = x.node().get();
  return make_op<T>("phase", std::move(out), {x}, [=](const Tensor<T>& g) {
    accumulate(*nx, [&](Tensor<T>& gx) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t m = 0; m < H; ++m)
          for (std::size_t n = 0; n < W; ++n) gx[c * P2 + (2 * m + a) * W2 + 2 * n + b] += g[(c * H + m) * W + n];
    });
  });
}

/// The four phase sub-grids in (a,b) order (0,0), (0,1), (1,0), (1,1).
/// For an srf map these are (T2, T1, T1, T2).
template <class T>
std::array<Var<T>, 4> deinterleave(const Var<T>& x) {
  return {phase(x, 0, 0), phase(x, 0, 1), phase(x, 1, 0), phase(x, 1, 1)};
}

struct StcConfig {
  std::size_t blocks = 1;
};

/// Spatial-temporal cross-change block: srf -> 2D-Mamba block(s) on the
/// 2H×2W map -> phase split -> channel concat (4C) -> 1×1 conv to C.
template <class T>
class StcBlock {
 public:
  template <class Rng>
  StcBlock(ParamSet<T>& ps, const std::string& name, std::size_t channels, const EncoderConfig& enc, StcConfig cfg,
           Rng& rng)
      : fuse_(ps, name + ".fuse", 4 * channels, channels, rng) {
    for (std::size_t i = 0; i < cfg.blocks; ++i) blocks_.emplace_back(ps, name + ".block" + std::to_string(i), channels, enc, rng);
  }

  /// Mixed map before the phase split (exposed for inspection in tests).
  Var<T> mixed(const Var<T>& f1, const Var<T>& f2) const {
    Var<T> m = srf(f1, f2);
    for (const auto& b : blocks_) m = b(m);
    return m;
  }

  FeatureMap<T> operator()(const FeatureMap<T>& f1, const FeatureMap<T>& f2) const {
    detail::check_pair(f1.data.shape(), f2.data.shape(), "stc_block");
    const auto ph = deinterleave(mixed(f1.data, f2.data));
    return {fuse_(concat_channels<T>({ph[0], ph[1], ph[2], ph[3]})), f1.stage, TimeTag::Fused};
  }

  std::vector<Mamba2dBlock<T>>& blocks() { return blocks_; }

 private:
  std::vector<Mamba2dBlock<T>> blocks_;
  Linear<T> fuse_;
};

}  // namespace mcg
