#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mcg/encoder.hpp"

namespace mcg {

/// Displacement field on the fine grid, stored channel-major as [2,H,W] with
/// channel 0 = dx and channel 1 = dy. Units: fine-grid pixels before the
/// halving that maps a fine position onto the coarse grid.
template <class T>
struct FlowField {
  Var<T> delta;

  std::size_t height() const { return delta.dim(1); }
  std::size_t width() const { return delta.dim(2); }
  T dx(std::size_t i, std::size_t j) const { return delta.value().at(0, i, j); }
  T dy(std::size_t i, std::size_t j) const { return delta.value().at(1, i, j); }
};

/// One bilinear tap: flat index into an H×W plane and its weight.
template <class T>
struct Tap {
  std::size_t index;
  T weight;
};

/// The four neighbours of sample point (sy, sx) on an H×W grid with
/// clamp-to-edge. Weights always sum to one.
template <class T>
std::array<Tap<T>, 4> bilinear_taps(T sy, T sx, std::size_t H, std::size_t W) {
  const T fy0 = std::floor(sy), fx0 = std::floor(sx);
  const T wy = sy - fy0, wx = sx - fx0;
  auto clampi = [](T v, std::size_t n) {
    const long i = static_cast<long>(v);
    return static_cast<std::size_t>(std::clamp<long>(i, 0, static_cast<long>(n) - 1));
  };
  const std::size_t y0 = clampi(fy0, H), y1 = clampi(fy0 + 1, H);
  const std::size_t x0 = clampi(fx0, W), x1 = clampi(fx0 + 1, W);
  return {Tap<T>{y0 * W + x0, (1 - wy) * (1 - wx)}, Tap<T>{y0 * W + x1, (1 - wy) * wx},
          Tap<T>{y1 * W + x0, wy * (1 - wx)}, Tap<T>{y1 * W + x1, wy * wx}};
}

namespace detail {

/// Samples `src` [C,H,W] at fine positions (i,j) of an OH×OW grid:
/// point = ((i + dy)/scale, (j + dx)/scale), flow optional ([2,OH,OW]).
template <class T>
Var<T> warp_sample(const Var<T>& src, const Var<T>* flow, std::size_t OH, std::size_t OW, T scale, const char* name) {
  const std::size_t C = src.dim(0), H = src.dim(1), W = src.dim(2), P = H * W, OP = OH * OW;
  Tensor<T> out({C, OH, OW});
  const T* sv = src.value().data();
  const T* fv = flow ? flow->value().data() : nullptr;
  for (std::size_t i = 0; i < OH; ++i)
    for (std::size_t j = 0; j < OW; ++j) {
      const std::size_t p = i * OW + j;
      const T sx = (static_cast<T>(j) + (fv ? fv[p] : T{0})) / scale;
      const T sy = (static_cast<T>(i) + (fv ? fv[OP + p] : T{0})) / scale;
      const auto taps = bilinear_taps(sy, sx, H, W);
      for (std::size_t c = 0; c < C; ++c) {
        T acc{0};
        for (const auto& t : taps) acc += t.weight * sv[c * P + t.index];
        out[c * OP + p] = acc;
      }
    }
  std::vector<Var<T>> inputs{src};
  if (flow) inputs.push_back(*flow);
  Node<T>* ns = src.node().get();
  Node<T>* nf = flow ? flow->node().get() : nullptr;
  Tensor<T> svals = src.value();
  Tensor<T> fvals = flow ? flow->value() : Tensor<T>();
  return make_op<T>(name, std::move(out), std::move(inputs), [=](const Tensor<T>& g) {
    Tensor<T>* gs = ns->requires_grad ? &ns->ensure_grad() : nullptr;
    Tensor<T>* gf = (nf && nf->requires_grad) ? &nf->ensure_grad() : nullptr;
    const bool has_flow = !fvals.empty();
    for (std::size_t i = 0; i < OH; ++i)
      for (std::size_t j = 0; j < OW; ++j) {
        const std::size_t p = i * OW + j;
        const T sx = (static_cast<T>(j) + (has_flow ? fvals[p] : T{0})) / scale;
        const T sy = (static_cast<T>(i) + (has_flow ? fvals[OP + p] : T{0})) / scale;
        const auto taps = bilinear_taps(sy, sx, H, W);
        if (gs) {
          for (std::size_t c = 0; c < C; ++c) {
            const T gc = g[c * OP + p];
            for (const auto& t : taps) (*gs)[c * P + t.index] += t.weight * gc;
          }
        }
        if (gf) {
          // d/dsx and d/dsy of the bilinear blend; taps are ordered
          // (y0,x0), (y0,x1), (y1,x0), (y1,x1).
          const T wy = sy - std::floor(sy), wx = sx - std::floor(sx);
          T gx{0}, gy{0};
          for (std::size_t c = 0; c < C; ++c) {
            const T gc = g[c * OP + p];
            const T* s = svals.data() + c * P;
            const T v00 = s[taps[0].index], v01 = s[taps[1].index], v10 = s[taps[2].index], v11 = s[taps[3].index];
            gx += gc * ((1 - wy) * (v01 - v00) + wy * (v11 - v10));
            gy += gc * ((1 - wx) * (v10 - v00) + wx * (v11 - v01));
          }
          (*gf)[p] += gx / scale;
          (*gf)[OP + p] += gy / scale;
        }
      }
  });
}

}  // namespace detail

/// Warps a coarse C×H×W map onto the 2H×2W grid: each fine position p samples
/// the coarse map bilinearly at (p + Δ(p)) / 2.
template <class T>
Var<T> flow_warp(const Var<T>& coarse, const FlowField<T>& flow) {
  if (coarse.shape().size() != 3 || flow.delta.shape().size() != 3 || flow.delta.dim(0) != 2) {
    throw ShapeError("flow_warp expects coarse[C,H,W] and flow[2,2H,2W]");
  }
  if (flow.height() != 2 * coarse.dim(1) || flow.width() != 2 * coarse.dim(2)) {
    throw ShapeError("flow_warp: flow grid " + shape_str(flow.delta.shape()) + " is not twice " + shape_str(coarse.shape()));
  }
  return detail::warp_sample(coarse, &flow.delta, flow.height(), flow.width(), T{2}, "flow_warp");
}

/// Plain bilinear upsampling by an integer factor with fine position p
/// sampling the source at p / factor (clamp-to-edge).
template <class T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t factor) {
  if (x.shape().size() != 3 || factor == 0) throw ShapeError("upsample_bilinear expects [C,H,W] and factor >= 1");
  return detail::warp_sample<T>(x, nullptr, x.dim(1) * factor, x.dim(2) * factor, static_cast<T>(factor),
                                "upsample_bilinear");
}

/// Predicts the change flow from a coarse map and the fine map it merges into:
/// upsample coarse ×2, concat with fine, conv3×3 -> SiLU -> conv3×3 -> (dx,dy).
template <class T>
class FlowMake {
 public:
  template <class Rng>
  FlowMake(ParamSet<T>& ps, const std::string& name, std::size_t channels, Rng& rng)
      : conv1_(ps, name + ".conv1", 2 * channels, channels, 3, {1, 1}, rng),
        conv2_(ps, name + ".conv2", channels, 2, 3, {1, 1}, rng) {
    conv2_.weight.mutable_value().fill(T{0});  // zero flow at init: plain bilinear upsampling
  }

  FlowField<T> operator()(const Var<T>& coarse, const Var<T>& fine) const {
    if (fine.dim(1) != 2 * coarse.dim(1) || fine.dim(2) != 2 * coarse.dim(2)) {
      throw ShapeError("flow_make: fine " + shape_str(fine.shape()) + " must double coarse " + shape_str(coarse.shape()));
    }
    const Var<T> cat = concat_channels<T>({upsample_bilinear(coarse, 2), fine});
    return {conv2_(silu(conv1_(cat)))};
  }

  Conv<T>& final_conv() { return conv2_; }

 private:
  Conv<T> conv1_, conv2_;
};

/// Output of one decoder level; `flow` is empty when flow guidance is off.
template <class T>
struct CfgOutput {
  Var<T> features;
  std::optional<FlowField<T>> flow;
};

/// Change-flow-guided merge of a coarse map into the next finer level:
/// conv3×3(warp(coarse, flow) + fine). With flow guidance off the warp is
/// replaced by plain ×2 bilinear upsampling.
template <class T>
class CfgLevel {
 public:
  template <class Rng>
  CfgLevel(ParamSet<T>& ps, const std::string& name, std::size_t channels, Rng& rng)
      : flow_make_(ps, name + ".flow_make", channels, rng), merge_(ps, name + ".merge", channels, channels, 3, {1, 1}, rng) {}

  CfgOutput<T> operator()(const Var<T>& coarse, const Var<T>& fine, bool use_flow = true) const {
    if (coarse.dim(0) != fine.dim(0)) throw ShapeError("cfg_level: channel mismatch");
    if (!use_flow) {
      if (fine.dim(1) != 2 * coarse.dim(1) || fine.dim(2) != 2 * coarse.dim(2)) throw ShapeError("cfg_level: resolutions must differ by 2x");
      return {merge_(add(upsample_bilinear(coarse, 2), fine)), std::nullopt};
    }
    FlowField<T> flow = flow_make_(coarse, fine);
    return {merge_(add(flow_warp(coarse, flow), fine)), flow};
  }

  FlowMake<T>& flow_make() { return flow_make_; }

 private:
  FlowMake<T> flow_make_;
  Conv<T> merge_;
};

template <class T>
struct DecodeResult {
  Var<T> logits;  // [2,H0,W0]
  Var<T> probs;   // [2,H0,W0], channel 1 = change
  std::vector<FlowField<T>> flows;  // coarse-to-fine, one per guided level
};

/// FPN-style top-down decoder over four pyramid levels of width `channels`.
template <class T>
class FlowDecoder {
 public:
  template <class Rng>
  FlowDecoder(ParamSet<T>& ps, std::size_t channels, Rng& rng) : head_(ps, "dec.head", channels, 2, rng) {
    for (std::size_t l = 0; l < 3; ++l) levels_.emplace_back(ps, "dec.cfg" + std::to_string(3 - l), channels, rng);
  }

  /// change_feats[s], laterals[s]: stage s+1 maps, all with the decoder width.
  /// The pyramid is walked from stage 4 down to stage 1, then the stage-1 map
  /// is projected to two logits and upsampled ×`final_scale`.
  DecodeResult<T> decode(const std::array<Var<T>, 4>& change_feats, const std::array<Var<T>, 4>& laterals,
                         bool use_flow = true, std::size_t final_scale = 4) const {
    Var<T> cur = add(change_feats[3], laterals[3]);
    DecodeResult<T> r;
    for (std::size_t l = 0; l < 3; ++l) {
      const std::size_t s = 2 - l;  // index of the finer stage
      const Var<T> fine = add(change_feats[s], laterals[s]);
      auto out = levels_[l](cur, fine, use_flow);
      cur = out.features;
      if (out.flow) r.flows.push_back(*out.flow);
    }
    r.logits = upsample_bilinear(head_(cur), final_scale);
    r.probs = softmax_channels(r.logits);
    return r;
  }

  std::vector<CfgLevel<T>>& levels() { return levels_; }

 private:
  std::vector<CfgLevel<T>> levels_;
  Linear<T> head_;
};

}  // namespace mcg
