#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "mcg/ops.hpp"
#include "mcg/params.hpp"
#include "mcg/scan2d.hpp"

namespace mcg {

enum class TimeTag { T1, T2, Fused };

/// C×H×W activation with its pyramid stage (1..4) and acquisition tag.
template <class T>
struct FeatureMap {
  Var<T> data;
  int stage = 0;
  TimeTag tag = TimeTag::Fused;

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

/// Spatial mixer inside the block: 3×3 depthwise, or a rowwise 1×3 variant.
enum class DepthwiseKernel { K3x3, K1x3 };

struct EncoderConfig {
  std::size_t base_channels = 16;
  std::size_t state_dim = 8;
  std::array<std::size_t, 4> stage_depths{1, 1, 2, 1};
  std::size_t conv_kernel = 3;  // stem kernel
  std::size_t expansion = 2;
  DepthwiseKernel dw_kernel = DepthwiseKernel::K3x3;
  bool use_2ds = true;  // false: flatten-1D selective scan instead of the 2D scan

  void validate() const {
    if (base_channels == 0 || state_dim == 0 || expansion == 0 || conv_kernel == 0) {
      throw ConfigError("encoder config values must be positive");
    }
    for (auto d : stage_depths)
      if (d == 0) throw ConfigError("stage depths must be positive");
    if (conv_kernel % 2 == 0) throw ConfigError("stem kernel must be odd");
  }
};

/// Pointwise (1×1) convolution: per-site linear map over channels.
template <class T>
struct Linear {
  Var<T> weight;  // [out,in,1,1]
  std::optional<Var<T>> bias;

  template <class Rng>
  Linear(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true,
         double gain = 1.0)
      : weight(ps.add(name + ".weight", init::conv_weight<T>(out, in, 1, 1, rng, gain))) {
    if (with_bias) bias = ps.add(name + ".bias", Tensor<T>({out}));
  }

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias); }
};

template <class T>
struct Conv {
  Var<T> weight;
  Var<T> bias;
  Conv2dOptions opt;

  template <class Rng>
  Conv(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, std::size_t k, Conv2dOptions o,
       Rng& rng, double gain = 1.0)
      : weight(ps.add(name + ".weight", init::conv_weight<T>(out, in, k, k, rng, gain))),
        bias(ps.add(name + ".bias", Tensor<T>({out}))),
        opt(o) {}

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, std::optional<Var<T>>(bias), opt); }
};

template <class T>
struct LayerNorm {
  Var<T> gamma;
  Var<T> beta;

  LayerNorm(ParamSet<T>& ps, const std::string& name, std::size_t channels)
      : gamma(ps.add(name + ".gamma", Tensor<T>({channels}, T{1}))), beta(ps.add(name + ".beta", Tensor<T>({channels}))) {}

  Var<T> operator()(const Var<T>& x) const { return layer_norm_channels(x, gamma, beta); }
};

/// 2D-Mamba block. With D input channels and E = expansion·D inner channels:
///
///   xn = Norm(x)
///   s  = Norm(Scan2D(SiLU(DWConv(Lin1(xn)))))   (four flip orientations summed)
///   z  = SiLU(Lin2(xn))
///   out = x + OutProj(s ⊙ z)
template <class T>
class Mamba2dBlock {
 public:
  template <class Rng>
  Mamba2dBlock(ParamSet<T>& ps, const std::string& name, std::size_t dim, const EncoderConfig& cfg, Rng& rng)
      : dim_(dim),
        inner_(dim * cfg.expansion),
        state_dim_(cfg.state_dim),
        use_2ds_(cfg.use_2ds),
        norm_(ps, name + ".norm", dim),
        in_scan_(ps, name + ".in_scan", dim, inner_, rng),
        in_gate_(ps, name + ".in_gate", dim, inner_, rng),
        dw_weight_(ps.add(name + ".dw.weight",
                          init::normal<T>({inner_, std::size_t{cfg.dw_kernel == DepthwiseKernel::K3x3 ? 3u : 1u}, 3},
                                          cfg.dw_kernel == DepthwiseKernel::K3x3 ? 1.0 / 3.0 : 1.0 / std::sqrt(3.0),
                                          rng))),
        dw_bias_(ps.add(name + ".dw.bias", Tensor<T>({inner_}))),
        delta_proj_(ps, name + ".delta_proj", inner_, inner_, rng, true, 0.1),
        b_proj_(ps, name + ".b_proj", inner_, cfg.state_dim, rng, false),
        c_proj_(ps, name + ".c_proj", inner_, cfg.state_dim, rng, false),
        log_a_(ps.add(name + ".log_a", initial_log_a(inner_, cfg.state_dim))),
        scan_norm_(ps, name + ".scan_norm", inner_),
        out_proj_(ps, name + ".out_proj", inner_, dim, rng, true, 0.5) {
    // Δ bias = softplus⁻¹(dt) with dt log-uniform in [0.05, 0.3]
    std::uniform_real_distribution<double> ud(std::log(0.05), std::log(0.3));
    Tensor<T>& b = delta_proj_.bias->mutable_value();
    for (auto& v : b.vec()) v = static_cast<T>(std::log(std::expm1(std::exp(ud(rng)))));
  }

  Var<T> operator()(const Var<T>& x) const {
    if (x.dim(0) != dim_) throw ShapeError("Mamba2dBlock: expected " + std::to_string(dim_) + " channels");
    const Var<T> xn = norm_(x);
    const Var<T> a = silu(depthwise_conv2d(in_scan_(xn), dw_weight_, dw_bias_));
    const Var<T> delta = softplus(delta_proj_(a));
    const Var<T> b = b_proj_(a);
    const Var<T> c = c_proj_(a);
    scan2d::SelectiveScanConfig sc;
    sc.mode = use_2ds_ ? scan2d::ScanMode::TwoD : scan2d::ScanMode::Flat1D;
    const Var<T> s = scan_norm_(scan2d::selective_scan(a, delta, log_a_, b, c, sc));
    const Var<T> z = silu(in_gate_(xn));
    return add(x, out_proj_(mul(s, z)));
  }

  FeatureMap<T> operator()(const FeatureMap<T>& x) const { return {(*this)(x.data), x.stage, x.tag}; }

  Linear<T>& out_proj() { return out_proj_; }
  Linear<T>& delta_proj() { return delta_proj_; }
  bool uses_2ds() const { return use_2ds_; }
  void set_use_2ds(bool v) { use_2ds_ = v; }

 private:
  static Tensor<T> initial_log_a(std::size_t inner, std::size_t n) {
    Tensor<T> t({inner, n});
    for (std::size_t c = 0; c < inner; ++c)
      for (std::size_t k = 0; k < n; ++k) t[c * n + k] = std::log(static_cast<T>(k + 1));  // A = -(k+1)
    return t;
  }

  std::size_t dim_, inner_, state_dim_;
  bool use_2ds_;
  LayerNorm<T> norm_;
  Linear<T> in_scan_, in_gate_;
  Var<T> dw_weight_, dw_bias_;
  Linear<T> delta_proj_, b_proj_, c_proj_;
  Var<T> log_a_;
  LayerNorm<T> scan_norm_;
  Linear<T> out_proj_;
};

/// Two stride-2 3×3 convolutions with SiLU between: 3×H×W -> C×H/4×W/4.
template <class T>
class Stem {
 public:
  template <class Rng>
  Stem(ParamSet<T>& ps, const EncoderConfig& cfg, Rng& rng)
      : conv1_(ps, "stem.conv1", 3, cfg.base_channels, cfg.conv_kernel, {2, cfg.conv_kernel / 2}, rng, std::sqrt(2.0)),
        conv2_(ps, "stem.conv2", cfg.base_channels, cfg.base_channels, cfg.conv_kernel, {2, cfg.conv_kernel / 2}, rng) {}

  /// `divisor` guards the input extents (32 for the full encoder chain).
  FeatureMap<T> operator()(const Var<T>& image, TimeTag tag, std::size_t divisor = 32) const {
    if (image.shape().size() != 3 || image.dim(0) != 3) throw ShapeError("stem expects a 3×H×W image");
    if (divisor > 1 && (image.dim(1) % divisor != 0 || image.dim(2) % divisor != 0)) {
      throw ShapeError("image extents " + shape_str(image.shape()) + " must be divisible by " + std::to_string(divisor));
    }
    return {conv2_(silu(conv1_(image))), 1, tag};
  }

 private:
  Conv<T> conv1_, conv2_;
};

/// 2×2 stride-2 convolution: C×H×W -> 2C×H/2×W/2.
template <class T>
class Downsample {
 public:
  template <class Rng>
  Downsample(ParamSet<T>& ps, const std::string& name, std::size_t in, Rng& rng)
      : conv_(ps, name, in, 2 * in, 2, {2, 0}, rng) {}

  FeatureMap<T> operator()(const FeatureMap<T>& x) const {
    if (x.height() % 2 != 0 || x.width() % 2 != 0) {
      throw ShapeError("downsample needs even extents, got " + shape_str(x.data.shape()));
    }
    return {conv_(x.data), x.stage + 1, x.tag};
  }

  Conv<T>& conv() { return conv_; }

 private:
  Conv<T> conv_;
};

/// Residual sum of a stage's block outputs followed by a pointwise projection.
template <class T>
class Aggregator {
 public:
  template <class Rng>
  Aggregator(ParamSet<T>& ps, const std::string& name, std::size_t dim, std::size_t depth, Rng& rng)
      : proj_(ps, name, dim, dim, rng, true, 0.1) {
    // Start near the mean of the block outputs.
    Tensor<T>& w = proj_.weight.mutable_value();
    for (std::size_t c = 0; c < dim; ++c) w[c * dim + c] += T{1} / static_cast<T>(depth);
  }

  Var<T> operator()(const std::vector<Var<T>>& outputs) const {
    Var<T> acc = outputs.front();
    for (std::size_t i = 1; i < outputs.size(); ++i) acc = add(acc, outputs[i]);
    return proj_(acc);
  }

 private:
  Linear<T> proj_;
};

/// Four-stage hierarchical encoder. One instance serves both acquisitions.
template <class T>
class Encoder {
 public:
  template <class Rng>
  Encoder(ParamSet<T>& ps, const EncoderConfig& cfg, Rng& rng) : cfg_(cfg), stem_(ps, cfg, rng) {
    cfg.validate();
    std::size_t ch = cfg.base_channels;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string prefix = "enc.stage" + std::to_string(s + 1);
      std::vector<Mamba2dBlock<T>> blocks;
      for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
        blocks.emplace_back(ps, prefix + ".block" + std::to_string(b), ch, cfg, rng);
      }
      blocks_.push_back(std::move(blocks));
      aggregators_.emplace_back(ps, prefix + ".aggregator", ch, cfg.stage_depths[s], rng);
      if (s < 3) {
        downsamples_.emplace_back(ps, prefix + ".downsample", ch, rng);
        ch *= 2;
      }
    }
  }

  /// Stage outputs, captured after each stage's aggregator and before the
  /// following downsample. Channels C, 2C, 4C, 8C.
  std::array<FeatureMap<T>, 4> encode(const Var<T>& image, TimeTag tag = TimeTag::T1, std::size_t divisor = 32) const {
    std::array<FeatureMap<T>, 4> out;
    FeatureMap<T> x = stem_(image, tag, divisor);
    for (std::size_t s = 0; s < 4; ++s) {
      if (s > 0) x = downsamples_[s - 1](x);
      std::vector<Var<T>> outs;
      Var<T> cur = x.data;
      for (const auto& block : blocks_[s]) {
        cur = block(cur);
        outs.push_back(cur);
      }
      x = {aggregators_[s](outs), static_cast<int>(s + 1), tag};
      out[s] = x;
    }
    return out;
  }

  const EncoderConfig& config() const { return cfg_; }
  std::vector<std::vector<Mamba2dBlock<T>>>& blocks() { return blocks_; }

 private:
  EncoderConfig cfg_;
  Stem<T> stem_;
  std::vector<std::vector<Mamba2dBlock<T>>> blocks_;
  std::vector<Aggregator<T>> aggregators_;
  std::vector<Downsample<T>> downsamples_;
};

}  // namespace mcg
