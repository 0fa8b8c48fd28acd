#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mcg/encoder.hpp"
#include "mcg/flow_decoder.hpp"
#include "mcg/fusion.hpp"

namespace mcg {

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t decoder_channels = 16;
  StcConfig stc;
  bool use_flow = true;

  void validate() const {
    encoder.validate();
    if (decoder_channels == 0 || stc.blocks == 0) throw ConfigError("decoder_channels and stc_blocks must be positive");
  }
};

/// Ablation switches. use_flow=false swaps every CFG warp for plain bilinear
/// upsampling; use_2ds=false runs each scan over the row-major flattened map.
struct AblationFlags {
  bool use_flow = true;
  bool use_2ds = true;
};

inline ModelConfig ablation_variant(ModelConfig base, AblationFlags flags) {
  base.use_flow = flags.use_flow;
  base.encoder.use_2ds = flags.use_2ds;
  return base;
}

/// Siamese encoder, per-level fusion (CCF lateral + STC change feature) and
/// the change-flow-guided decoder.
template <class T>
class ChangeDetector {
 public:
  ChangeDetector(const ModelConfig& cfg, std::uint64_t seed)
      : cfg_(validated(cfg)), rng_(seed), encoder_(params_, cfg_.encoder, rng_), decoder_(params_, cfg_.decoder_channels, rng_) {
    const std::size_t D = cfg_.decoder_channels;
    std::size_t ch = cfg_.encoder.base_channels;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string p = "fuse.stage" + std::to_string(s + 1);
      compress_.emplace_back(params_, p + ".compress", ch, D, rng_);
      ccf_proj_.emplace_back(params_, p + ".ccf", 2 * ch, D, rng_);
      stc_.emplace_back(params_, p + ".stc", D, cfg_.encoder, cfg_.stc, rng_);
      ch *= 2;
    }
  }

  ChangeDetector(const ChangeDetector&) = delete;
  ChangeDetector& operator=(const ChangeDetector&) = delete;

  /// img1, img2: 3×H×W in [0,1], H and W divisible by 32.
  DecodeResult<T> forward(const Tensor<T>& img1, const Tensor<T>& img2) const {
    if (img1.shape() != img2.shape()) throw ShapeError("image pair extents differ");
    const auto e1 = encoder_.encode(Var<T>(img1), TimeTag::T1);
    const auto e2 = encoder_.encode(Var<T>(img2), TimeTag::T2);
    std::array<Var<T>, 4> change, lateral;
    for (std::size_t s = 0; s < 4; ++s) {
      const FeatureMap<T> c1{compress_[s](e1[s].data), e1[s].stage, TimeTag::T1};
      const FeatureMap<T> c2{compress_[s](e2[s].data), e2[s].stage, TimeTag::T2};
      change[s] = stc_[s](c1, c2).data;
      lateral[s] = ccf_proj_[s](ccf(e1[s], e2[s]).data);
    }
    return decoder_.decode(change, lateral, cfg_.use_flow);
  }

  /// Per-pixel argmax of the change probability map (1 = change).
  static std::vector<std::uint8_t> predict_mask(const DecodeResult<T>& r) {
    const Tensor<T>& p = r.probs.value();
    const std::size_t P = p.dim(1) * p.dim(2);
    std::vector<std::uint8_t> m(P);
    for (std::size_t k = 0; k < P; ++k) m[k] = p[P + k] > p[k] ? 1 : 0;
    return m;
  }

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const Encoder<T>& encoder() const { return encoder_; }
  Encoder<T>& encoder() { return encoder_; }
  FlowDecoder<T>& decoder() { return decoder_; }
  std::vector<StcBlock<T>>& stc_blocks() { return stc_; }

 private:
  static const ModelConfig& validated(const ModelConfig& c) {
    c.validate();
    return c;
  }

  ModelConfig cfg_;
  ParamSet<T> params_;
  std::mt19937_64 rng_;
  Encoder<T> encoder_;
  FlowDecoder<T> decoder_;
  std::vector<Linear<T>> compress_;
  std::vector<Linear<T>> ccf_proj_;
  std::vector<StcBlock<T>> stc_;
};

}  // namespace mcg
