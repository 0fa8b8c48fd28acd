#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "mcg/ops.hpp"
#include "mcg/parallel.hpp"
#include "mcg/tensor.hpp"

namespace mcg::scan1d {

// ---------------------------------------------------------------------------
// Linear recurrence primitives: h_t = a_t h_{t-1} + b_t with h_0 = 0.
// ---------------------------------------------------------------------------

/// Element of the associative scan monoid: the affine map h -> a h + b.
template <class T>
struct Affine {
  T a{1};
  T b{0};
};

/// Composition "first lhs, then rhs": (a1,b1)∘(a2,b2) = (a1 a2, a2 b1 + b2).
template <class T>
constexpr Affine<T> combine(const Affine<T>& lhs, const Affine<T>& rhs) {
  return {lhs.a * rhs.a, rhs.a * lhs.b + rhs.b};
}

/// Sequential recurrence over a strided sequence.
template <class T>
void scan_strided(const T* a, const T* b, T* h, std::size_t len, std::ptrdiff_t stride) {
  T state{0};
  for (std::size_t t = 0; t < len; ++t) {
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) * stride;
    state = a[k] * state + b[k];
    h[k] = state;
  }
}

/// Adjoint of scan_strided. Given dL/dh, accumulates dL/da and dL/db. The
/// adjoint recurrence runs right to left: lam_t = gh_t + a_{t+1} lam_{t+1}.
template <class T>
void scan_strided_backward(const T* a, const T* h, const T* gh, T* ga, T* gb, std::size_t len,
                           std::ptrdiff_t stride) {
  T lam{0};
  for (std::size_t t = len; t-- > 0;) {
    const std::ptrdiff_t k = static_cast<std::ptrdiff_t>(t) * stride;
    if (t + 1 < len) lam *= a[k + stride];
    lam += gh[k];
    gb[k] += lam;
    if (t > 0) ga[k] += lam * h[k - stride];
  }
}

struct ParallelOptions {
  std::size_t chunk = 64;
  std::size_t threads = 1;
};

/// Chunked three-phase scan: per-chunk reductions, an exclusive scan over the
/// chunk aggregates, then per-chunk rescans seeded with the carried state.
/// Phases 1 and 3 run chunks concurrently.
template <class T>
void scan_parallel_contiguous(const T* a, const T* b, T* h, std::size_t len, ParallelOptions opt = {}) {
  if (len == 0) return;
  const std::size_t chunk = std::max<std::size_t>(1, opt.chunk);
  const std::size_t nchunks = (len + chunk - 1) / chunk;
  std::vector<Affine<T>> agg(nchunks);
  parallel_for(nchunks, opt.threads, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      Affine<T> acc{};
      const std::size_t end = std::min(len, (c + 1) * chunk);
      for (std::size_t t = c * chunk; t < end; ++t) acc = combine(acc, Affine<T>{a[t], b[t]});
      agg[c] = acc;
    }
  });
  std::vector<T> carry(nchunks, T{0});
  Affine<T> run{};
  for (std::size_t c = 0; c < nchunks; ++c) {
    carry[c] = run.b;  // state entering chunk c (h_0 = 0 so only b matters)
    run = combine(run, agg[c]);
  }
  parallel_for(nchunks, opt.threads, [&](std::size_t cb, std::size_t ce) {
    for (std::size_t c = cb; c < ce; ++c) {
      T state = carry[c];
      const std::size_t end = std::min(len, (c + 1) * chunk);
      for (std::size_t t = c * chunk; t < end; ++t) {
        state = a[t] * state + b[t];
        h[t] = state;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Selective SSM: input-dependent discretization and per-channel scans.
// ---------------------------------------------------------------------------

/// Learnable parameterization for C channels with N states each. A is
/// diagonal and strictly negative, A = -exp(log_a).
template <class T>
struct SsmParams {
  std::size_t channels = 0;
  std::size_t state_dim = 0;
  Tensor<T> log_a;       // [C,N]
  Tensor<T> proj_b;      // [N,C]
  Tensor<T> proj_c;      // [N,C]
  Tensor<T> proj_delta;  // [C,C]
  Tensor<T> delta_bias;  // [C]

  T a(std::size_t c, std::size_t n) const { return -std::exp(log_a[c * state_dim + n]); }

  /// A[c,n] = -(n+1); projections small random; Δ bias puts softplus in [0.05, 0.3].
  template <class Rng>
  static SsmParams init(std::size_t channels, std::size_t state_dim, Rng& rng) {
    SsmParams p;
    p.channels = channels;
    p.state_dim = state_dim;
    p.log_a = Tensor<T>({channels, state_dim});
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t n = 0; n < state_dim; ++n) p.log_a[c * state_dim + n] = std::log(static_cast<T>(n + 1));
    const T scale = T{1} / std::sqrt(static_cast<T>(channels));
    std::normal_distribution<double> nd(0.0, 1.0);
    auto fill = [&](Tensor<T>& t, T s) {
      for (auto& v : t.vec()) v = static_cast<T>(nd(rng)) * s;
    };
    p.proj_b = Tensor<T>({state_dim, channels});
    p.proj_c = Tensor<T>({state_dim, channels});
    p.proj_delta = Tensor<T>({channels, channels});
    fill(p.proj_b, scale);
    fill(p.proj_c, scale);
    fill(p.proj_delta, scale * T(0.1));
    p.delta_bias = Tensor<T>({channels});
    std::uniform_real_distribution<double> ud(std::log(0.05), std::log(0.3));
    for (auto& v : p.delta_bias.vec()) {
      const double dt = std::exp(ud(rng));
      v = static_cast<T>(std::log(std::expm1(dt)));  // inverse softplus
    }
    return p;
  }
};

/// Per-position discretized quantities for a length-L, C-channel input.
template <class T>
struct DiscretizedSteps {
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t state_dim = 0;
  Tensor<T> delta;  // [L,C]   Δ_t = softplus(proj_delta x_t + bias) >= 0
  Tensor<T> a_bar;  // [L,C,N] exp(Δ_t A)
  Tensor<T> bx;     // [L,C,N] Δ_t B(x_t) x_t
  Tensor<T> c;      // [L,N]   C(x_t)
};

/// x: [L,C]. Optional `forced_delta` ([L,C]) bypasses the Δ projection; used to
/// pin transitions in tests.
template <class T>
DiscretizedSteps<T> discretize(const SsmParams<T>& p, const Tensor<T>& x, const Tensor<T>* forced_delta = nullptr) {
  if (x.rank() != 2 || x.dim(1) != p.channels) throw ShapeError("discretize expects x[L,C] with C = " + std::to_string(p.channels));
  const std::size_t L = x.dim(0), C = p.channels, N = p.state_dim;
  if (L == 0) throw ShapeError("discretize needs L >= 1");
  DiscretizedSteps<T> s;
  s.length = L;
  s.channels = C;
  s.state_dim = N;
  s.delta = Tensor<T>({L, C});
  s.a_bar = Tensor<T>({L, C, N});
  s.bx = Tensor<T>({L, C, N});
  s.c = Tensor<T>({L, N});
  std::vector<T> bvec(N);
  for (std::size_t t = 0; t < L; ++t) {
    const T* xt = x.data() + t * C;
    for (std::size_t n = 0; n < N; ++n) {
      T bsum{0}, csum{0};
      for (std::size_t k = 0; k < C; ++k) {
        bsum += p.proj_b[n * C + k] * xt[k];
        csum += p.proj_c[n * C + k] * xt[k];
      }
      bvec[n] = bsum;
      s.c[t * N + n] = csum;
    }
    for (std::size_t ch = 0; ch < C; ++ch) {
      T d;
      if (forced_delta) {
        d = (*forced_delta)[t * C + ch];
      } else {
        T pre = p.delta_bias[ch];
        for (std::size_t k = 0; k < C; ++k) pre += p.proj_delta[ch * C + k] * xt[k];
        d = detail::softplus_scalar(pre);
      }
      s.delta[t * C + ch] = d;
      for (std::size_t n = 0; n < N; ++n) {
        s.a_bar[(t * C + ch) * N + n] = std::exp(d * p.a(ch, n));
        s.bx[(t * C + ch) * N + n] = d * bvec[n] * xt[ch];
      }
    }
  }
  if (!s.a_bar.all_finite() || !s.bx.all_finite() || !s.c.all_finite()) {
    throw NumericError("discretize produced non-finite values");
  }
  return s;
}

/// h: [L,C,N] by the exact left-to-right recurrence.
template <class T>
Tensor<T> scan_sequential(const DiscretizedSteps<T>& s) {
  const std::size_t L = s.length, C = s.channels, N = s.state_dim;
  Tensor<T> h({L, C, N});
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(C * N);
  for (std::size_t k = 0; k < C * N; ++k) {
    scan_strided(s.a_bar.data() + k, s.bx.data() + k, h.data() + k, L, stride);
  }
  if (!h.all_finite()) throw NumericError("scan overflowed");
  return h;
}

/// Same result as scan_sequential via the chunked associative scan.
template <class T>
Tensor<T> scan_parallel(const DiscretizedSteps<T>& s, ParallelOptions opt = {}) {
  const std::size_t L = s.length, C = s.channels, N = s.state_dim;
  Tensor<T> h({L, C, N});
  std::vector<T> a(L), b(L), out(L);
  for (std::size_t k = 0; k < C * N; ++k) {
    for (std::size_t t = 0; t < L; ++t) {
      a[t] = s.a_bar[t * C * N + k];
      b[t] = s.bx[t * C * N + k];
    }
    scan_parallel_contiguous(a.data(), b.data(), out.data(), L, opt);
    for (std::size_t t = 0; t < L; ++t) h[t * C * N + k] = out[t];
  }
  return h;
}

/// y_t[c] = Σ_n C_t[n] h_t[c,n]. h: [L,C,N], c: [L,N] -> y: [L,C].
template <class T>
Tensor<T> aggregate_output(const Tensor<T>& h, const Tensor<T>& c) {
  if (h.rank() != 3 || c.rank() != 2 || c.dim(0) != h.dim(0) || c.dim(1) != h.dim(2)) {
    throw ShapeError("aggregate_output: h " + shape_str(h.shape()) + " vs c " + shape_str(c.shape()));
  }
  const std::size_t L = h.dim(0), C = h.dim(1), N = h.dim(2);
  Tensor<T> y({L, C});
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t ch = 0; ch < C; ++ch) {
      T acc{0};
      for (std::size_t n = 0; n < N; ++n) acc += c[t * N + n] * h[(t * C + ch) * N + n];
      y[t * C + ch] = acc;
    }
  return y;
}

}  // namespace mcg::scan1d
