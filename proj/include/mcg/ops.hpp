#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mcg/autodiff.hpp"
#include "mcg/gemm.hpp"

namespace mcg {

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

/// Trailing-dimension broadcast: shapes are right-aligned and each extent pair
/// must be equal or contain a 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw BroadcastError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

/// Flat offsets into `src` for every element of the broadcast result `out`.
inline std::vector<std::size_t> broadcast_offsets(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::size_t d = src.size() - 1 - i;
    const std::size_t o = r - 1 - i;
    stride[o] = src[d] == 1 ? 0 : s;
    s *= src[d];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> offs(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t cur = 0;
  for (std::size_t k = 0; k < n; ++k) {
    offs[k] = cur;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      cur += stride[d];
      if (idx[d] < out[d]) break;
      cur -= stride[d] * idx[d];
      idx[d] = 0;
    }
  }
  return offs;
}

}  // namespace detail

enum class BinaryKind { Add, Sub, Mul, Div };

template <class T>
Var<T> elementwise(BinaryKind kind, const Var<T>& a, const Var<T>& b) {
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const bool same = a.shape() == b.shape();
  std::vector<std::size_t> oa, ob;
  if (!same) {
    oa = detail::broadcast_offsets(a.shape(), out_shape);
    ob = detail::broadcast_offsets(b.shape(), out_shape);
  }
  const std::size_t n = shape_numel(out_shape);
  Tensor<T> out(out_shape);
  const T* av = a.value().data();
  const T* bv = b.value().data();
  for (std::size_t k = 0; k < n; ++k) {
    const T x = av[same ? k : oa[k]];
    const T y = bv[same ? k : ob[k]];
    switch (kind) {
      case BinaryKind::Add: out[k] = x + y; break;
      case BinaryKind::Sub: out[k] = x - y; break;
      case BinaryKind::Mul: out[k] = x * y; break;
      case BinaryKind::Div: out[k] = x / y; break;
    }
  }
  static const char* names[] = {"add", "sub", "mul", "div"};
  Node<T>* na = a.node().get();
  Node<T>* nb = b.node().get();
  Tensor<T> as = a.value();
  Tensor<T> bs = b.value();
  return make_op<T>(names[static_cast<int>(kind)], std::move(out), {a, b},
                    [=](const Tensor<T>& g) {
                      accumulate(*na, [&](Tensor<T>& ga) {
                        for (std::size_t k = 0; k < n; ++k) {
                          const std::size_t ia = same ? k : oa[k];
                          const std::size_t ib = same ? k : ob[k];
                          T d{1};
                          if (kind == BinaryKind::Mul) d = bs[ib];
                          if (kind == BinaryKind::Div) d = T{1} / bs[ib];
                          ga[ia] += g[k] * d;
                        }
                      });
                      accumulate(*nb, [&](Tensor<T>& gb) {
                        for (std::size_t k = 0; k < n; ++k) {
                          const std::size_t ia = same ? k : oa[k];
                          const std::size_t ib = same ? k : ob[k];
                          T d{1};
                          if (kind == BinaryKind::Sub) d = T{-1};
                          if (kind == BinaryKind::Mul) d = as[ia];
                          if (kind == BinaryKind::Div) d = -as[ia] / (bs[ib] * bs[ib]);
                          gb[ib] += g[k] * d;
                        }
                      });
                    });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryKind::Add, a, b); }
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryKind::Sub, a, b); }
template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryKind::Mul, a, b); }
template <class T>
Var<T> div(const Var<T>& a, const Var<T>& b) { return elementwise(BinaryKind::Div, a, b); }

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return elementwise(BinaryKind::Add, a, Var<T>(Tensor<T>::scalar(s)));
}
template <class T>
Var<T> mul_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.vec()) v *= s;
  Node<T>* na = a.node().get();
  return make_op<T>("mul_scalar", std::move(out), {a}, [=](const Tensor<T>& g) {
    accumulate(*na, [&](Tensor<T>& ga) {
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * s;
    });
  });
}

// ---------------------------------------------------------------------------
// Unary
// ---------------------------------------------------------------------------

namespace detail {

/// `f` maps x -> y; `df` maps (x, y) -> dy/dx.
template <class T, class F, class DF>
Var<T> unary(const char* name, const Var<T>& a, F f, DF df) {
  Tensor<T> out(a.shape());
  const Tensor<T>& x = a.value();
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = f(x[k]);
  Node<T>* na = a.node().get();
  Tensor<T> xs = x;
  Tensor<T> ys = out;
  return make_op<T>(name, std::move(out), {a}, [=](const Tensor<T>& g) {
    accumulate(*na, [&](Tensor<T>& ga) {
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * df(xs[k], ys[k]);
    });
  });
}

template <class T>
T sigmoid_scalar(T x) {
  return x >= T{0} ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
}

template <class T>
T softplus_scalar(T x) {
  return x > T{20} ? x : std::log1p(std::exp(x));
}

}  // namespace detail

template <class T>
Var<T> neg(const Var<T>& a) { return mul_scalar(a, T{-1}); }

template <class T>
Var<T> exp(const Var<T>& a) {
  return detail::unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <class T>
Var<T> log(const Var<T>& a) {
  return detail::unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T{1} / x; });
}

template <class T>
Var<T> square(const Var<T>& a) {
  return detail::unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T{2} * x; });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>("sigmoid", a, [](T x) { return detail::sigmoid_scalar(x); },
                          [](T, T y) { return y * (T{1} - y); });
}

template <class T>
Var<T> softplus(const Var<T>& a) {
  return detail::unary<T>("softplus", a, [](T x) { return detail::softplus_scalar(x); },
                          [](T x, T) { return detail::sigmoid_scalar(x); });
}

template <class T>
Var<T> silu(const Var<T>& a) {
  return detail::unary<T>(
      "silu", a, [](T x) { return x * detail::sigmoid_scalar(x); },
      [](T x, T) {
        const T s = detail::sigmoid_scalar(x);
        return s * (T{1} + x * (T{1} - s));
      });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return detail::unary<T>("relu", a, [](T x) { return x > T{0} ? x : T{0}; },
                          [](T x, T) { return x > T{0} ? T{1} : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions and reshapes
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& a) {
  T s{0};
  for (T v : a.value().vec()) s += v;
  Node<T>* na = a.node().get();
  return make_op<T>("sum", Tensor<T>::scalar(s), {a}, [=](const Tensor<T>& g) {
    accumulate(*na, [&](Tensor<T>& ga) {
      for (auto& v : ga.vec()) v += g[0];
    });
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return mul_scalar(sum(a), T{1} / static_cast<T>(a.size()));
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  Node<T>* na = a.node().get();
  return make_op<T>("reshape", std::move(out), {a}, [=](const Tensor<T>& g) {
    accumulate(*na, [&](Tensor<T>& ga) {
      for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k];
    });
  });
}

// ---------------------------------------------------------------------------
// Matrix product
// ---------------------------------------------------------------------------

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) throw ShapeError("matmul expects rank-2 operands");
  const std::size_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  if (b.dim(0) != K) {
    throw ShapeError("matmul inner extents differ: " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  }
  Tensor<T> out({M, N});
  kernels::gemm_nn(M, N, K, a.value().data(), b.value().data(), out.data());
  Node<T>* na = a.node().get();
  Node<T>* nb = b.node().get();
  Tensor<T> as = a.value();
  Tensor<T> bs = b.value();
  return make_op<T>("matmul", std::move(out), {a, b}, [=](const Tensor<T>& g) {
    // dA = dY·Bᵀ, dB = Aᵀ·dY
    accumulate(*na, [&](Tensor<T>& ga) { kernels::gemm_nt(M, K, N, g.data(), bs.data(), ga.data()); });
    accumulate(*nb, [&](Tensor<T>& gb) { kernels::gemm_tn(K, N, M, as.data(), g.data(), gb.data()); });
  });
}

// ---------------------------------------------------------------------------
// Convolutions (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

namespace detail {

template <class T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t OH, std::size_t OW, T* cols) {
  const std::size_t P = OH * OW;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* row = cols + ((c * kh + ky) * kw + kx) * P;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          T* dst = row + oy * OW;
          if (iy < 0 || iy >= static_cast<long>(H)) {
            std::fill(dst, dst + OW, T{0});
            continue;
          }
          const T* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(W)) ? T{0} : src[ix];
          }
        }
      }
}

template <class T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh, std::size_t kw,
            std::size_t stride, std::size_t pad, std::size_t OH, std::size_t OW, T* x) {
  const std::size_t P = OH * OW;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* row = cols + ((c * kh + ky) * kw + kx) * P;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          T* dst = x + (c * H + static_cast<std::size_t>(iy)) * W;
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(W)) dst[ix] += row[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

/// x: [Cin,H,W], w: [Cout,Cin,kh,kw], bias: [Cout]. Output extents
/// floor((H+2p-k)/stride)+1.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const std::optional<Var<T>>& bias, Conv2dOptions opt = {}) {
  if (x.shape().size() != 3 || w.shape().size() != 4) throw ShapeError("conv2d expects x[C,H,W] and w[O,C,kh,kw]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C) throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()));
  if (kh > H + 2 * opt.padding || kw > W + 2 * opt.padding) {
    throw KernelTooLarge("kernel " + std::to_string(kh) + "x" + std::to_string(kw) + " exceeds padded input " +
                         shape_str(x.shape()));
  }
  if (opt.stride == 0) throw ShapeError("conv2d stride must be positive");
  if (bias && (bias->shape().size() != 1 || bias->dim(0) != O)) throw ShapeError("conv2d bias must be [Cout]");
  const std::size_t OH = (H + 2 * opt.padding - kh) / opt.stride + 1;
  const std::size_t OW = (W + 2 * opt.padding - kw) / opt.stride + 1;
  const std::size_t P = OH * OW;
  const std::size_t K = C * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0;

  Tensor<T> cols;
  if (!pointwise) {
    cols = Tensor<T>({K, P});
    detail::im2col(x.value().data(), C, H, W, kh, kw, opt.stride, opt.padding, OH, OW, cols.data());
  }
  const T* colp = pointwise ? x.value().data() : cols.data();
  Tensor<T> out({O, OH, OW});
  if (bias) {
    for (std::size_t o = 0; o < O; ++o) std::fill(out.data() + o * P, out.data() + (o + 1) * P, bias->value()[o]);
  }
  kernels::gemm_nn(O, P, K, w.value().data(), colp, out.data());

  std::vector<Var<T>> inputs{x, w};
  if (bias) inputs.push_back(*bias);
  Node<T>* nx = x.node().get();
  Node<T>* nw = w.node().get();
  Node<T>* nb = bias ? bias->node().get() : nullptr;
  Tensor<T> saved_cols = pointwise ? x.value() : std::move(cols);
  Tensor<T> ws = w.value();
  return make_op<T>("conv2d", std::move(out), std::move(inputs), [=](const Tensor<T>& g) {
    accumulate(*nw, [&](Tensor<T>& gw) { kernels::gemm_nt(O, K, P, g.data(), saved_cols.data(), gw.data()); });
    if (nb) {
      accumulate(*nb, [&](Tensor<T>& gb) {
        for (std::size_t o = 0; o < O; ++o) {
          T s{0};
          for (std::size_t p = 0; p < P; ++p) s += g[o * P + p];
          gb[o] += s;
        }
      });
    }
    accumulate(*nx, [&](Tensor<T>& gx) {
      if (pointwise) {
        kernels::gemm_tn(K, P, O, ws.data(), g.data(), gx.data());
      } else {
        std::vector<T> gcols(K * P, T{0});
        kernels::gemm_tn(K, P, O, ws.data(), g.data(), gcols.data());
        detail::col2im(gcols.data(), C, H, W, kh, kw, opt.stride, opt.padding, OH, OW, gx.data());
      }
    });
  });
}

/// Per-channel spatial filter, stride 1, "same" padding. x: [C,H,W], w: [C,kh,kw]
/// with odd kh, kw; bias: [C].
template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  if (x.shape().size() != 3 || w.shape().size() != 3) throw ShapeError("depthwise_conv2d expects x[C,H,W], w[C,kh,kw]");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::size_t kh = w.dim(1), kw = w.dim(2);
  if (w.dim(0) != C || bias.size() != C) throw ShapeError("depthwise_conv2d channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("depthwise_conv2d needs odd kernel extents");
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  Tensor<T> out({C, H, W});
  const T* xv = x.value().data();
  const T* wv = w.value().data();
  for (std::size_t c = 0; c < C; ++c) {
    T* oc = out.data() + c * H * W;
    std::fill(oc, oc + H * W, bias.value()[c]);
    const T* xc = xv + c * H * W;
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T wk = wv[(c * kh + ky) * kw + kx];
        const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
        for (long y = 0; y < static_cast<long>(H); ++y) {
          const long iy = y + dy;
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          const long x0 = std::max<long>(0, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
          T* orow = oc + y * W;
          const T* irow = xc + iy * W + dx;
          for (long xx = x0; xx < x1; ++xx) orow[xx] += wk * irow[xx];
        }
      }
  }
  Node<T>* nx = x.node().get();
  Node<T>* nw = w.node().get();
  Node<T>* nb = bias.node().get();
  Tensor<T> xs = x.value();
  Tensor<T> ws = w.value();
  return make_op<T>("depthwise_conv2d", std::move(out), {x, w, bias}, [=](const Tensor<T>& g) {
    const bool want_x = nx->requires_grad, want_w = nw->requires_grad;
    Tensor<T>* gx = want_x ? &nx->ensure_grad() : nullptr;
    Tensor<T>* gw = want_w ? &nw->ensure_grad() : nullptr;
    for (std::size_t c = 0; c < C; ++c) {
      const T* gc = g.data() + c * H * W;
      const T* xc = xs.data() + c * H * W;
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t widx = (c * kh + ky) * kw + kx;
          const T wk = ws[widx];
          const long dy = static_cast<long>(ky) - ph, dx = static_cast<long>(kx) - pw;
          T acc{0};
          for (long y = 0; y < static_cast<long>(H); ++y) {
            const long iy = y + dy;
            if (iy < 0 || iy >= static_cast<long>(H)) continue;
            const long x0 = std::max<long>(0, -dx), x1 = std::min<long>(W, static_cast<long>(W) - dx);
            const T* grow = gc + y * W;
            const T* irow = xc + iy * W + dx;
            if (gx) {
              T* gxrow = gx->data() + c * H * W + iy * W + dx;
              for (long xx = x0; xx < x1; ++xx) gxrow[xx] += wk * grow[xx];
            }
            if (gw) {
              for (long xx = x0; xx < x1; ++xx) acc += grow[xx] * irow[xx];
            }
          }
          if (gw) (*gw)[widx] += acc;
        }
    }
    accumulate(*nb, [&](Tensor<T>& gb) {
      for (std::size_t c = 0; c < C; ++c) {
        T s{0};
        for (std::size_t p = 0; p < H * W; ++p) s += g[c * H * W + p];
        gb[c] += s;
      }
    });
  });
}

// ---------------------------------------------------------------------------
// Channel-wise operations on [C,H,W] maps
// ---------------------------------------------------------------------------

/// Layer normalization across channels at every spatial site.
template <class T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  if (x.shape().size() != 3) throw ShapeError("layer_norm_channels expects [C,H,W]");
  const std::size_t C = x.dim(0), P = x.dim(1) * x.dim(2);
  if (gamma.size() != C || beta.size() != C) throw ShapeError("layer_norm_channels affine size mismatch");
  const T* xv = x.value().data();
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(P);
  for (std::size_t p = 0; p < P; ++p) {
    T mu{0};
    for (std::size_t c = 0; c < C; ++c) mu += xv[c * P + p];
    mu /= static_cast<T>(C);
    T var{0};
    for (std::size_t c = 0; c < C; ++c) {
      const T d = xv[c * P + p] - mu;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[p] = is;
    for (std::size_t c = 0; c < C; ++c) {
      const T h = (xv[c * P + p] - mu) * is;
      xhat[c * P + p] = h;
      out[c * P + p] = h * gamma.value()[c] + beta.value()[c];
    }
  }
  Node<T>* nx = x.node().get();
  Node<T>* ng = gamma.node().get();
  Node<T>* nb = beta.node().get();
  Tensor<T> gs = gamma.value();
  return make_op<T>("layer_norm", std::move(out), {x, gamma, beta}, [=](const Tensor<T>& g) {
    accumulate(*ng, [&](Tensor<T>& gg) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) gg[c] += g[c * P + p] * xhat[c * P + p];
    });
    accumulate(*nb, [&](Tensor<T>& gb) {
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < P; ++p) gb[c] += g[c * P + p];
    });
    accumulate(*nx, [&](Tensor<T>& gx) {
      const T invC = T{1} / static_cast<T>(C);
      for (std::size_t p = 0; p < P; ++p) {
        T s1{0}, s2{0};
        for (std::size_t c = 0; c < C; ++c) {
          const T gh = g[c * P + p] * gs[c];
          s1 += gh;
          s2 += gh * xhat[c * P + p];
        }
        for (std::size_t c = 0; c < C; ++c) {
          const T gh = g[c * P + p] * gs[c];
          gx[c * P + p] += inv_std[p] * (gh - invC * s1 - xhat[c * P + p] * invC * s2);
        }
      }
    });
  });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels of nothing");
  const std::size_t H = parts[0].dim(1), W = parts[0].dim(2);
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != 3 || p.dim(1) != H || p.dim(2) != W) {
      throw ShapeError("concat_channels extent mismatch: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    C += p.dim(0);
  }
  Tensor<T> out({C, H, W});
  std::vector<std::size_t> offsets;
  std::vector<Node<T>*> nodes;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().vec().begin(), p.value().vec().end(), out.data() + off);
    offsets.push_back(off);
    nodes.push_back(p.node().get());
    off += p.size();
  }
  return make_op<T>("concat_channels", std::move(out), parts, [=](const Tensor<T>& g) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      accumulate(*nodes[i], [&](Tensor<T>& gi) {
        for (std::size_t k = 0; k < gi.size(); ++k) gi[k] += g[offsets[i] + k];
      });
    }
  });
}

template <class T>
Var<T> slice_channels(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (x.shape().size() != 3 || begin >= end || end > x.dim(0)) throw ShapeError("slice_channels out of range");
  const std::size_t P = x.dim(1) * x.dim(2);
  Tensor<T> out({end - begin, x.dim(1), x.dim(2)});
  std::copy(x.value().data() + begin * P, x.value().data() + end * P, out.data());
  Node<T>* nx = x.node().get();
  return make_op<T>("slice_channels", std::move(out), {x}, [=](const Tensor<T>& g) {
    accumulate(*nx, [&](Tensor<T>& gx) {
      for (std::size_t k = 0; k < g.size(); ++k) gx[begin * P + k] += g[k];
    });
  });
}

/// Softmax across channels at each site.
template <class T>
Var<T> softmax_channels(const Var<T>& x) {
  if (x.shape().size() != 3) throw ShapeError("softmax_channels expects [K,H,W]");
  const std::size_t K = x.dim(0), P = x.dim(1) * x.dim(2);
  Tensor<T> out(x.shape());
  const T* xv = x.value().data();
  for (std::size_t p = 0; p < P; ++p) {
    T m = xv[p];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, xv[k * P + p]);
    T s{0};
    for (std::size_t k = 0; k < K; ++k) {
      out[k * P + p] = std::exp(xv[k * P + p] - m);
      s += out[k * P + p];
    }
    for (std::size_t k = 0; k < K; ++k) out[k * P + p] /= s;
  }
  Node<T>* nx = x.node().get();
  Tensor<T> ys = out;
  return make_op<T>("softmax_channels", std::move(out), {x}, [=](const Tensor<T>& g) {
    accumulate(*nx, [&](Tensor<T>& gx) {
      for (std::size_t p = 0; p < P; ++p) {
        T dot{0};
        for (std::size_t k = 0; k < K; ++k) dot += g[k * P + p] * ys[k * P + p];
        for (std::size_t k = 0; k < K; ++k) gx[k * P + p] += ys[k * P + p] * (g[k * P + p] - dot);
      }
    });
  });
}

}  // namespace mcg
