#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "mcg/autodiff.hpp"
#include "mcg/parallel.hpp"
#include "mcg/scan1d.hpp"

namespace mcg::scan2d {

// A 2D selective scan runs, per state dimension, a horizontal recurrence along
// every row followed by a vertical recurrence along every column of the
// horizontal result, reusing the same transition a_{i,j} in both passes:
//
//   hh[i][j] = a[i][j] * hh[i][j-1] + u[i][j]        (hh[i][-1] = 0)
//   h [i][j] = a[i][j] * h [i-1][j] + hh[i][j]       (h[-1][j]  = 0)
//
// so h[i][j] gathers every upper-left input with a path-product decay.

/// Traversal direction of a scan over an H×W plane. Flipping both axes makes
/// the causal cone point to the upper-left instead of the lower-right.
struct Orientation {
  bool flip_rows = false;  // traverse rows bottom-to-top
  bool flip_cols = false;  // traverse columns right-to-left

  std::ptrdiff_t base(std::size_t H, std::size_t W) const {
    return static_cast<std::ptrdiff_t>((flip_rows ? (H - 1) * W : 0) + (flip_cols ? W - 1 : 0));
  }
  std::ptrdiff_t row_stride(std::size_t W) const {
    return flip_rows ? -static_cast<std::ptrdiff_t>(W) : static_cast<std::ptrdiff_t>(W);
  }
  std::ptrdiff_t col_stride() const { return flip_cols ? -1 : 1; }
  /// Offset of the first element of traversal row i.
  std::ptrdiff_t row_start(std::size_t i, std::size_t H, std::size_t W) const {
    const std::size_t r = flip_rows ? H - 1 - i : i;
    return static_cast<std::ptrdiff_t>(r * W);
  }
};

inline constexpr std::array<Orientation, 4> kFourWay{
    Orientation{false, false}, Orientation{false, true}, Orientation{true, false}, Orientation{true, true}};

/// TwoD: row pass then column pass. Flat1D: the plane is flattened row-major
/// (in traversal order) into one sequence and scanned once.
enum class ScanMode { TwoD, Flat1D };

// ---------------------------------------------------------------------------
// Plane kernels (one state dimension, contiguous H×W planes)
// ---------------------------------------------------------------------------

/// Fills hh (after the row pass) and h (final states). In Flat1D mode hh == h.
template <class T>
void plane_forward(const T* a, const T* u, T* hh, T* h, std::size_t H, std::size_t W, Orientation o,
                   ScanMode mode) {
  const std::ptrdiff_t base = o.base(H, W), rs = o.row_stride(W), cs = o.col_stride();
  if (mode == ScanMode::Flat1D) {
    T state{0};
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const std::ptrdiff_t k = base + static_cast<std::ptrdiff_t>(i) * rs + static_cast<std::ptrdiff_t>(j) * cs;
        state = a[k] * state + u[k];
        hh[k] = state;
        h[k] = state;
      }
    return;
  }
  // Row pass and column pass fused per row: the column step for row i runs
  // while row i of hh is still in cache, so large planes stream once.
  for (std::size_t i = 0; i < H; ++i) {
    const std::ptrdiff_t k0 = base + static_cast<std::ptrdiff_t>(i) * rs;
    scan1d::scan_strided(a + k0, u + k0, hh + k0, W, cs);
    const std::ptrdiff_t cur = o.row_start(i, H, W);
    if (i == 0) {
      std::copy(hh + cur, hh + cur + W, h + cur);
      continue;
    }
    const std::ptrdiff_t prev = o.row_start(i - 1, H, W);
    for (std::size_t j = 0; j < W; ++j) h[cur + j] = a[cur + j] * h[prev + j] + hh[cur + j];
  }
}

/// Adjoint of plane_forward. gh: dL/dh. Accumulates into ga and gu.
/// `scratch` must hold H*W values.
template <class T>
void plane_backward(const T* a, const T* hh, const T* h, const T* gh, T* ga, T* gu, T* scratch, std::size_t H,
                    std::size_t W, Orientation o, ScanMode mode) {
  const std::ptrdiff_t base = o.base(H, W), rs = o.row_stride(W), cs = o.col_stride();
  if (mode == ScanMode::Flat1D) {
    T lam{0};
    std::ptrdiff_t next = 0;
    bool has_next = false;
    for (std::size_t i = H; i-- > 0;)
      for (std::size_t j = W; j-- > 0;) {
        const std::ptrdiff_t k = base + static_cast<std::ptrdiff_t>(i) * rs + static_cast<std::ptrdiff_t>(j) * cs;
        lam = (has_next ? a[next] * lam : T{0}) + gh[k];
        gu[k] += lam;
        // predecessor in traversal order
        if (i > 0 || j > 0) {
          const std::ptrdiff_t pk = j > 0 ? k - cs : base + static_cast<std::ptrdiff_t>(i - 1) * rs + static_cast<std::ptrdiff_t>(W - 1) * cs;
          ga[k] += lam * h[pk];
        }
        next = k;
        has_next = true;
      }
    return;
  }
  // Column adjoint as a reverse row sweep; scratch holds dL/dhh.
  T* ghh = scratch;
  const std::ptrdiff_t last = o.row_start(H - 1, H, W);
  std::copy(gh + last, gh + last + W, ghh + last);
  for (std::size_t i = H - 1; i-- > 0;) {
    const std::ptrdiff_t cur = o.row_start(i, H, W), nxt = o.row_start(i + 1, H, W);
    for (std::size_t j = 0; j < W; ++j) ghh[cur + j] = gh[cur + j] + a[nxt + j] * ghh[nxt + j];
  }
  for (std::size_t i = 1; i < H; ++i) {
    const std::ptrdiff_t cur = o.row_start(i, H, W), prev = o.row_start(i - 1, H, W);
    for (std::size_t j = 0; j < W; ++j) ga[cur + j] += ghh[cur + j] * h[prev + j];
  }
  for (std::size_t i = 0; i < H; ++i) {
    const std::ptrdiff_t k0 = base + static_cast<std::ptrdiff_t>(i) * rs;
    scan1d::scan_strided_backward(a + k0, hh + k0, ghh + k0, ga + k0, gu + k0, W, cs);
  }
}

// ---------------------------------------------------------------------------
// Multi-state 2D scan: Y = Σ_d C^d ⊙ H^d
// ---------------------------------------------------------------------------

/// States saved by scan2d_forward for the backward pass.
template <class T>
struct Scan2dResult {
  Tensor<T> y;     // [H,W]
  Tensor<T> hhor;  // [N,H,W]
  Tensor<T> h;     // [N,H,W]
};

inline void check_planes(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": extent mismatch " + shape_str(a) + " vs " + shape_str(b));
}

/// scan2d_forward into caller-owned buffers (already shaped like its result).
template <class T>
void scan2d_forward_into(const Tensor<T>& a_bar, const Tensor<T>& bx, const Tensor<T>& c, Scan2dResult<T>& r) {
  if (a_bar.rank() != 3) throw ShapeError("scan2d_forward expects [N,H,W] planes");
  check_planes(a_bar.shape(), bx.shape(), "scan2d_forward");
  check_planes(a_bar.shape(), c.shape(), "scan2d_forward");
  const std::size_t N = a_bar.dim(0), H = a_bar.dim(1), W = a_bar.dim(2), P = H * W;
  if (r.y.shape() != Shape{H, W} || r.hhor.shape() != a_bar.shape() || r.h.shape() != a_bar.shape())
    throw ShapeError("scan2d_forward_into: result buffers have the wrong shape");
  // Rows outer, states inner: each input is read once and each output written
  // once, with only the previous row of every state plane live in cache.
  const T *a = a_bar.data(), *u = bx.data(), *cc = c.data();
  T *hh = r.hhor.data(), *h = r.h.data(), *y = r.y.data();
  std::fill(y, y + P, T{0});
  for (std::size_t i = 0; i < H; ++i) {
    T* yr = y + i * W;
    for (std::size_t d = 0; d < N; ++d) {
      const std::size_t cur = d * P + i * W;
      scan1d::scan_strided(a + cur, u + cur, hh + cur, W, 1);
      if (i == 0) std::copy(hh + cur, hh + cur + W, h + cur);
      else
        for (std::size_t j = 0; j < W; ++j) h[cur + j] = a[cur + j] * h[cur - W + j] + hh[cur + j];
      for (std::size_t j = 0; j < W; ++j) yr[j] += cc[cur + j] * h[cur + j];
    }
  }
}

/// a_bar, bx, c: [N,H,W] (one plane per state dimension).
template <class T>
Scan2dResult<T> scan2d_forward(const Tensor<T>& a_bar, const Tensor<T>& bx, const Tensor<T>& c) {
  if (a_bar.rank() != 3) throw ShapeError("scan2d_forward expects [N,H,W] planes");
  check_planes(a_bar.shape(), bx.shape(), "scan2d_forward");
  check_planes(a_bar.shape(), c.shape(), "scan2d_forward");
  Scan2dResult<T> r{Tensor<T>({a_bar.dim(1), a_bar.dim(2)}), Tensor<T>(a_bar.shape()), Tensor<T>(a_bar.shape())};
  scan2d_forward_into(a_bar, bx, c, r);
  return r;
}

/// Multi-threaded variant: the row pass is split across rows (each row a
/// chunked associative scan) and the column pass across column ranges.
template <class T>
Scan2dResult<T> scan2d_forward_parallel(const Tensor<T>& a_bar, const Tensor<T>& bx, const Tensor<T>& c,
                                        std::size_t threads, std::size_t chunk = 64) {
  if (a_bar.rank() != 3) throw ShapeError("scan2d_forward_parallel expects [N,H,W] planes");
  check_planes(a_bar.shape(), bx.shape(), "scan2d_forward_parallel");
  check_planes(a_bar.shape(), c.shape(), "scan2d_forward_parallel");
  const std::size_t N = a_bar.dim(0), H = a_bar.dim(1), W = a_bar.dim(2), P = H * W;
  Scan2dResult<T> r{Tensor<T>({H, W}), Tensor<T>(a_bar.shape()), Tensor<T>(a_bar.shape())};
  for (std::size_t d = 0; d < N; ++d) {
    const T* a = a_bar.data() + d * P;
    const T* u = bx.data() + d * P;
    T* hh = r.hhor.data() + d * P;
    T* h = r.h.data() + d * P;
    parallel_for(H, threads, [&](std::size_t rb, std::size_t re) {
      for (std::size_t i = rb; i < re; ++i) {
        scan1d::scan_parallel_contiguous(a + i * W, u + i * W, hh + i * W, W, {chunk, 1});
      }
    });
    parallel_for(W, threads, [&](std::size_t cb, std::size_t ce) {
      for (std::size_t j = cb; j < ce; ++j) h[j] = hh[j];
      for (std::size_t i = 1; i < H; ++i)
        for (std::size_t j = cb; j < ce; ++j) h[i * W + j] = a[i * W + j] * h[(i - 1) * W + j] + hh[i * W + j];
    });
    const T* cp = c.data() + d * P;
    for (std::size_t k = 0; k < P; ++k) r.y[k] += cp[k] * h[k];
  }
  return r;
}

/// Gradients of Σ grad_y ⊙ y with respect to a_bar, bx and c.
template <class T>
struct Scan2dGrads {
  Tensor<T> a_bar;
  Tensor<T> bx;
  Tensor<T> c;
};

template <class T>
Scan2dGrads<T> scan2d_backward(const Tensor<T>& grad_y, const Tensor<T>& a_bar, const Tensor<T>& c,
                               const Scan2dResult<T>& saved) {
  const std::size_t N = a_bar.dim(0), H = a_bar.dim(1), W = a_bar.dim(2), P = H * W;
  if (grad_y.size() != P) throw ShapeError("scan2d_backward: grad_y extent mismatch");
  Scan2dGrads<T> g{Tensor<T>(a_bar.shape()), Tensor<T>(a_bar.shape()), Tensor<T>(a_bar.shape())};
  std::vector<T> gh(P), scratch(P);
  for (std::size_t d = 0; d < N; ++d) {
    for (std::size_t k = 0; k < P; ++k) {
      gh[k] = grad_y[k] * c[d * P + k];
      g.c[d * P + k] = grad_y[k] * saved.h[d * P + k];
    }
    plane_backward(a_bar.data() + d * P, saved.hhor.data() + d * P, saved.h.data() + d * P, gh.data(),
                   g.a_bar.data() + d * P, g.bx.data() + d * P, scratch.data(), H, W, Orientation{}, ScanMode::TwoD);
  }
  return g;
}

/// Closed-form states for one plane, independent of the two-pass recurrence:
/// h[i][j] = Σ_{i'<=i, j'<=j} (Π_{l=i'+1..i} a[l][j]) (Π_{k=j'+1..j} a[i'][k]) u[i'][j'].
/// O((HW)^2); limited to H*W <= 1024.
template <class T>
Tensor<T> scan2d_oracle(const Tensor<T>& a_bar, const Tensor<T>& bx) {
  if (a_bar.rank() != 2) throw ShapeError("scan2d_oracle expects [H,W] planes");
  check_planes(a_bar.shape(), bx.shape(), "scan2d_oracle");
  const std::size_t H = a_bar.dim(0), W = a_bar.dim(1);
  if (H * W > 1024) throw ShapeError("scan2d_oracle is limited to 1024 positions");
  Tensor<T> h({H, W});
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      T acc{0};
      for (std::size_t ip = 0; ip <= i; ++ip) {
        T vert{1};
        for (std::size_t l = ip + 1; l <= i; ++l) vert *= a_bar.at(l, j);
        for (std::size_t jp = 0; jp <= j; ++jp) {
          T hor{1};
          for (std::size_t k = jp + 1; k <= j; ++k) hor *= a_bar.at(ip, k);
          acc += vert * hor * bx.at(ip, jp);
        }
      }
      h.at(i, j) = acc;
    }
  return h;
}

// ---------------------------------------------------------------------------
// Differentiable selective scan over a feature map
// ---------------------------------------------------------------------------

struct SelectiveScanConfig {
  ScanMode mode = ScanMode::TwoD;
  bool four_way = true;  // sum of the four flip orientations
};

/// Selective scan over D channels with N states each.
///   x, delta: [D,H,W]    input and Δ (already softplus'ed, >= 0)
///   log_a:    [D,N]      A = -exp(log_a)
///   b, c:     [N,H,W]    input-dependent B(x), C(x) shared across channels
/// y[d] = Σ_orient Σ_n c[n] ⊙ scan(exp(Δ_d A_dn), Δ_d b[n] x_d).
template <class T>
Var<T> selective_scan(const Var<T>& x, const Var<T>& delta, const Var<T>& log_a, const Var<T>& b, const Var<T>& c,
                      SelectiveScanConfig cfg = {}) {
  if (x.shape().size() != 3) throw ShapeError("selective_scan expects x[D,H,W]");
  const std::size_t D = x.dim(0), H = x.dim(1), W = x.dim(2), P = H * W;
  if (delta.shape() != x.shape()) throw ShapeError("selective_scan: delta must match x");
  if (log_a.shape().size() != 2 || log_a.dim(0) != D) throw ShapeError("selective_scan: log_a must be [D,N]");
  const std::size_t N = log_a.dim(1);
  const Shape bshape{N, H, W};
  if (b.shape() != bshape || c.shape() != bshape) throw ShapeError("selective_scan: b and c must be [N,H,W]");

  const std::size_t n_or = cfg.four_way ? 4 : 1;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& dv = delta.value();
  const Tensor<T>& bv = b.value();
  const Tensor<T>& cv = c.value();
  std::vector<T> A(D * N);
  for (std::size_t k = 0; k < D * N; ++k) A[k] = -std::exp(log_a.value()[k]);

  // Saved per (d, n): transition plane, and per orientation hh and h planes.
  Tensor<T> a_planes({D, N, P});
  Tensor<T> hh_planes({D, N, n_or, P});
  Tensor<T> h_planes({D, N, n_or, P});
  Tensor<T> y({D, H, W});
  std::vector<T> u(P);
  for (std::size_t d = 0; d < D; ++d) {
    const T* dd = dv.data() + d * P;
    const T* xd = xv.data() + d * P;
    T* yd = y.data() + d * P;
    for (std::size_t n = 0; n < N; ++n) {
      T* a = a_planes.data() + (d * N + n) * P;
      const T An = A[d * N + n];
      const T* bn = bv.data() + n * P;
      const T* cn = cv.data() + n * P;
      for (std::size_t k = 0; k < P; ++k) {
        a[k] = std::exp(dd[k] * An);
        u[k] = dd[k] * bn[k] * xd[k];
      }
      for (std::size_t o = 0; o < n_or; ++o) {
        T* hh = hh_planes.data() + ((d * N + n) * n_or + o) * P;
        T* h = h_planes.data() + ((d * N + n) * n_or + o) * P;
        plane_forward(a, u.data(), hh, h, H, W, kFourWay[o], cfg.mode);
        for (std::size_t k = 0; k < P; ++k) yd[k] += cn[k] * h[k];
      }
    }
  }
  if (!y.all_finite()) throw NumericError("selective_scan produced non-finite output");

  Node<T>* nx = x.node().get();
  Node<T>* ndl = delta.node().get();
  Node<T>* na = log_a.node().get();
  Node<T>* nb = b.node().get();
  Node<T>* nc = c.node().get();
  Tensor<T> xs = xv, ds = dv, bs = bv, cs = cv;
  return make_op<T>(
      "selective_scan", std::move(y), {x, delta, log_a, b, c},
      [=, a_planes = std::move(a_planes), hh_planes = std::move(hh_planes),
       h_planes = std::move(h_planes)](const Tensor<T>& gy) {
        Tensor<T>* gx = nx->requires_grad ? &nx->ensure_grad() : nullptr;
        Tensor<T>* gd = ndl->requires_grad ? &ndl->ensure_grad() : nullptr;
        Tensor<T>* gla = na->requires_grad ? &na->ensure_grad() : nullptr;
        Tensor<T>* gb = nb->requires_grad ? &nb->ensure_grad() : nullptr;
        Tensor<T>* gc = nc->requires_grad ? &nc->ensure_grad() : nullptr;
        std::vector<T> gh(P), ga(P), gu(P), scratch(P);
        for (std::size_t d = 0; d < D; ++d) {
          const T* gyd = gy.data() + d * P;
          const T* dd = ds.data() + d * P;
          const T* xd = xs.data() + d * P;
          for (std::size_t n = 0; n < N; ++n) {
            const T* a = a_planes.data() + (d * N + n) * P;
            const T* bn = bs.data() + n * P;
            const T* cn = cs.data() + n * P;
            const T An = A[d * N + n];
            std::fill(ga.begin(), ga.end(), T{0});
            std::fill(gu.begin(), gu.end(), T{0});
            for (std::size_t k = 0; k < P; ++k) gh[k] = gyd[k] * cn[k];
            for (std::size_t o = 0; o < n_or; ++o) {
              const T* hh = hh_planes.data() + ((d * N + n) * n_or + o) * P;
              const T* h = h_planes.data() + ((d * N + n) * n_or + o) * P;
              if (gc) {
                T* gcn = gc->data() + n * P;
                for (std::size_t k = 0; k < P; ++k) gcn[k] += gyd[k] * h[k];
              }
              plane_backward(a, hh, h, gh.data(), ga.data(), gu.data(), scratch.data(), H, W, kFourWay[o], cfg.mode);
            }
            // a = exp(Δ A), u = Δ b x
            T gA{0};
            for (std::size_t k = 0; k < P; ++k) {
              const T gak = ga[k] * a[k];
              gA += gak * dd[k];
              if (gd) (*gd)[d * P + k] += gak * An + gu[k] * bn[k] * xd[k];
              if (gb) (*gb)[n * P + k] += gu[k] * dd[k] * xd[k];
              if (gx) (*gx)[d * P + k] += gu[k] * dd[k] * bn[k];
            }
            if (gla) (*gla)[d * N + n] += gA * An;  // dA/dlog_a = A
          }
        }
      });
}

}  // namespace mcg::scan2d
