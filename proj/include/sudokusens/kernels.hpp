#pragma once

// Dense compute kernels. kern::ref holds the naive serial reference
// implementations used by tests and benchmarks; kern::omp holds the
// OpenMP variants the library actually calls. Both produce identical
// results for any thread count: every output element is owned by exactly
// one thread and reduced in a fixed serial order.

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sudoku::kern {

namespace detail {
// truncating int division adjusted to ceil/floor for negative numerators
inline int64_t div_ceil(int64_t p, int64_t q) {
  return p > 0 ? (p + q - 1) / q : p / q;
}
inline int64_t div_floor(int64_t p, int64_t q) {
  return p >= 0 ? p / q : -((-p + q - 1) / q);
}
} // namespace detail

struct Conv2dDims {
  int64_t n, ci, h, w;     // input [n, ci, h, w]
  int64_t co, kh, kw;      // weight [co, ci, kh, kw]
  int64_t sh, sw, ph, pw;  // stride, zero padding
  int64_t oh() const { return (h + 2 * ph - kh) / sh + 1; }
  int64_t ow() const { return (w + 2 * pw - kw) / sw + 1; }
};

struct ConvT2dDims {
  int64_t n, ci, h, w;     // input [n, ci, h, w]
  int64_t co, kh, kw;      // weight [ci, co, kh, kw]
  int64_t sh, sw, ph, pw;  // stride, zero padding
  int64_t oph, opw;        // output padding, must be < stride
  int64_t oh() const { return (h - 1) * sh - 2 * ph + kh + oph; }
  int64_t ow() const { return (w - 1) * sw - 2 * pw + kw + opw; }
};

// A transposed convolution is the input-gradient of a virtual forward
// convolution whose input has the transposed convolution's output shape.
// The weight layouts coincide: convT [ci, co, kh, kw] == conv [co', ci', ..]
// with co' = ci, ci' = co.
inline Conv2dDims convt_as_conv(const ConvT2dDims& t) {
  if (t.oph >= t.sh || t.opw >= t.sw)
    throw std::invalid_argument("conv_transpose: output padding >= stride");
  return Conv2dDims{t.n, t.co, t.oh(), t.ow(), t.ci,
                    t.kh, t.kw, t.sh,  t.sw,  t.ph, t.pw};
}

namespace ref {

// C[M,N] = op(A) * op(B), row-major. op(A) is A [M,K] or, when ta, the
// transpose of A stored [K,M]; likewise op(B) is B [K,N] or B stored [N,K].
template <typename T>
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const T* A,
          const T* B, T* C, bool accumulate = false) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) {
      T acc = accumulate ? C[i * N + j] : T(0);
      for (int64_t k = 0; k < K; ++k) {
        T a = ta ? A[k * M + i] : A[i * K + k];
        T b = tb ? B[j * K + k] : B[k * N + j];
        acc += a * b;
      }
      C[i * N + j] = acc;
    }
}

template <typename T>
void conv2d_fwd(const Conv2dDims& d, const T* x, const T* w, T* y) {
  const int64_t OH = d.oh(), OW = d.ow();
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.co; ++co)
      for (int64_t o = 0; o < OH; ++o)
        for (int64_t p = 0; p < OW; ++p) {
          T acc = 0;
          for (int64_t ci = 0; ci < d.ci; ++ci)
            for (int64_t a = 0; a < d.kh; ++a)
              for (int64_t b = 0; b < d.kw; ++b) {
                int64_t i = o * d.sh - d.ph + a;
                int64_t j = p * d.sw - d.pw + b;
                if (i < 0 || i >= d.h || j < 0 || j >= d.w) continue;
                acc += x[((n * d.ci + ci) * d.h + i) * d.w + j] *
                       w[((co * d.ci + ci) * d.kh + a) * d.kw + b];
              }
          y[((n * d.co + co) * OH + o) * OW + p] = acc;
        }
}

template <typename T>
void conv2d_bwd_input(const Conv2dDims& d, const T* gy, const T* w, T* gx) {
  const int64_t OH = d.oh(), OW = d.ow();
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t ci = 0; ci < d.ci; ++ci)
      for (int64_t i = 0; i < d.h; ++i)
        for (int64_t j = 0; j < d.w; ++j) {
          T acc = 0;
          for (int64_t co = 0; co < d.co; ++co)
            for (int64_t a = 0; a < d.kh; ++a)
              for (int64_t b = 0; b < d.kw; ++b) {
                int64_t oi = i + d.ph - a;
                int64_t oj = j + d.pw - b;
                if (oi % d.sh != 0 || oj % d.sw != 0) continue;
                int64_t o = oi / d.sh, p = oj / d.sw;
                if (o < 0 || o >= OH || p < 0 || p >= OW) continue;
                acc += gy[((n * d.co + co) * OH + o) * OW + p] *
                       w[((co * d.ci + ci) * d.kh + a) * d.kw + b];
              }
          gx[((n * d.ci + ci) * d.h + i) * d.w + j] = acc;
        }
}

template <typename T>
void conv2d_bwd_weight(const Conv2dDims& d, const T* x, const T* gy, T* gw) {
  const int64_t OH = d.oh(), OW = d.ow();
  for (int64_t co = 0; co < d.co; ++co)
    for (int64_t ci = 0; ci < d.ci; ++ci)
      for (int64_t a = 0; a < d.kh; ++a)
        for (int64_t b = 0; b < d.kw; ++b) {
          T acc = 0;
          for (int64_t n = 0; n < d.n; ++n)
            for (int64_t o = 0; o < OH; ++o)
              for (int64_t p = 0; p < OW; ++p) {
                int64_t i = o * d.sh - d.ph + a;
                int64_t j = p * d.sw - d.pw + b;
                if (i < 0 || i >= d.h || j < 0 || j >= d.w) continue;
                acc += gy[((n * d.co + co) * OH + o) * OW + p] *
                       x[((n * d.ci + ci) * d.h + i) * d.w + j];
              }
          gw[((co * d.ci + ci) * d.kh + a) * d.kw + b] = acc;
        }
}

template <typename T>
void convt2d_fwd(const ConvT2dDims& t, const T* x, const T* w, T* y) {
  conv2d_bwd_input(convt_as_conv(t), x, w, y);
}

template <typename T>
void convt2d_bwd_input(const ConvT2dDims& t, const T* gy, const T* w, T* gx) {
  conv2d_fwd(convt_as_conv(t), gy, w, gx);
}

template <typename T>
void convt2d_bwd_weight(const ConvT2dDims& t, const T* x, const T* gy, T* gw) {
  conv2d_bwd_weight(convt_as_conv(t), gy, x, gw);
}

} // namespace ref

namespace omp {

template <typename T>
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, const T* A,
          const T* B, T* C, bool accumulate = false) {
  // A transposed B is copied once into [K, N] scratch so the hot loop is
  // always a contiguous row update; term order stays k-ascending, matching
  // ref bit for bit. Each thread owns whole rows of C.
  std::vector<T> bt;
  const T* Bp = B;
  if (tb) {
    bt.resize(static_cast<size_t>(K * N));
    for (int64_t j = 0; j < N; ++j)
      for (int64_t k = 0; k < K; ++k) bt[static_cast<size_t>(k * N + j)] = B[j * K + k];
    Bp = bt.data();
  }
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < M; ++i) {
    T* crow = C + i * N;
    if (!accumulate)
      for (int64_t j = 0; j < N; ++j) crow[j] = T(0);
    for (int64_t k = 0; k < K; ++k) {
      T a = ta ? A[k * M + i] : A[i * K + k];
      const T* brow = Bp + k * N;
      for (int64_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

template <typename T>
void conv2d_fwd(const Conv2dDims& d, const T* x, const T* w, T* y) {
  // Padding bounds are hoisted out of the hot loop, which becomes a
  // contiguous row update over p. Per output element the terms still land
  // in (ci, a, b) order, so results match ref bit for bit.
  const int64_t OH = d.oh(), OW = d.ow();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t co = 0; co < d.co; ++co) {
      T* yplane = y + (n * d.co + co) * OH * OW;
      for (int64_t e = 0; e < OH * OW; ++e) yplane[e] = T(0);
      for (int64_t ci = 0; ci < d.ci; ++ci) {
        const T* xplane = x + (n * d.ci + ci) * d.h * d.w;
        const T* wplane = w + (co * d.ci + ci) * d.kh * d.kw;
        for (int64_t a = 0; a < d.kh; ++a) {
          const int64_t o_lo =
              std::max<int64_t>(0, detail::div_ceil(d.ph - a, d.sh));
          const int64_t o_hi =
              std::min(OH - 1, detail::div_floor(d.h - 1 + d.ph - a, d.sh));
          for (int64_t b = 0; b < d.kw; ++b) {
            const T wv = wplane[a * d.kw + b];
            const int64_t p_lo =
                std::max<int64_t>(0, detail::div_ceil(d.pw - b, d.sw));
            const int64_t p_hi =
                std::min(OW - 1, detail::div_floor(d.w - 1 + d.pw - b, d.sw));
            const int64_t cnt = p_hi - p_lo + 1;
            for (int64_t o = o_lo; o <= o_hi; ++o) {
              const T* xrow = xplane + (o * d.sh - d.ph + a) * d.w +
                              (p_lo * d.sw - d.pw + b);
              T* yrow = yplane + o * OW + p_lo;
              if (d.sw == 1)
                for (int64_t p = 0; p < cnt; ++p) yrow[p] += wv * xrow[p];
              else
                for (int64_t p = 0; p < cnt; ++p) yrow[p] += wv * xrow[p * d.sw];
            }
          }
        }
      }
    }
}

template <typename T>
void conv2d_bwd_input(const Conv2dDims& d, const T* gy, const T* w, T* gx) {
  // Scatter form of the gather in ref: per gx element the contributing
  // (co, a, b) terms still arrive in ascending order, so results match ref
  // bit for bit. Threads own whole (n, ci) planes.
  const int64_t OH = d.oh(), OW = d.ow();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t n = 0; n < d.n; ++n)
    for (int64_t ci = 0; ci < d.ci; ++ci) {
      T* gplane = gx + (n * d.ci + ci) * d.h * d.w;
      for (int64_t e = 0; e < d.h * d.w; ++e) gplane[e] = T(0);
      for (int64_t co = 0; co < d.co; ++co) {
        const T* gyplane = gy + (n * d.co + co) * OH * OW;
        const T* wplane = w + (co * d.ci + ci) * d.kh * d.kw;
        for (int64_t a = 0; a < d.kh; ++a) {
          const int64_t o_lo =
              std::max<int64_t>(0, detail::div_ceil(d.ph - a, d.sh));
          const int64_t o_hi =
              std::min(OH - 1, detail::div_floor(d.h - 1 + d.ph - a, d.sh));
          for (int64_t b = 0; b < d.kw; ++b) {
            const T wv = wplane[a * d.kw + b];
            const int64_t p_lo =
                std::max<int64_t>(0, detail::div_ceil(d.pw - b, d.sw));
            const int64_t p_hi =
                std::min(OW - 1, detail::div_floor(d.w - 1 + d.pw - b, d.sw));
            for (int64_t o = o_lo; o <= o_hi; ++o) {
              const T* grow = gyplane + o * OW;
              T* gxrow = gplane + (o * d.sh - d.ph + a) * d.w - d.pw + b;
              if (d.sw == 1)
                for (int64_t p = p_lo; p <= p_hi; ++p) gxrow[p] += wv * grow[p];
              else
                for (int64_t p = p_lo; p <= p_hi; ++p)
                  gxrow[p * d.sw] += wv * grow[p];
            }
          }
        }
      }
    }
}

template <typename T>
void conv2d_bwd_weight(const Conv2dDims& d, const T* x, const T* gy, T* gw) {
  // Same (n, o, p) term order as ref with the padding bounds hoisted.
  const int64_t OH = d.oh(), OW = d.ow();
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < d.co; ++co)
    for (int64_t ci = 0; ci < d.ci; ++ci) {
      T* wplane = gw + (co * d.ci + ci) * d.kh * d.kw;
      for (int64_t a = 0; a < d.kh; ++a) {
        const int64_t o_lo =
            std::max<int64_t>(0, detail::div_ceil(d.ph - a, d.sh));
        const int64_t o_hi =
            std::min(OH - 1, detail::div_floor(d.h - 1 + d.ph - a, d.sh));
        for (int64_t b = 0; b < d.kw; ++b) {
          const int64_t p_lo =
              std::max<int64_t>(0, detail::div_ceil(d.pw - b, d.sw));
          const int64_t p_hi =
              std::min(OW - 1, detail::div_floor(d.w - 1 + d.pw - b, d.sw));
          T acc = 0;
          for (int64_t n = 0; n < d.n; ++n) {
            const T* gyplane = gy + (n * d.co + co) * OH * OW;
            const T* xplane = x + (n * d.ci + ci) * d.h * d.w;
            for (int64_t o = o_lo; o <= o_hi; ++o) {
              const T* grow = gyplane + o * OW;
              const T* xrow =
                  xplane + (o * d.sh - d.ph + a) * d.w - d.pw + b;
              if (d.sw == 1)
                for (int64_t p = p_lo; p <= p_hi; ++p) acc += grow[p] * xrow[p];
              else
                for (int64_t p = p_lo; p <= p_hi; ++p)
                  acc += grow[p] * xrow[p * d.sw];
            }
          }
          wplane[a * d.kw + b] = acc;
        }
      }
    }
}

template <typename T>
void convt2d_fwd(const ConvT2dDims& t, const T* x, const T* w, T* y) {
  conv2d_bwd_input(convt_as_conv(t), x, w, y);
}

template <typename T>
void convt2d_bwd_input(const ConvT2dDims& t, const T* gy, const T* w, T* gx) {
  conv2d_fwd(convt_as_conv(t), gy, w, gx);
}

template <typename T>
void convt2d_bwd_weight(const ConvT2dDims& t, const T* x, const T* gy, T* gw) {
  conv2d_bwd_weight(convt_as_conv(t), gy, x, gw);
}

} // namespace omp

} // namespace sudoku::kern
