#pragma once

// Tape-based reverse-mode autodiff over Tensor<T>. A Graph owns the tape;
// Var is a cheap handle (graph pointer + node id). Ops append nodes in
// topological order, so backward() is a single reverse sweep. Node values
// are immutable once created; backward closures reference operands by node
// id and capture only intermediates that are not themselves node values.

#include <algorithm>
#include <array>
#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sudokusens/kernels.hpp"
#include "sudokusens/tensor.hpp"

namespace sudoku::ag {

template <typename T>
class Graph;

template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;
  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<T>& val() const;
};

template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void(Graph&)> back;
    bool needs_grad = false;
  };

  Var<T> leaf(Tensor<T> v, bool needs_grad = false) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, nullptr, needs_grad});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> make(Tensor<T> v, bool needs_grad) {
    nodes_.push_back(Node{std::move(v), Tensor<T>{}, nullptr, needs_grad});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_back(int id, std::function<void(Graph&)> fn) {
    nodes_[static_cast<size_t>(id)].back = std::move(fn);
  }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  Tensor<T>& grad(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  const Tensor<T>& grad(Var<T> v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse. root must be
  // a single-element tensor.
  void backward(Var<T> root) {
    if (root.g != this) throw std::invalid_argument("backward: foreign var");
    auto& rn = nodes_[static_cast<size_t>(root.id)];
    if (rn.val.numel() != 1)
      throw std::invalid_argument("backward: root is not scalar");
    for (int i = 0; i <= root.id; ++i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      n.grad = Tensor<T>(n.val.shape, T(0));
    }
    rn.grad.data[0] = T(1);
    for (int i = root.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<size_t>(i)];
      if (n.needs_grad && n.back) n.back(*this);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::val() const {
  return g->val(id);
}

namespace detail {

template <typename T>
void accum(Tensor<T>& dst, const Tensor<T>& src) {
  assert(dst.numel() == src.numel());
  T* d = dst.data.data();
  const T* s = src.data.data();
  for (int64_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

template <typename T>
void check_same_graph(Var<T> a, Var<T> b) {
  if (a.g != b.g) throw std::invalid_argument("vars from different graphs");
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                      const char* who) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(who) + ": shape mismatch " +
                                a.shape_str() + " vs " + b.shape_str());
}

} // namespace detail

// ---- elementwise ----

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_same_graph(a, b);
  detail::check_same_shape(a.val(), b.val(), "add");
  Graph<T>& g = *a.g;
  Tensor<T> out(a.val().shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[static_cast<size_t>(i)] =
        a.val().data[static_cast<size_t>(i)] + b.val().data[static_cast<size_t>(i)];
  bool needs = g.needs_grad(a.id) || g.needs_grad(b.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = b.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(aid)) detail::accum(gr.grad(aid), gy);
      if (gr.needs_grad(bid)) detail::accum(gr.grad(bid), gy);
    });
  }
  return y;
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::check_same_graph(a, b);
  detail::check_same_shape(a.val(), b.val(), "sub");
  Graph<T>& g = *a.g;
  Tensor<T> out(a.val().shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[static_cast<size_t>(i)] =
        a.val().data[static_cast<size_t>(i)] - b.val().data[static_cast<size_t>(i)];
  bool needs = g.needs_grad(a.id) || g.needs_grad(b.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = b.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(aid)) detail::accum(gr.grad(aid), gy);
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        for (int64_t i = 0; i < db.numel(); ++i)
          db.data[static_cast<size_t>(i)] -= gy.data[static_cast<size_t>(i)];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::check_same_graph(a, b);
  detail::check_same_shape(a.val(), b.val(), "mul");
  Graph<T>& g = *a.g;
  Tensor<T> out(a.val().shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[static_cast<size_t>(i)] =
        a.val().data[static_cast<size_t>(i)] * b.val().data[static_cast<size_t>(i)];
  bool needs = g.needs_grad(a.id) || g.needs_grad(b.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = b.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(aid)) {
        auto& da = gr.grad(aid);
        const auto& bv = gr.val(bid);
        for (int64_t i = 0; i < da.numel(); ++i)
          da.data[static_cast<size_t>(i)] +=
              gy.data[static_cast<size_t>(i)] * bv.data[static_cast<size_t>(i)];
      }
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        const auto& av = gr.val(aid);
        for (int64_t i = 0; i < db.numel(); ++i)
          db.data[static_cast<size_t>(i)] +=
              gy.data[static_cast<size_t>(i)] * av.data[static_cast<size_t>(i)];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> scale(Var<T> a, double s) {
  Graph<T>& g = *a.g;
  Tensor<T> out(a.val().shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[static_cast<size_t>(i)] =
        static_cast<T>(s) * a.val().data[static_cast<size_t>(i)];
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, s](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      auto& da = gr.grad(aid);
      for (int64_t i = 0; i < da.numel(); ++i)
        da.data[static_cast<size_t>(i)] +=
            static_cast<T>(s) * gy.data[static_cast<size_t>(i)];
    });
  }
  return y;
}

template <typename T>
Var<T> add_scalar(Var<T> a, double s) {
  Graph<T>& g = *a.g;
  Tensor<T> out(a.val().shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[static_cast<size_t>(i)] =
        a.val().data[static_cast<size_t>(i)] + static_cast<T>(s);
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid](Graph<T>& gr) {
      detail::accum(gr.grad(aid), gr.grad(yid));
    });
  }
  return y;
}

// ---- unary ops via a shared helper; `back` maps (x, y, gy) to dx ----

template <typename T, typename FwdFn, typename BackFn>
Var<T> unary_op(Var<T> a, const char* name, FwdFn fwd, BackFn back) {
  (void)name;
  Graph<T>& g = *a.g;
  Tensor<T> out(a.val().shape);
  for (int64_t i = 0; i < out.numel(); ++i)
    out.data[static_cast<size_t>(i)] = fwd(a.val().data[static_cast<size_t>(i)]);
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, back](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const auto& xv = gr.val(aid);
      const auto& yv = gr.val(yid);
      auto& da = gr.grad(aid);
      for (int64_t i = 0; i < da.numel(); ++i)
        da.data[static_cast<size_t>(i)] +=
            back(xv.data[static_cast<size_t>(i)], yv.data[static_cast<size_t>(i)],
                 gy.data[static_cast<size_t>(i)]);
    });
  }
  return y;
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary_op(
      a, "relu", [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T gy) { return x > T(0) ? gy : T(0); });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary_op(
      a, "sigmoid",
      [](T x) { return T(1) / (T(1) + std::exp(-x)); },
      [](T, T y, T gy) { return gy * y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  return unary_op(
      a, "tanh", [](T x) { return std::tanh(x); },
      [](T, T y, T gy) { return gy * (T(1) - y * y); });
}

template <typename T>
Var<T> exp(Var<T> a) {
  return unary_op(
      a, "exp", [](T x) { return std::exp(x); },
      [](T, T y, T gy) { return gy * y; });
}

template <typename T>
Var<T> log(Var<T> a) {
  return unary_op(
      a, "log", [](T x) { return std::log(x); },
      [](T x, T, T gy) { return gy / x; });
}

template <typename T>
Var<T> clamp_min(Var<T> a, double m) {
  const T tm = static_cast<T>(m);
  return unary_op(
      a, "clamp_min", [tm](T x) { return x < tm ? tm : x; },
      [tm](T x, T, T gy) { return x < tm ? T(0) : gy; });
}

template <typename T>
Var<T> square(Var<T> a) {
  return unary_op(
      a, "square", [](T x) { return x * x; },
      [](T x, T, T gy) { return gy * T(2) * x; });
}

// ---- broadcast adds ----

// a [R, C] + bias [C], broadcast over rows.
template <typename T>
Var<T> add_rows(Var<T> a, Var<T> bias) {
  detail::check_same_graph(a, bias);
  const auto& av = a.val();
  const auto& bv = bias.val();
  if (av.rank() != 2 || bv.rank() != 1 || bv.dim(0) != av.dim(1))
    throw std::invalid_argument("add_rows: want [R,C] + [C], got " +
                                av.shape_str() + " + " + bv.shape_str());
  const int64_t R = av.dim(0), C = av.dim(1);
  Tensor<T> out(av.shape);
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < C; ++c)
      out.data[static_cast<size_t>(r * C + c)] =
          av.data[static_cast<size_t>(r * C + c)] + bv.data[static_cast<size_t>(c)];
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id) || g.needs_grad(bias.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = bias.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid, R, C](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(aid)) detail::accum(gr.grad(aid), gy);
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        for (int64_t c = 0; c < C; ++c) {
          T acc = 0;
          for (int64_t r = 0; r < R; ++r)
            acc += gy.data[static_cast<size_t>(r * C + c)];
          db.data[static_cast<size_t>(c)] += acc;
        }
      }
    });
  }
  return y;
}

// a [N, C, H, W] + bias [C], broadcast over n, h, w.
template <typename T>
Var<T> add_channels(Var<T> a, Var<T> bias) {
  detail::check_same_graph(a, bias);
  const auto& av = a.val();
  const auto& bv = bias.val();
  if (av.rank() != 4 || bv.rank() != 1 || bv.dim(0) != av.dim(1))
    throw std::invalid_argument("add_channels: want [N,C,H,W] + [C], got " +
                                av.shape_str() + " + " + bv.shape_str());
  const int64_t N = av.dim(0), C = av.dim(1), HW = av.dim(2) * av.dim(3);
  Tensor<T> out(av.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T b = bv.data[static_cast<size_t>(c)];
      const int64_t base = (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i)
        out.data[static_cast<size_t>(base + i)] =
            av.data[static_cast<size_t>(base + i)] + b;
    }
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id) || g.needs_grad(bias.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = bias.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid, N, C, HW](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(aid)) detail::accum(gr.grad(aid), gy);
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        for (int64_t c = 0; c < C; ++c) {
          T acc = 0;
          for (int64_t n = 0; n < N; ++n) {
            const int64_t base = (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i)
              acc += gy.data[static_cast<size_t>(base + i)];
          }
          db.data[static_cast<size_t>(c)] += acc;
        }
      }
    });
  }
  return y;
}

// ---- matmul ----

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool ta = false, bool tb = false) {
  detail::check_same_graph(a, b);
  const auto& av = a.val();
  const auto& bv = b.val();
  if (av.rank() != 2 || bv.rank() != 2)
    throw std::invalid_argument("matmul: rank-2 operands required");
  const int64_t M = ta ? av.dim(1) : av.dim(0);
  const int64_t K = ta ? av.dim(0) : av.dim(1);
  const int64_t Kb = tb ? bv.dim(1) : bv.dim(0);
  const int64_t N = tb ? bv.dim(0) : bv.dim(1);
  if (K != Kb)
    throw std::invalid_argument("matmul: inner dim mismatch " + av.shape_str() +
                                " x " + bv.shape_str());
  Tensor<T> out({M, N});
  kern::omp::gemm(ta, tb, M, N, K, av.ptr(), bv.ptr(), out.ptr());
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id) || g.needs_grad(b.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = b.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid, ta, tb, M, N, K](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const auto& av2 = gr.val(aid);
      const auto& bv2 = gr.val(bid);
      if (gr.needs_grad(aid)) {
        auto& da = gr.grad(aid);
        if (!ta) {
          // dA[M,K] = gy[M,N] * op(B)^T
          kern::omp::gemm(false, !tb, M, K, N, gy.ptr(), bv2.ptr(), da.ptr(),
                          true);
        } else {
          // A stored [K,M]; dA = op(B) * gy^T
          kern::omp::gemm(tb, true, K, M, N, bv2.ptr(), gy.ptr(), da.ptr(),
                          true);
        }
      }
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        if (!tb) {
          // dB[K,N] = op(A)^T * gy
          kern::omp::gemm(!ta, false, K, N, M, av2.ptr(), gy.ptr(), db.ptr(),
                          true);
        } else {
          // B stored [N,K]; dB = gy^T * op(A)
          kern::omp::gemm(true, ta, N, K, M, gy.ptr(), av2.ptr(), db.ptr(),
                          true);
        }
      }
    });
  }
  return y;
}

// ---- shape ops ----

template <typename T>
Var<T> reshape(Var<T> a, std::vector<int64_t> shape) {
  Graph<T>& g = *a.g;
  Tensor<T> out = a.val().reshaped(shape);
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid](Graph<T>& gr) {
      detail::accum(gr.grad(aid), gr.grad(yid));
    });
  }
  return y;
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Graph<T>& g = *parts[0].g;
  const int64_t R = parts[0].val().dim(0);
  int64_t Ctot = 0;
  for (const auto& p : parts) {
    detail::check_same_graph(parts[0], p);
    if (p.val().rank() != 2 || p.val().dim(0) != R)
      throw std::invalid_argument("concat_cols: row mismatch");
    Ctot += p.val().dim(1);
  }
  Tensor<T> out({R, Ctot});
  bool needs = false;
  std::vector<int> ids;
  std::vector<int64_t> widths;
  int64_t off = 0;
  for (const auto& p : parts) {
    const auto& pv = p.val();
    const int64_t C = pv.dim(1);
    for (int64_t r = 0; r < R; ++r)
      for (int64_t c = 0; c < C; ++c)
        out.data[static_cast<size_t>(r * Ctot + off + c)] =
            pv.data[static_cast<size_t>(r * C + c)];
    off += C;
    needs = needs || g.needs_grad(p.id);
    ids.push_back(p.id);
    widths.push_back(C);
  }
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int yid = y.id;
    g.set_back(yid, [ids, widths, yid, R, Ctot](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      int64_t off2 = 0;
      for (size_t k = 0; k < ids.size(); ++k) {
        const int64_t C = widths[k];
        if (gr.needs_grad(ids[k])) {
          auto& dp = gr.grad(ids[k]);
          for (int64_t r = 0; r < R; ++r)
            for (int64_t c = 0; c < C; ++c)
              dp.data[static_cast<size_t>(r * C + c)] +=
                  gy.data[static_cast<size_t>(r * Ctot + off2 + c)];
        }
        off2 += C;
      }
    });
  }
  return y;
}

template <typename T>
Var<T> slice_cols(Var<T> a, int64_t c0, int64_t c1) {
  const auto& av = a.val();
  if (av.rank() != 2 || c0 < 0 || c1 > av.dim(1) || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range");
  const int64_t R = av.dim(0), C = av.dim(1), W = c1 - c0;
  Tensor<T> out({R, W});
  for (int64_t r = 0; r < R; ++r)
    for (int64_t c = 0; c < W; ++c)
      out.data[static_cast<size_t>(r * W + c)] =
          av.data[static_cast<size_t>(r * C + c0 + c)];
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, R, C, W, c0](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      auto& da = gr.grad(aid);
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < W; ++c)
          da.data[static_cast<size_t>(r * C + c0 + c)] +=
              gy.data[static_cast<size_t>(r * W + c)];
    });
  }
  return y;
}

// a [N, S, F] -> [N, F] at step t.
template <typename T>
Var<T> slice_time(Var<T> a, int64_t t) {
  const auto& av = a.val();
  if (av.rank() != 3 || t < 0 || t >= av.dim(1))
    throw std::invalid_argument("slice_time: bad index");
  const int64_t N = av.dim(0), S = av.dim(1), F = av.dim(2);
  Tensor<T> out({N, F});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t f = 0; f < F; ++f)
      out.data[static_cast<size_t>(n * F + f)] =
          av.data[static_cast<size_t>((n * S + t) * F + f)];
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, N, S, F, t](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      auto& da = gr.grad(aid);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t f = 0; f < F; ++f)
          da.data[static_cast<size_t>((n * S + t) * F + f)] +=
              gy.data[static_cast<size_t>(n * F + f)];
    });
  }
  return y;
}

// ---- reductions ----

template <typename T>
Var<T> reduce_sum_all(Var<T> a) {
  Graph<T>& g = *a.g;
  T acc = 0;
  for (int64_t i = 0; i < a.val().numel(); ++i)
    acc += a.val().data[static_cast<size_t>(i)];
  Tensor<T> out({1});
  out.data[0] = acc;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid](Graph<T>& gr) {
      const T gy = gr.grad(yid).data[0];
      auto& da = gr.grad(aid);
      for (int64_t i = 0; i < da.numel(); ++i)
        da.data[static_cast<size_t>(i)] += gy;
    });
  }
  return y;
}

template <typename T>
Var<T> reduce_mean_all(Var<T> a) {
  const double inv = 1.0 / static_cast<double>(a.val().numel());
  return scale(reduce_sum_all(a), inv);
}

// a [N, S, F] -> mean over S -> [N, F].
template <typename T>
Var<T> reduce_mean_dim1(Var<T> a) {
  const auto& av = a.val();
  if (av.rank() != 3) throw std::invalid_argument("reduce_mean_dim1: rank 3");
  const int64_t N = av.dim(0), S = av.dim(1), F = av.dim(2);
  Tensor<T> out({N, F}, T(0));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t s = 0; s < S; ++s)
      for (int64_t f = 0; f < F; ++f)
        out.data[static_cast<size_t>(n * F + f)] +=
            av.data[static_cast<size_t>((n * S + s) * F + f)];
  const T inv = T(1) / static_cast<T>(S);
  for (auto& v : out.data) v *= inv;
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, N, S, F, inv](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      auto& da = gr.grad(aid);
      for (int64_t n = 0; n < N; ++n)
        for (int64_t s = 0; s < S; ++s)
          for (int64_t f = 0; f < F; ++f)
            da.data[static_cast<size_t>((n * S + s) * F + f)] +=
                inv * gy.data[static_cast<size_t>(n * F + f)];
    });
  }
  return y;
}

// ---- softmax / losses ----

// Softmax over the last dimension of a rank-2 or rank-3 tensor.
template <typename T>
Var<T> softmax_lastdim(Var<T> a) {
  const auto& av = a.val();
  if (av.rank() != 2 && av.rank() != 3)
    throw std::invalid_argument("softmax_lastdim: rank 2 or 3");
  const int64_t C = av.dim(av.rank() - 1);
  const int64_t R = av.numel() / C;
  Tensor<T> out(av.shape);
  for (int64_t r = 0; r < R; ++r) {
    const T* x = av.ptr() + r * C;
    T* p = out.ptr() + r * C;
    T mx = x[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
    T z = 0;
    for (int64_t c = 0; c < C; ++c) {
      p[c] = std::exp(x[c] - mx);
      z += p[c];
    }
    for (int64_t c = 0; c < C; ++c) p[c] /= z;
  }
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, R, C](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const auto& p = gr.val(yid);
      auto& da = gr.grad(aid);
      for (int64_t r = 0; r < R; ++r) {
        const T* gr_ = gy.ptr() + r * C;
        const T* pr = p.ptr() + r * C;
        T dot = 0;
        for (int64_t c = 0; c < C; ++c) dot += gr_[c] * pr[c];
        T* dr = da.ptr() + r * C;
        for (int64_t c = 0; c < C; ++c) dr[c] += pr[c] * (gr_[c] - dot);
      }
    });
  }
  return y;
}

// Mean negative log-likelihood of integer labels under softmax(logits).
template <typename T>
Var<T> cross_entropy_logits(Var<T> logits, std::vector<int64_t> labels) {
  const auto& lv = logits.val();
  if (lv.rank() != 2) throw std::invalid_argument("cross_entropy: rank 2");
  const int64_t N = lv.dim(0), C = lv.dim(1);
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("cross_entropy: label count mismatch");
  Tensor<T> probs({N, C});
  double loss = 0;
  for (int64_t r = 0; r < N; ++r) {
    const T* x = lv.ptr() + r * C;
    T* p = probs.ptr() + r * C;
    T mx = x[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, x[c]);
    double z = 0;
    for (int64_t c = 0; c < C; ++c) z += std::exp(static_cast<double>(x[c] - mx));
    const double logz = std::log(z);
    for (int64_t c = 0; c < C; ++c)
      p[c] = static_cast<T>(std::exp(static_cast<double>(x[c] - mx)) / z);
    const int64_t lab = labels[static_cast<size_t>(r)];
    if (lab < 0 || lab >= C)
      throw std::invalid_argument("cross_entropy: label out of range");
    loss -= static_cast<double>(x[lab] - mx) - logz;
  }
  loss /= static_cast<double>(N);
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(loss);
  Graph<T>& g = *logits.g;
  bool needs = g.needs_grad(logits.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = logits.id, yid = y.id;
    g.set_back(yid, [aid, yid, N, C, probs = std::move(probs),
                     labels = std::move(labels)](Graph<T>& gr) {
      const T gy = gr.grad(yid).data[0];
      auto& da = gr.grad(aid);
      const T invn = T(1) / static_cast<T>(N);
      for (int64_t r = 0; r < N; ++r) {
        const T* pr = probs.ptr() + r * C;
        T* dr = da.ptr() + r * C;
        for (int64_t c = 0; c < C; ++c) {
          T ind = (c == labels[static_cast<size_t>(r)]) ? T(1) : T(0);
          dr[c] += gy * invn * (pr[c] - ind);
        }
      }
    });
  }
  return y;
}

// Rows scaled to unit L2 norm. A zero row has no well-defined direction, so
// it is an error rather than a silent epsilon.
template <typename T>
Var<T> row_l2_normalize(Var<T> a) {
  const auto& av = a.val();
  if (av.rank() != 2) throw std::invalid_argument("row_l2_normalize: rank 2");
  const int64_t N = av.dim(0), D = av.dim(1);
  Tensor<T> out({N, D});
  std::vector<T> norms(static_cast<size_t>(N));
  for (int64_t r = 0; r < N; ++r) {
    const T* x = av.ptr() + r * D;
    double ss = 0;
    for (int64_t c = 0; c < D; ++c) ss += static_cast<double>(x[c]) * x[c];
    const double nrm = std::sqrt(ss);
    if (nrm == 0.0)
      throw std::domain_error("row_l2_normalize: zero-norm row " +
                              std::to_string(r));
    norms[static_cast<size_t>(r)] = static_cast<T>(nrm);
    T* o = out.ptr() + r * D;
    for (int64_t c = 0; c < D; ++c) o[c] = static_cast<T>(x[c] / nrm);
  }
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    g.set_back(yid, [aid, yid, N, D, norms = std::move(norms)](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const auto& yv = gr.val(yid);
      auto& da = gr.grad(aid);
      for (int64_t r = 0; r < N; ++r) {
        const T* gr_ = gy.ptr() + r * D;
        const T* yr = yv.ptr() + r * D;
        T* dr = da.ptr() + r * D;
        T dot = 0;
        for (int64_t c = 0; c < D; ++c) dot += gr_[c] * yr[c];
        const T inv = T(1) / norms[static_cast<size_t>(r)];
        for (int64_t c = 0; c < D; ++c)
          dr[c] += inv * (gr_[c] - dot * yr[c]);
      }
    });
  }
  return y;
}

// ---- convolution ----

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, int64_t sh, int64_t sw, int64_t ph,
              int64_t pw) {
  detail::check_same_graph(x, w);
  const auto& xv = x.val();
  const auto& wv = w.val();
  if (xv.rank() != 4 || wv.rank() != 4)
    throw std::invalid_argument("conv2d: rank-4 operands required");
  if (xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("conv2d: channel mismatch " + xv.shape_str() +
                                " vs " + wv.shape_str());
  kern::Conv2dDims d{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                     wv.dim(0), wv.dim(2), wv.dim(3), sh, sw, ph, pw};
  if (d.oh() <= 0 || d.ow() <= 0)
    throw std::invalid_argument("conv2d: empty output");
  Tensor<T> out({d.n, d.co, d.oh(), d.ow()});
  kern::omp::conv2d_fwd(d, xv.ptr(), wv.ptr(), out.ptr());
  Graph<T>& g = *x.g;
  bool needs = g.needs_grad(x.id) || g.needs_grad(w.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int xid = x.id, wid = w.id, yid = y.id;
    g.set_back(yid, [xid, wid, yid, d](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(xid)) {
        Tensor<T> gx({d.n, d.ci, d.h, d.w});
        kern::omp::conv2d_bwd_input(d, gy.ptr(), gr.val(wid).ptr(), gx.ptr());
        detail::accum(gr.grad(xid), gx);
      }
      if (gr.needs_grad(wid)) {
        Tensor<T> gw({d.co, d.ci, d.kh, d.kw});
        kern::omp::conv2d_bwd_weight(d, gr.val(xid).ptr(), gy.ptr(), gw.ptr());
        detail::accum(gr.grad(wid), gw);
      }
    });
  }
  return y;
}

template <typename T>
Var<T> conv2d_transpose(Var<T> x, Var<T> w, int64_t sh, int64_t sw, int64_t ph,
                        int64_t pw, int64_t oph, int64_t opw) {
  detail::check_same_graph(x, w);
  const auto& xv = x.val();
  const auto& wv = w.val();
  if (xv.rank() != 4 || wv.rank() != 4)
    throw std::invalid_argument("conv2d_transpose: rank-4 operands required");
  if (xv.dim(1) != wv.dim(0))
    throw std::invalid_argument("conv2d_transpose: channel mismatch " +
                                xv.shape_str() + " vs " + wv.shape_str());
  kern::ConvT2dDims t{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3),
                      wv.dim(1), wv.dim(2), wv.dim(3), sh, sw, ph, pw,
                      oph,       opw};
  if (t.oh() <= 0 || t.ow() <= 0)
    throw std::invalid_argument("conv2d_transpose: empty output");
  Tensor<T> out({t.n, t.co, t.oh(), t.ow()});
  kern::omp::convt2d_fwd(t, xv.ptr(), wv.ptr(), out.ptr());
  Graph<T>& g = *x.g;
  bool needs = g.needs_grad(x.id) || g.needs_grad(w.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int xid = x.id, wid = w.id, yid = y.id;
    g.set_back(yid, [xid, wid, yid, t](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      if (gr.needs_grad(xid)) {
        Tensor<T> gx({t.n, t.ci, t.h, t.w});
        kern::omp::convt2d_bwd_input(t, gy.ptr(), gr.val(wid).ptr(), gx.ptr());
        detail::accum(gr.grad(xid), gx);
      }
      if (gr.needs_grad(wid)) {
        Tensor<T> gw({t.ci, t.co, t.kh, t.kw});
        kern::omp::convt2d_bwd_weight(t, gr.val(xid).ptr(), gy.ptr(), gw.ptr());
        detail::accum(gr.grad(wid), gw);
      }
    });
  }
  return y;
}

// ---- rank-4 permute and batched matmul ----

template <typename T>
Var<T> permute4(Var<T> a, std::array<int, 4> perm) {
  const auto& av = a.val();
  if (av.rank() != 4) throw std::invalid_argument("permute4: rank 4");
  bool seen[4] = {false, false, false, false};
  for (int p : perm) {
    if (p < 0 || p > 3 || seen[p]) throw std::invalid_argument("permute4: bad perm");
    seen[p] = true;
  }
  const int64_t in[4] = {av.dim(0), av.dim(1), av.dim(2), av.dim(3)};
  std::vector<int64_t> oshape{in[perm[0]], in[perm[1]], in[perm[2]],
                              in[perm[3]]};
  Tensor<T> out(oshape);
  const int64_t istr[4] = {in[1] * in[2] * in[3], in[2] * in[3], in[3], 1};
  int64_t idx = 0;
  int64_t c[4];
  for (c[0] = 0; c[0] < oshape[0]; ++c[0])
    for (c[1] = 0; c[1] < oshape[1]; ++c[1])
      for (c[2] = 0; c[2] < oshape[2]; ++c[2])
        for (c[3] = 0; c[3] < oshape[3]; ++c[3]) {
          int64_t src = c[0] * istr[perm[0]] + c[1] * istr[perm[1]] +
                        c[2] * istr[perm[2]] + c[3] * istr[perm[3]];
          out.data[static_cast<size_t>(idx++)] = av.data[static_cast<size_t>(src)];
        }
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, yid = y.id;
    std::vector<int64_t> osh = oshape;
    g.set_back(yid, [aid, yid, perm, osh, istr0 = istr[0], istr1 = istr[1],
                     istr2 = istr[2], istr3 = istr[3]](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      auto& da = gr.grad(aid);
      const int64_t istr[4] = {istr0, istr1, istr2, istr3};
      int64_t idx2 = 0;
      int64_t c[4];
      for (c[0] = 0; c[0] < osh[0]; ++c[0])
        for (c[1] = 0; c[1] < osh[1]; ++c[1])
          for (c[2] = 0; c[2] < osh[2]; ++c[2])
            for (c[3] = 0; c[3] < osh[3]; ++c[3]) {
              int64_t src = c[0] * istr[perm[0]] + c[1] * istr[perm[1]] +
                            c[2] * istr[perm[2]] + c[3] * istr[perm[3]];
              da.data[static_cast<size_t>(src)] +=
                  gy.data[static_cast<size_t>(idx2++)];
            }
    });
  }
  return y;
}

// Batched matmul over rank-3 operands: y[b] = a[b] * op(c[b]).
template <typename T>
Var<T> bmm(Var<T> a, Var<T> b, bool tb = false) {
  detail::check_same_graph(a, b);
  const auto& av = a.val();
  const auto& bv = b.val();
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0))
    throw std::invalid_argument("bmm: want matching rank-3 batches");
  const int64_t B = av.dim(0), M = av.dim(1), K = av.dim(2);
  const int64_t Kb = tb ? bv.dim(2) : bv.dim(1);
  const int64_t N = tb ? bv.dim(1) : bv.dim(2);
  if (K != Kb)
    throw std::invalid_argument("bmm: inner dim mismatch " + av.shape_str() +
                                " x " + bv.shape_str());
  Tensor<T> out({B, M, N});
  for (int64_t i = 0; i < B; ++i)
    kern::omp::gemm(false, tb, M, N, K, av.ptr() + i * M * K,
                    bv.ptr() + i * (tb ? N * K : K * N), out.ptr() + i * M * N);
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id) || g.needs_grad(b.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, bid = b.id, yid = y.id;
    g.set_back(yid, [aid, bid, yid, tb, B, M, N, K](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const auto& av2 = gr.val(aid);
      const auto& bv2 = gr.val(bid);
      if (gr.needs_grad(aid)) {
        auto& da = gr.grad(aid);
        for (int64_t i = 0; i < B; ++i)
          kern::omp::gemm(false, !tb, M, K, N, gy.ptr() + i * M * N,
                          bv2.ptr() + i * (tb ? N * K : K * N),
                          da.ptr() + i * M * K, true);
      }
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        for (int64_t i = 0; i < B; ++i) {
          if (!tb) {
            // dB[K,N] = A^T * gy
            kern::omp::gemm(true, false, K, N, M, av2.ptr() + i * M * K,
                            gy.ptr() + i * M * N, db.ptr() + i * K * N, true);
          } else {
            // B stored [N,K]; dB = gy^T * A
            kern::omp::gemm(true, false, N, K, M, gy.ptr() + i * M * N,
                            av2.ptr() + i * M * K, db.ptr() + i * N * K, true);
          }
        }
      }
    });
  }
  return y;
}

// ---- layer norm ----

// Per-row normalization of a rank-2 tensor with learned gain and shift.
template <typename T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gamma, Var<T> beta, double eps = 1e-5) {
  detail::check_same_graph(x, gamma);
  detail::check_same_graph(x, beta);
  const auto& xv = x.val();
  if (xv.rank() != 2) throw std::invalid_argument("layer_norm_rows: rank 2");
  const int64_t N = xv.dim(0), F = xv.dim(1);
  if (gamma.val().rank() != 1 || gamma.val().dim(0) != F ||
      beta.val().rank() != 1 || beta.val().dim(0) != F)
    throw std::invalid_argument("layer_norm_rows: gamma/beta must be [F]");
  Tensor<T> out({N, F});
  Tensor<T> xhat({N, F});
  std::vector<T> inv_std(static_cast<size_t>(N));
  const T* gm = gamma.val().ptr();
  const T* bt = beta.val().ptr();
  for (int64_t r = 0; r < N; ++r) {
    const T* xr = xv.ptr() + r * F;
    double mu = 0;
    for (int64_t c = 0; c < F; ++c) mu += xr[c];
    mu /= static_cast<double>(F);
    double var = 0;
    for (int64_t c = 0; c < F; ++c) {
      double d = xr[c] - mu;
      var += d * d;
    }
    var /= static_cast<double>(F);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = static_cast<T>(is);
    T* hr = xhat.ptr() + r * F;
    T* yr = out.ptr() + r * F;
    for (int64_t c = 0; c < F; ++c) {
      hr[c] = static_cast<T>((xr[c] - mu) * is);
      yr[c] = gm[c] * hr[c] + bt[c];
    }
  }
  Graph<T>& g = *x.g;
  bool needs =
      g.needs_grad(x.id) || g.needs_grad(gamma.id) || g.needs_grad(beta.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int xid = x.id, gid = gamma.id, bid = beta.id, yid = y.id;
    g.set_back(yid, [xid, gid, bid, yid, N, F, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const T* gm = gr.val(gid).ptr();
      if (gr.needs_grad(gid)) {
        auto& dg = gr.grad(gid);
        for (int64_t c = 0; c < F; ++c) {
          T acc = 0;
          for (int64_t r = 0; r < N; ++r)
            acc += gy.data[static_cast<size_t>(r * F + c)] *
                   xhat.data[static_cast<size_t>(r * F + c)];
          dg.data[static_cast<size_t>(c)] += acc;
        }
      }
      if (gr.needs_grad(bid)) {
        auto& db = gr.grad(bid);
        for (int64_t c = 0; c < F; ++c) {
          T acc = 0;
          for (int64_t r = 0; r < N; ++r)
            acc += gy.data[static_cast<size_t>(r * F + c)];
          db.data[static_cast<size_t>(c)] += acc;
        }
      }
      if (gr.needs_grad(xid)) {
        auto& dx = gr.grad(xid);
        for (int64_t r = 0; r < N; ++r) {
          const T* gyr = gy.ptr() + r * F;
          const T* hr = xhat.ptr() + r * F;
          T* dxr = dx.ptr() + r * F;
          double m1 = 0, m2 = 0;
          for (int64_t c = 0; c < F; ++c) {
            const double dh = static_cast<double>(gyr[c]) * gm[c];
            m1 += dh;
            m2 += dh * hr[c];
          }
          m1 /= static_cast<double>(F);
          m2 /= static_cast<double>(F);
          const double is = inv_std[static_cast<size_t>(r)];
          for (int64_t c = 0; c < F; ++c) {
            const double dh = static_cast<double>(gyr[c]) * gm[c];
            dxr[c] += static_cast<T>(is * (dh - m1 - hr[c] * m2));
          }
        }
      }
    });
  }
  return y;
}

// ---- frequency mask broadcast ----

// a [..., K] scaled along the last dimension by m [K]; rank 2 to 4.
template <typename T>
Var<T> scale_lastdim(Var<T> a, Var<T> m) {
  detail::check_same_graph(a, m);
  const auto& av = a.val();
  const auto& mv = m.val();
  if (av.rank() < 2 || av.rank() > 4 || mv.rank() != 1 ||
      mv.dim(0) != av.dim(av.rank() - 1))
    throw std::invalid_argument("scale_lastdim: want [...,K] * [K], got " +
                                av.shape_str() + " * " + mv.shape_str());
  const int64_t K = mv.dim(0);
  const int64_t R = av.numel() / K;
  Tensor<T> out(av.shape);
  for (int64_t r = 0; r < R; ++r) {
    const T* src = av.ptr() + r * K;
    T* dst = out.ptr() + r * K;
    for (int64_t k = 0; k < K; ++k) dst[k] = src[k] * mv.data[static_cast<size_t>(k)];
  }
  Graph<T>& g = *a.g;
  bool needs = g.needs_grad(a.id) || g.needs_grad(m.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int aid = a.id, mid = m.id, yid = y.id;
    g.set_back(yid, [aid, mid, yid, R, K](Graph<T>& gr) {
      const auto& gy = gr.grad(yid);
      const auto& av2 = gr.val(aid);
      const auto& mv2 = gr.val(mid);
      if (gr.needs_grad(aid)) {
        auto& da = gr.grad(aid);
        for (int64_t r = 0; r < R; ++r) {
          const T* gr_ = gy.ptr() + r * K;
          T* dr = da.ptr() + r * K;
          for (int64_t k = 0; k < K; ++k)
            dr[k] += gr_[k] * mv2.data[static_cast<size_t>(k)];
        }
      }
      if (gr.needs_grad(mid)) {
        auto& dm = gr.grad(mid);
        for (int64_t k = 0; k < K; ++k) {
          T acc = 0;
          for (int64_t r = 0; r < R; ++r)
            acc += gy.data[static_cast<size_t>(r * K + k)] *
                   av2.data[static_cast<size_t>(r * K + k)];
          dm.data[static_cast<size_t>(k)] += acc;
        }
      }
    });
  }
  return y;
}

// ---- NT-Xent over paired rows ----

// h holds 2B unit-norm rows where rows 2k and 2k+1 are the positive pair.
// S[i,k] = (h_i . h_k) / tau for k != i; the loss is the mean over all 2B
// anchors of -log softmax(S_i)[pair(i)]. Fused: the similarity matrix never
// enters the tape, and the backward applies dL/dS = (P - Y) / 2B directly,
// with dH = (G + G^T) H / tau.
template <typename T>
Var<T> ntxent_loss(Var<T> h, double tau) {
  const auto& hv = h.val();
  if (hv.rank() != 2) throw std::invalid_argument("ntxent_loss: rank 2");
  const int64_t n = hv.dim(0), D = hv.dim(1);
  if (n < 4 || n % 2 != 0)
    throw std::invalid_argument("ntxent_loss: need an even number >= 4 of rows");
  if (!(tau > 0)) throw std::invalid_argument("ntxent_loss: tau must be > 0");
  // S = H H^T / tau
  Tensor<T> S({n, n});
  kern::omp::gemm(false, true, n, n, D, hv.ptr(), hv.ptr(), S.ptr());
  const T invtau = static_cast<T>(1.0 / tau);
  for (auto& v : S.data) v *= invtau;
  // Row-wise softmax excluding the diagonal, evaluated in double for the
  // loss; probabilities saved for backward.
  Tensor<T> P({n, n});
  double loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T* si = S.ptr() + i * n;
    T* pi = P.ptr() + i * n;
    double mx = -1e300;
    for (int64_t k = 0; k < n; ++k)
      if (k != i) mx = std::max(mx, static_cast<double>(si[k]));
    double z = 0;
    for (int64_t k = 0; k < n; ++k) {
      if (k == i) {
        pi[k] = T(0);
        continue;
      }
      z += std::exp(static_cast<double>(si[k]) - mx);
    }
    const double logz = std::log(z) + mx;
    for (int64_t k = 0; k < n; ++k)
      if (k != i)
        pi[k] = static_cast<T>(std::exp(static_cast<double>(si[k]) - logz));
    const int64_t j = i ^ 1;
    loss -= static_cast<double>(si[j]) - logz;
  }
  loss /= static_cast<double>(n);
  Tensor<T> out({1});
  out.data[0] = static_cast<T>(loss);
  Graph<T>& g = *h.g;
  bool needs = g.needs_grad(h.id);
  Var<T> y = g.make(std::move(out), needs);
  if (needs) {
    int hid = h.id, yid = y.id;
    g.set_back(yid, [hid, yid, n, D, tau, P = std::move(P)](Graph<T>& gr) {
      const T gy = gr.grad(yid).data[0];
      const auto& hv2 = gr.val(hid);
      // G[i,k] = (P[i,k] - [k == pair(i)]) / n, zero on the diagonal.
      Tensor<T> G({n, n});
      const T invn = T(1) / static_cast<T>(n);
      for (int64_t i = 0; i < n; ++i) {
        const int64_t j = i ^ 1;
        for (int64_t k = 0; k < n; ++k) {
          if (k == i) {
            G.data[static_cast<size_t>(i * n + k)] = T(0);
            continue;
          }
          T v = P.data[static_cast<size_t>(i * n + k)];
          if (k == j) v -= T(1);
          G.data[static_cast<size_t>(i * n + k)] = v * invn;
        }
      }
      // dH = (G + G^T) H / tau, scaled by upstream gy.
      Tensor<T> M({n, n});
      for (int64_t i = 0; i < n; ++i)
        for (int64_t k = 0; k < n; ++k)
          M.data[static_cast<size_t>(i * n + k)] =
              G.data[static_cast<size_t>(i * n + k)] +
              G.data[static_cast<size_t>(k * n + i)];
      Tensor<T> dh({n, D});
      kern::omp::gemm(false, false, n, D, n, M.ptr(), hv2.ptr(), dh.ptr());
      const T sc = gy * static_cast<T>(1.0 / tau);
      auto& dst = gr.grad(hid);
      for (int64_t i = 0; i < n * D; ++i)
        dst.data[static_cast<size_t>(i)] += sc * dh.data[static_cast<size_t>(i)];
    });
  }
  return y;
}

} // namespace sudoku::ag
