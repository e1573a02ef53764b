#pragma once

// Parameter storage, initializers, Adam, and the layer vocabulary shared by
// the model families. Parameters live outside any graph; Binder copies them
// onto a fresh tape each step and remembers the node ids so the optimizer
// can read gradients back by name.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sudokusens/autograd.hpp"
#include "sudokusens/rng.hpp"
#include "sudokusens/tensor.hpp"

namespace sudoku::nn {

template <typename T>
struct ParamStore {
  std::vector<std::string> order; // insertion order, for stable iteration
  std::unordered_map<std::string, Tensor<T>> params;

  bool has(const std::string& name) const { return params.count(name) > 0; }

  Tensor<T>& create(const std::string& name, std::vector<int64_t> shape) {
    if (has(name)) throw std::invalid_argument("param exists: " + name);
    order.push_back(name);
    auto [it, ok] = params.emplace(name, Tensor<T>(std::move(shape), T(0)));
    (void)ok;
    return it->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("no param: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::out_of_range("no param: " + name);
    return it->second;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& name : order) n += at(name).numel();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& name : order) {
      const auto& t = at(name);
      out.order.push_back(name);
      out.params.emplace(name, t.template cast<U>());
    }
    return out;
  }
};

template <typename T>
void init_uniform(Tensor<T>& t, double lo, double hi, Rng& rng) {
  for (auto& v : t.data)
    v = static_cast<T>(lo + (hi - lo) * rng.uniform());
}

template <typename T>
void init_normal(Tensor<T>& t, double stddev, Rng& rng) {
  for (auto& v : t.data) v = static_cast<T>(stddev * rng.normal());
}

// Glorot uniform given explicit fan counts; biases stay zero.
template <typename T>
void init_glorot(Tensor<T>& t, int64_t fan_in, int64_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  init_uniform(t, -limit, limit, rng);
}

// ---- optimizer ----

template <typename T>
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;

  struct Slot {
    Tensor<T> m, v;
  };
  std::unordered_map<std::string, Slot> slots;

  void update(const std::string& name, Tensor<T>& param,
              const Tensor<T>& grad, double bias1, double bias2) {
    auto it = slots.find(name);
    if (it == slots.end()) {
      it = slots
               .emplace(name, Slot{Tensor<T>(param.shape, T(0)),
                                   Tensor<T>(param.shape, T(0))})
               .first;
    }
    auto& s = it->second;
    for (int64_t i = 0; i < param.numel(); ++i) {
      const double gi = grad.data[static_cast<size_t>(i)];
      double m = beta1 * s.m.data[static_cast<size_t>(i)] + (1 - beta1) * gi;
      double v = beta2 * s.v.data[static_cast<size_t>(i)] + (1 - beta2) * gi * gi;
      s.m.data[static_cast<size_t>(i)] = static_cast<T>(m);
      s.v.data[static_cast<size_t>(i)] = static_cast<T>(v);
      const double mhat = m / bias1;
      const double vhat = v / bias2;
      param.data[static_cast<size_t>(i)] -=
          static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
};

// ---- binding parameters onto a tape ----

template <typename T>
struct Binder {
  ag::Graph<T>* g = nullptr;
  ParamStore<T>* store = nullptr;
  bool trainable = true;
  std::vector<std::pair<std::string, int>> bound;

  Binder(ag::Graph<T>& graph, ParamStore<T>& s, bool train = true)
      : g(&graph), store(&s), trainable(train) {}

  ag::Var<T> operator()(const std::string& name) {
    auto v = g->leaf(store->at(name), trainable);
    bound.emplace_back(name, v.id);
    return v;
  }
};

// Runs one Adam step over every parameter the binder touched this tape.
// Gradients can optionally be clipped to a global L2 norm first.
template <typename T>
void adam_step(Adam<T>& opt, ParamStore<T>& store, ag::Graph<T>& g,
               const Binder<T>& binder, double clip_global_norm = 0.0) {
  opt.t += 1;
  const double bias1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
  const double bias2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
  double scale = 1.0;
  if (clip_global_norm > 0.0) {
    double ss = 0;
    for (const auto& [name, id] : binder.bound) {
      const auto& gt = g.grad(id);
      for (const auto& v : gt.data) ss += static_cast<double>(v) * v;
    }
    const double nrm = std::sqrt(ss);
    if (nrm > clip_global_norm) scale = clip_global_norm / nrm;
  }
  for (const auto& [name, id] : binder.bound) {
    if (scale == 1.0) {
      opt.update(name, store.at(name), g.grad(id), bias1, bias2);
    } else {
      Tensor<T> scaled = g.grad(id);
      for (auto& v : scaled.data) v = static_cast<T>(v * scale);
      opt.update(name, store.at(name), scaled, bias1, bias2);
    }
  }
}

// ---- layers ----

template <typename T>
void def_linear(ParamStore<T>& store, const std::string& prefix, int64_t in,
                int64_t out, Rng& rng) {
  init_glorot(store.create(prefix + ".w", {in, out}), in, out, rng);
  store.create(prefix + ".b", {out});
}

template <typename T>
ag::Var<T> linear(Binder<T>& b, ag::Var<T> x, const std::string& prefix) {
  return ag::add_rows(ag::matmul(x, b(prefix + ".w")), b(prefix + ".b"));
}

template <typename T>
void def_conv2d(ParamStore<T>& store, const std::string& prefix, int64_t co,
                int64_t ci, int64_t kh, int64_t kw, Rng& rng) {
  const int64_t fan_in = ci * kh * kw, fan_out = co * kh * kw;
  init_glorot(store.create(prefix + ".w", {co, ci, kh, kw}), fan_in, fan_out,
              rng);
  store.create(prefix + ".b", {co});
}

template <typename T>
ag::Var<T> conv2d(Binder<T>& b, ag::Var<T> x, const std::string& prefix,
                  int64_t sh, int64_t sw, int64_t ph, int64_t pw) {
  return ag::add_channels(ag::conv2d(x, b(prefix + ".w"), sh, sw, ph, pw),
                          b(prefix + ".b"));
}

template <typename T>
void def_conv2d_transpose(ParamStore<T>& store, const std::string& prefix,
                          int64_t ci, int64_t co, int64_t kh, int64_t kw,
                          Rng& rng) {
  const int64_t fan_in = ci * kh * kw, fan_out = co * kh * kw;
  init_glorot(store.create(prefix + ".w", {ci, co, kh, kw}), fan_in, fan_out,
              rng);
  store.create(prefix + ".b", {co});
}

template <typename T>
ag::Var<T> conv2d_transpose(Binder<T>& b, ag::Var<T> x,
                            const std::string& prefix, int64_t sh, int64_t sw,
                            int64_t ph, int64_t pw, int64_t oph, int64_t opw) {
  return ag::add_channels(
      ag::conv2d_transpose(x, b(prefix + ".w"), sh, sw, ph, pw, oph, opw),
      b(prefix + ".b"));
}

// GRU cell with gate order (reset, update, candidate).
template <typename T>
void def_gru_cell(ParamStore<T>& store, const std::string& prefix, int64_t in,
                  int64_t hidden, Rng& rng) {
  init_glorot(store.create(prefix + ".w_ih", {in, 3 * hidden}), in, hidden,
              rng);
  init_glorot(store.create(prefix + ".w_hh", {hidden, 3 * hidden}), hidden,
              hidden, rng);
  store.create(prefix + ".b_ih", {3 * hidden});
  store.create(prefix + ".b_hh", {3 * hidden});
}

template <typename T>
ag::Var<T> gru_cell(ag::Var<T> x, ag::Var<T> h, ag::Var<T> w_ih,
                    ag::Var<T> w_hh, ag::Var<T> b_ih, ag::Var<T> b_hh) {
  const int64_t H = h.val().dim(1);
  auto gi = ag::add_rows(ag::matmul(x, w_ih), b_ih);
  auto gh = ag::add_rows(ag::matmul(h, w_hh), b_hh);
  auto r = ag::sigmoid(ag::add(ag::slice_cols(gi, 0, H), ag::slice_cols(gh, 0, H)));
  auto z = ag::sigmoid(
      ag::add(ag::slice_cols(gi, H, 2 * H), ag::slice_cols(gh, H, 2 * H)));
  auto n = ag::tanh(ag::add(ag::slice_cols(gi, 2 * H, 3 * H),
                            ag::mul(r, ag::slice_cols(gh, 2 * H, 3 * H))));
  // h' = (1 - z) * n + z * h = n + z * (h - n)
  return ag::add(n, ag::mul(z, ag::sub(h, n)));
}

// Unrolls a GRU over x [N, S, F] and returns the final hidden state [N, H].
// Weights are bound once and reused across steps.
template <typename T>
ag::Var<T> gru_forward(Binder<T>& b, ag::Var<T> x, const std::string& prefix,
                       int64_t hidden) {
  const int64_t N = x.val().dim(0), S = x.val().dim(1);
  auto w_ih = b(prefix + ".w_ih");
  auto w_hh = b(prefix + ".w_hh");
  auto b_ih = b(prefix + ".b_ih");
  auto b_hh = b(prefix + ".b_hh");
  auto h = b.g->leaf(Tensor<T>({N, hidden}, T(0)), false);
  for (int64_t t = 0; t < S; ++t) {
    auto xt = ag::slice_time(x, t);
    h = gru_cell(xt, h, w_ih, w_hh, b_ih, b_hh);
  }
  return h;
}

// Pre-LN transformer encoder block over x [N, S, E].
template <typename T>
void def_attention_layer(ParamStore<T>& store, const std::string& prefix,
                         int64_t embed, int64_t ff, Rng& rng) {
  def_linear(store, prefix + ".q", embed, embed, rng);
  def_linear(store, prefix + ".k", embed, embed, rng);
  def_linear(store, prefix + ".v", embed, embed, rng);
  def_linear(store, prefix + ".o", embed, embed, rng);
  def_linear(store, prefix + ".ff1", embed, ff, rng);
  def_linear(store, prefix + ".ff2", ff, embed, rng);
  for (const char* ln : {".ln1", ".ln2"}) {
    auto& gamma = store.create(prefix + ln + std::string(".g"), {embed});
    for (auto& v : gamma.data) v = T(1);
    store.create(prefix + ln + std::string(".b"), {embed});
  }
}

template <typename T>
ag::Var<T> attention_layer(Binder<T>& b, ag::Var<T> x,
                           const std::string& prefix, int64_t heads) {
  const auto& xv = x.val();
  if (xv.rank() != 3) throw std::invalid_argument("attention_layer: rank 3");
  const int64_t N = xv.dim(0), S = xv.dim(1), E = xv.dim(2);
  if (E % heads != 0)
    throw std::invalid_argument("attention_layer: embed dim " +
                                std::to_string(E) + " not divisible by " +
                                std::to_string(heads) + " heads");
  const int64_t Dh = E / heads;
  auto flat = ag::reshape(x, {N * S, E});
  auto norm1 =
      ag::layer_norm_rows(flat, b(prefix + ".ln1.g"), b(prefix + ".ln1.b"));
  auto split_heads = [&](ag::Var<T> m) {
    // [(N*S), E] -> [N, S, H, Dh] -> [N, H, S, Dh] -> [(N*H), S, Dh]
    auto r4 = ag::reshape(m, {N, S, heads, Dh});
    auto p = ag::permute4(r4, std::array<int, 4>{0, 2, 1, 3});
    return ag::reshape(p, {N * heads, S, Dh});
  };
  auto q = split_heads(linear(b, norm1, prefix + ".q"));
  auto k = split_heads(linear(b, norm1, prefix + ".k"));
  auto v = split_heads(linear(b, norm1, prefix + ".v"));
  auto scores = ag::scale(ag::bmm(q, k, true),
                          1.0 / std::sqrt(static_cast<double>(Dh)));
  auto probs = ag::softmax_lastdim(scores);
  auto ctx = ag::bmm(probs, v); // [(N*H), S, Dh]
  auto merged = ag::reshape(
      ag::permute4(ag::reshape(ctx, {N, heads, S, Dh}),
                   std::array<int, 4>{0, 2, 1, 3}),
      {N * S, E});
  auto attn_out = linear(b, merged, prefix + ".o");
  auto h = ag::add(flat, attn_out);
  auto norm2 =
      ag::layer_norm_rows(h, b(prefix + ".ln2.g"), b(prefix + ".ln2.b"));
  auto ffn = linear(b, ag::relu(linear(b, norm2, prefix + ".ff1")),
                    prefix + ".ff2");
  auto out = ag::add(h, ffn);
  return ag::reshape(out, {N, S, E});
}

} // namespace sudoku::nn
