#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "sudokusens/autograd.hpp"
#include "sudokusens/nn.hpp"
#include "sudokusens/rng.hpp"
#include "sudokusens/training.hpp"

using namespace sudoku;

namespace {

// Builds the expression, reduces non-scalar outputs with a fixed random
// weighting so every output element contributes to the checked gradient, and
// returns the worst relative error over all parameter coordinates.
template <typename BuildExpr>
train::GradCheckReport check_expr(nn::ParamStore<double>& store,
                                  BuildExpr expr, int64_t max_coords = 400) {
  Rng rng(1234);
  return train::gradient_check(
      store,
      [&](ag::Graph<double>& g, nn::Binder<double>& b) {
        auto out = expr(g, b);
        if (out.val().numel() == 1) return out;
        Tensor<double> w(out.val().shape);
        Rng wr(999);
        for (auto& v : w.data) v = wr.normal();
        auto wl = g.leaf(std::move(w), false);
        return ag::reduce_sum_all(ag::mul(out, wl));
      },
      rng, max_coords);
}

nn::ParamStore<double> store_with(
    std::vector<std::pair<std::string, std::vector<int64_t>>> specs,
    uint64_t seed = 42, double spread = 1.0) {
  nn::ParamStore<double> s;
  Rng rng(seed);
  for (auto& [name, shape] : specs) {
    auto& t = s.create(name, shape);
    for (auto& v : t.data) v = spread * rng.normal();
  }
  return s;
}

} // namespace

TEST_CASE("arithmetic and unary op gradients") {
  auto s = store_with({{"a", {3, 4}}, {"b", {3, 4}}});
  auto rep = check_expr(s, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    auto a = b("a");
    auto c = b("b");
    auto t1 = ag::mul(ag::add(a, c), ag::sub(a, ag::scale(c, 0.3)));
    auto t2 = ag::log(ag::add_scalar(ag::square(a), 1.0));
    auto t3 = ag::tanh(ag::sigmoid(c));
    auto t4 = ag::exp(ag::scale(a, 0.1));
    auto t5 = ag::relu(ag::add(a, c));
    auto t6 = ag::clamp_min(c, 0.05);
    return ag::add(ag::add(ag::add(t1, t2), ag::add(t3, t4)),
                   ag::add(t5, t6));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("matmul gradients for every transpose combination") {
  for (bool ta : {false, true}) {
    for (bool tb : {false, true}) {
      const int64_t M = 4, K = 5, N = 3;
      std::vector<int64_t> ashape = ta ? std::vector<int64_t>{K, M}
                                       : std::vector<int64_t>{M, K};
      std::vector<int64_t> bshape = tb ? std::vector<int64_t>{N, K}
                                       : std::vector<int64_t>{K, N};
      auto s = store_with({{"a", ashape}, {"b", bshape}});
      auto rep =
          check_expr(s, [ta, tb](ag::Graph<double>& g, nn::Binder<double>& b) {
            (void)g;
            return ag::matmul(b("a"), b("b"), ta, tb);
          });
      CAPTURE(ta);
      CAPTURE(tb);
      CHECK(rep.max_rel_err < 1e-6);
    }
  }
}

TEST_CASE("broadcast bias gradients") {
  auto s = store_with({{"x", {3, 4}}, {"b", {4}}, {"x4", {2, 3, 2, 2}}, {"c", {3}}});
  auto rep = check_expr(s, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    auto r2 = ag::add_rows(b("x"), b("b"));
    auto r4 = ag::add_channels(b("x4"), b("c"));
    return ag::add(ag::reduce_sum_all(ag::square(r2)),
                   ag::reduce_sum_all(ag::square(r4)));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("shape op gradients: reshape, concat, slices") {
  auto s = store_with({{"a", {2, 6}}, {"b", {2, 3}}, {"t", {2, 4, 3}}});
  auto rep = check_expr(s, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    auto a = b("a");
    auto r = ag::reshape(a, {4, 3});
    auto cat = ag::concat_cols(std::vector<ag::Var<double>>{b("b"), b("b")});
    auto sl = ag::slice_cols(a, 1, 4);
    auto st = ag::slice_time(b("t"), 2);
    return ag::add(
        ag::add(ag::reduce_sum_all(ag::square(r)), ag::reduce_sum_all(cat)),
        ag::add(ag::reduce_sum_all(ag::square(sl)),
                ag::reduce_sum_all(ag::square(st))));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("reduction gradients") {
  auto s = store_with({{"a", {3, 5}}, {"t", {2, 4, 3}}});
  auto rep = check_expr(s, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    return ag::add(ag::reduce_mean_all(ag::square(b("a"))),
                   ag::reduce_sum_all(
                       ag::square(ag::reduce_mean_dim1(b("t")))));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("softmax forward and gradient") {
  ag::Graph<double> g;
  auto x = g.leaf(Tensor<double>({1, 3}, 0.0), false);
  auto p = ag::softmax_lastdim(x);
  for (int i = 0; i < 3; ++i)
    CHECK(p.val().data[static_cast<size_t>(i)] == doctest::Approx(1.0 / 3));

  auto s = store_with({{"a", {3, 4}}, {"t", {2, 3, 4}}});
  auto rep = check_expr(s, [](ag::Graph<double>& gg, nn::Binder<double>& b) {
    (void)gg;
    return ag::add(
        ag::reduce_sum_all(ag::square(ag::softmax_lastdim(b("a")))),
        ag::reduce_sum_all(ag::square(ag::softmax_lastdim(b("t")))));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("cross entropy value and gradient") {
  ag::Graph<double> g;
  Tensor<double> lv({1, 2});
  lv.data = {0.0, std::log(3.0)};
  auto logits = g.leaf(std::move(lv), false);
  auto loss = ag::cross_entropy_logits(logits, {1});
  CHECK(loss.val().data[0] == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));

  auto s = store_with({{"l", {5, 4}}});
  auto rep = check_expr(s, [](ag::Graph<double>& gg, nn::Binder<double>& b) {
    (void)gg;
    return ag::cross_entropy_logits(b("l"), {0, 3, 1, 2, 1});
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("row_l2_normalize: unit rows, zero-row error, gradient") {
  ag::Graph<double> g;
  Tensor<double> x({2, 3});
  x.data = {3, 0, 4, 0, 5, 12};
  auto v = g.leaf(std::move(x), false);
  auto y = ag::row_l2_normalize(v);
  CHECK(y.val().at2(0, 0) == doctest::Approx(0.6));
  CHECK(y.val().at2(0, 2) == doctest::Approx(0.8));
  CHECK(y.val().at2(1, 1) == doctest::Approx(5.0 / 13));

  Tensor<double> z({2, 2}, 0.0);
  z.data = {1, 1, 0, 0};
  auto vz = g.leaf(std::move(z), false);
  CHECK_THROWS_AS((void)ag::row_l2_normalize(vz), std::domain_error);

  auto s = store_with({{"h", {4, 5}}});
  auto rep = check_expr(s, [](ag::Graph<double>& gg, nn::Binder<double>& b) {
    (void)gg;
    return ag::row_l2_normalize(b("h"));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("conv2d and conv2d_transpose gradients") {
  auto s = store_with({{"x", {2, 2, 5, 6}}, {"w", {3, 2, 3, 3}}}, 42, 0.5);
  auto rep = check_expr(
      s,
      [](ag::Graph<double>& g, nn::Binder<double>& b) {
        (void)g;
        return ag::conv2d(b("x"), b("w"), 2, 1, 1, 1);
      },
      300);
  CHECK(rep.max_rel_err < 1e-6);

  auto st = store_with({{"x", {2, 3, 4, 4}}, {"w", {3, 2, 3, 3}}}, 7, 0.5);
  auto rept = check_expr(
      st,
      [](ag::Graph<double>& g, nn::Binder<double>& b) {
        (void)g;
        return ag::conv2d_transpose(b("x"), b("w"), 2, 2, 1, 1, 1, 1);
      },
      300);
  CHECK(rept.max_rel_err < 1e-6);
}

TEST_CASE("permute4 round trip and gradient") {
  ag::Graph<double> g;
  Rng r(5);
  Tensor<double> x({2, 3, 4, 5});
  for (auto& v : x.data) v = r.normal();
  auto v = g.leaf(x, false);
  auto p = ag::permute4(v, std::array<int, 4>{2, 0, 3, 1});
  CHECK(p.val().dim(0) == 4);
  CHECK(p.val().dim(1) == 2);
  CHECK(p.val().dim(2) == 5);
  CHECK(p.val().dim(3) == 3);
  CHECK(p.val().at4(1, 0, 2, 1) == x.at4(0, 1, 1, 2));

  auto s = store_with({{"x", {2, 3, 2, 2}}});
  auto rep = check_expr(s, [](ag::Graph<double>& gg, nn::Binder<double>& b) {
    (void)gg;
    return ag::square(ag::permute4(b("x"), std::array<int, 4>{3, 1, 0, 2}));
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("bmm gradients") {
  for (bool tb : {false, true}) {
    std::vector<int64_t> bshape = tb ? std::vector<int64_t>{2, 4, 3}
                                     : std::vector<int64_t>{2, 3, 4};
    auto s = store_with({{"a", {2, 5, 3}}, {"b", bshape}});
    auto rep = check_expr(s, [tb](ag::Graph<double>& g, nn::Binder<double>& b) {
      (void)g;
      return ag::bmm(b("a"), b("b"), tb);
    });
    CAPTURE(tb);
    CHECK(rep.max_rel_err < 1e-6);
  }
}

TEST_CASE("layer_norm_rows value and gradient") {
  ag::Graph<double> g;
  Tensor<double> x({1, 2});
  x.data = {1.0, 3.0};
  auto gamma = g.leaf(Tensor<double>({2}, 1.0), false);
  auto beta = g.leaf(Tensor<double>({2}, 0.0), false);
  auto y = ag::layer_norm_rows(g.leaf(std::move(x), false), gamma, beta, 1e-12);
  CHECK(y.val().at2(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y.val().at2(0, 1) == doctest::Approx(1.0).epsilon(1e-5));

  auto s = store_with({{"x", {4, 6}}, {"g", {6}}, {"b", {6}}});
  auto rep = check_expr(s, [](ag::Graph<double>& gg, nn::Binder<double>& b) {
    (void)gg;
    return ag::layer_norm_rows(b("x"), b("g"), b("b"));
  });
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("scale_lastdim gradient on rank 3 and 4") {
  auto s = store_with({{"x", {2, 5, 3}}, {"m", {3}}});
  auto rep = check_expr(s, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    return ag::scale_lastdim(b("x"), b("m"));
  });
  CHECK(rep.max_rel_err < 1e-6);

  auto s4 = store_with({{"x", {2, 1, 3, 4}}, {"m", {4}}});
  auto rep4 = check_expr(s4, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    return ag::scale_lastdim(b("x"), b("m"));
  });
  CHECK(rep4.max_rel_err < 1e-6);
}

TEST_CASE("ntxent hand case: identical embeddings give ln 3") {
  // four identical unit vectors: every similarity is 1, so each anchor sees a
  // uniform distribution over its three candidates
  ag::Graph<double> g;
  Tensor<double> h({4, 3});
  for (int i = 0; i < 4; ++i) h.at2(i, 0) = 1.0;
  auto loss = ag::ntxent_loss(g.leaf(std::move(h), false), 1.0);
  CHECK(loss.val().data[0] == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("ntxent hand case: orthogonal pairs at tau=1") {
  // pairs (e1, e1) and (e2, e2): positive sim 1, both negatives sim 0,
  // so the loss is ln((e + 2) / e) for every anchor
  ag::Graph<double> g;
  Tensor<double> h({4, 2});
  h.at2(0, 0) = 1.0;
  h.at2(1, 0) = 1.0;
  h.at2(2, 1) = 1.0;
  h.at2(3, 1) = 1.0;
  auto loss = ag::ntxent_loss(g.leaf(std::move(h), false), 1.0);
  const double want = std::log((std::exp(1.0) + 2.0) / std::exp(1.0));
  CHECK(loss.val().data[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(want == doctest::Approx(0.5514).epsilon(1e-3));
}

TEST_CASE("ntxent matches a brute-force evaluation and its gradient checks") {
  // brute force: explicit per-anchor softmax over the 2B-1 candidates
  Rng r(31);
  const int64_t n = 8, D = 4;
  Tensor<double> hraw({n, D});
  for (auto& v : hraw.data) v = r.normal();
  // normalize rows by hand
  Tensor<double> h = hraw;
  for (int64_t i = 0; i < n; ++i) {
    double ss = 0;
    for (int64_t d = 0; d < D; ++d) ss += h.at2(i, d) * h.at2(i, d);
    const double nrm = std::sqrt(ss);
    for (int64_t d = 0; d < D; ++d) h.at2(i, d) /= nrm;
  }
  const double tau = 0.5;
  double want = 0;
  for (int64_t i = 0; i < n; ++i) {
    double denom = 0;
    for (int64_t k = 0; k < n; ++k) {
      if (k == i) continue;
      double sim = 0;
      for (int64_t d = 0; d < D; ++d) sim += h.at2(i, d) * h.at2(k, d);
      denom += std::exp(sim / tau);
    }
    double pos = 0;
    for (int64_t d = 0; d < D; ++d) pos += h.at2(i, d) * h.at2(i ^ 1, d);
    want += -std::log(std::exp(pos / tau) / denom);
  }
  want /= static_cast<double>(n);

  ag::Graph<double> g;
  auto loss = ag::ntxent_loss(g.leaf(h, false), tau);
  CHECK(loss.val().data[0] == doctest::Approx(want).epsilon(1e-12));

  nn::ParamStore<double> s;
  s.create("h", {n, D});
  s.at("h") = hraw;
  auto rep = check_expr(s, [tau](ag::Graph<double>& gg, nn::Binder<double>& b) {
    (void)gg;
    return ag::ntxent_loss(ag::row_l2_normalize(b("h")), tau);
  });
  CHECK(rep.max_rel_err < 1e-6);
}

TEST_CASE("gru cell and unrolled gru gradients") {
  nn::ParamStore<double> s;
  Rng rng(17);
  nn::def_gru_cell(s, "gru", 3, 4, rng);
  auto& xin = s.create("x", {2, 3, 3});
  for (auto& v : xin.data) v = rng.normal();
  auto rep = check_expr(s, [](ag::Graph<double>& g, nn::Binder<double>& b) {
    (void)g;
    auto x = b("x");
    return nn::gru_forward(b, x, "gru", 4);
  });
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("attention layer shape, head divisibility error, gradient") {
  nn::ParamStore<double> s;
  Rng rng(23);
  nn::def_attention_layer(s, "att", 4, 8, rng);
  auto& xin = s.create("x", {2, 3, 4});
  for (auto& v : xin.data) v = rng.normal();

  {
    ag::Graph<double> g;
    nn::Binder<double> b(g, s, false);
    auto y = nn::attention_layer(b, b("x"), "att", 2);
    CHECK(y.val().dim(0) == 2);
    CHECK(y.val().dim(1) == 3);
    CHECK(y.val().dim(2) == 4);
    CHECK_THROWS_AS((void)nn::attention_layer(b, b("x"), "att", 3),
                    std::invalid_argument);
  }

  auto rep = check_expr(
      s,
      [](ag::Graph<double>& g, nn::Binder<double>& b) {
        (void)g;
        return nn::attention_layer(b, b("x"), "att", 2);
      },
      400);
  CHECK(rep.max_rel_err < 1e-5);
}

TEST_CASE("adam minimizes a quadratic") {
  nn::ParamStore<double> s;
  auto& x = s.create("x", {1});
  x.data[0] = -2.0;
  nn::Adam<double> opt;
  opt.lr = 0.05;
  for (int step = 0; step < 2000; ++step) {
    ag::Graph<double> g;
    nn::Binder<double> b(g, s, true);
    auto v = b("x");
    auto loss = ag::reduce_sum_all(ag::square(ag::add_scalar(v, -3.0)));
    g.backward(loss);
    nn::adam_step(opt, s, g, b);
  }
  CHECK(s.at("x").data[0] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("early stopper tracks best and stops after patience") {
  train::EarlyStopper es;
  es.patience = 3;
  CHECK(es.update(0, 1.0));
  CHECK(es.update(1, 0.5));
  CHECK_FALSE(es.update(2, 0.6));
  CHECK_FALSE(es.update(3, 0.7));
  CHECK_FALSE(es.should_stop());
  CHECK_FALSE(es.update(4, 0.8));
  CHECK(es.should_stop());
  CHECK(es.best_epoch == 1);
  CHECK(es.best == doctest::Approx(0.5));
}

TEST_CASE("backward rejects non-scalar roots and foreign vars") {
  ag::Graph<double> g;
  auto v = g.leaf(Tensor<double>({2, 2}, 1.0), true);
  CHECK_THROWS_AS(g.backward(v), std::invalid_argument);
  ag::Graph<double> g2;
  auto w = g2.leaf(Tensor<double>({1}, 1.0), true);
  CHECK_THROWS_AS(g.backward(w), std::invalid_argument);
}
