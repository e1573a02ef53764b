#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sudokusens/evalx.hpp"
#include "sudokusens/rng.hpp"

using namespace sudoku;
using evalx::Method;

namespace {

Tensor<float> rows2(std::vector<std::vector<float>> rows) {
  const int64_t n = static_cast<int64_t>(rows.size());
  const int64_t d = static_cast<int64_t>(rows[0].size());
  Tensor<float> t({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      t.data[i * d + j] = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return t;
}

// Independent F1 oracle using the 2tp / (2tp + fp + fn) identity.
double oracle_macro_f1(const std::vector<int64_t>& pred,
                       const std::vector<int64_t>& truth) {
  std::set<int64_t> classes(pred.begin(), pred.end());
  classes.insert(truth.begin(), truth.end());
  double sum = 0;
  for (int64_t c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    const double denom = 2 * tp + fp + fn;
    sum += denom > 0 ? 2 * tp / denom : 0;
  }
  return sum / static_cast<double>(classes.size());
}

// Textbook silhouette from a precomputed distance matrix.
double oracle_silhouette(const Tensor<float>& emb,
                         const std::vector<int64_t>& labels) {
  const int64_t n = emb.shape[0];
  const int64_t d = emb.shape[1];
  std::vector<double> dist(static_cast<size_t>(n * n), 0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0;
      for (int64_t c = 0; c < d; ++c) {
        const double diff =
            double(emb.data[i * d + c]) - double(emb.data[j * d + c]);
        s += diff * diff;
      }
      dist[static_cast<size_t>(i * n + j)] = std::sqrt(s);
    }
  double total = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t own_count = 0;
    for (int64_t j = 0; j < n; ++j)
      own_count += j != i && labels[size_t(j)] == labels[size_t(i)];
    if (own_count == 0) continue;
    double a = 0;
    for (int64_t j = 0; j < n; ++j)
      if (j != i && labels[size_t(j)] == labels[size_t(i)])
        a += dist[static_cast<size_t>(i * n + j)];
    a /= static_cast<double>(own_count);
    double b = std::numeric_limits<double>::infinity();
    std::set<int64_t> others(labels.begin(), labels.end());
    others.erase(labels[static_cast<size_t>(i)]);
    for (int64_t o : others) {
      double s = 0;
      int64_t cnt = 0;
      for (int64_t j = 0; j < n; ++j)
        if (labels[static_cast<size_t>(j)] == o) {
          s += dist[static_cast<size_t>(i * n + j)];
          ++cnt;
        }
      b = std::min(b, s / static_cast<double>(cnt));
    }
    if (std::max(a, b) > 0) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

// Cyclic Jacobi eigensolver, ascending eigenvalues. Independent of Eigen.
std::vector<double> jacobi_eigenvalues(std::vector<double> a, int64_t n) {
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q)
        off += a[size_t(p * n + q)] * a[size_t(p * n + q)];
    if (off < 1e-24) break;
    for (int64_t p = 0; p < n; ++p)
      for (int64_t q = p + 1; q < n; ++q) {
        const double apq = a[size_t(p * n + q)];
        if (std::abs(apq) < 1e-30) continue;
        const double theta =
            (a[size_t(q * n + q)] - a[size_t(p * n + p)]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (int64_t k = 0; k < n; ++k) {
          const double akp = a[size_t(k * n + p)];
          const double akq = a[size_t(k * n + q)];
          a[size_t(k * n + p)] = c * akp - s * akq;
          a[size_t(k * n + q)] = s * akp + c * akq;
        }
        for (int64_t k = 0; k < n; ++k) {
          const double apk = a[size_t(p * n + k)];
          const double aqk = a[size_t(q * n + k)];
          a[size_t(p * n + k)] = c * apk - s * aqk;
          a[size_t(q * n + k)] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) ev[size_t(i)] = a[size_t(i * n + i)];
  std::sort(ev.begin(), ev.end());
  return ev;
}

std::vector<double> covariance_matrix(const Tensor<float>& emb) {
  const int64_t n = emb.shape[0];
  const int64_t d = emb.shape[1];
  std::vector<double> mean(static_cast<size_t>(d), 0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) mean[size_t(j)] += emb.data[i * d + j];
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> cov(static_cast<size_t>(d * d), 0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t p = 0; p < d; ++p)
      for (int64_t q = 0; q < d; ++q)
        cov[size_t(p * d + q)] += (emb.data[i * d + p] - mean[size_t(p)]) *
                                  (emb.data[i * d + q] - mean[size_t(q)]);
  for (double& c : cov) c /= static_cast<double>(n - 1);
  return cov;
}

// Small but complete experiment: 3 classes x 2 environments, one session
// per cell, sized so the in-dataset split still has test samples.
evalx::ExperimentConfig tiny_experiment() {
  evalx::ExperimentConfig cfg;
  cfg.generator.n_classes = 3;
  cfg.generator.attribute_value_counts = {2};
  cfg.generator.sessions_per_cell = 1;
  cfg.generator.session_length_s = 6.0;
  cfg.generator.modalities = {{"imu", 256}, {"mic", 256}};
  cfg.window_s = 1.0;
  cfg.overlap_s = 0.5;
  cfg.stft.window_length = 32;
  cfg.stft.hop_length = 16;

  cfg.cvae.latent_dim = 3;
  cfg.cvae.cond_width = 4;
  cfg.cvae.conv_channels = {2};
  cfg.cvae.fusion_width = 8;
  cfg.cvae.pseudo_session_size = 4;
  cfg.cvae_train.epochs = 1;
  cfg.cvae_train.batch_size = 8;
  cfg.interp.ratio = 0.5;

  cfg.satcl.embed_dim = 6;
  cfg.satcl.proj_hidden = 8;
  cfg.satcl.conv_channels = {2};
  cfg.satcl.batch_sessions = 2;
  cfg.satcl_train.epochs = 1;
  cfg.satcl_train.steps_per_epoch = 2;

  cfg.classifier.family = cls::Family::shallow;
  cfg.classifier.hidden = 8;
  cfg.cls_train.epochs = 2;
  cfg.cls_train.batch_size = 16;
  cfg.cls_train.patience = 2;

  cfg.methods = {Method::basic, Method::sudokusens};
  cfg.coverages = {100.0, 67.0};
  cfg.seeds = {1};
  cfg.diagnostic_cap = 256;
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

} // namespace

TEST_CASE("accuracy and macro F1 match hand-worked values") {
  CHECK(evalx::accuracy({1, 2, 0}, {1, 2, 0}) == doctest::Approx(1.0));
  CHECK(evalx::macro_f1({1, 2, 0}, {1, 2, 0}) == doctest::Approx(1.0));
  CHECK(evalx::accuracy({0, 0}, {1, 1}) == doctest::Approx(0.0));
  CHECK(evalx::macro_f1({0, 0}, {1, 1}) == doctest::Approx(0.0));

  // Worked confusion: class 0 F1 2/3, class 1 F1 2/3, class 2 F1 1.
  const std::vector<int64_t> pred{0, 0, 1, 2};
  const std::vector<int64_t> truth{0, 1, 1, 2};
  CHECK(evalx::accuracy(pred, truth) == doctest::Approx(0.75));
  CHECK(evalx::macro_f1(pred, truth) == doctest::Approx(7.0 / 9.0));

  // Sparse ids: only classes 3 and 7 appear, nothing else is scored.
  CHECK(evalx::macro_f1({3, 7, 3}, {3, 3, 3}) == doctest::Approx(0.4));

  CHECK_THROWS_AS(evalx::accuracy({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(evalx::accuracy({1}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(evalx::macro_f1({}, {}), std::invalid_argument);
}

TEST_CASE("macro F1 agrees with an independent formulation") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<int64_t> pred, truth;
    for (int i = 0; i < 40; ++i) {
      pred.push_back(rng.index(5));
      truth.push_back(rng.index(5));
    }
    CHECK(evalx::macro_f1(pred, truth) ==
          doctest::Approx(oracle_macro_f1(pred, truth)).epsilon(1e-12));
  }
}

TEST_CASE("silhouette matches hand values and the textbook oracle") {
  // Two 1-D pairs: outer points see b = 10.5, inner points b = 9.5,
  // a = 1 everywhere.
  const auto quad = rows2({{0}, {1}, {10}, {11}});
  CHECK(evalx::silhouette(quad, {0, 0, 1, 1}) ==
        doctest::Approx((19.0 / 21.0 + 17.0 / 19.0) / 2.0).epsilon(1e-9));

  // Well-separated tight clusters score close to 1.
  const auto tight = rows2({{0, 0}, {0.2f, 0}, {10, 0}, {10.2f, 0}});
  CHECK(evalx::silhouette(tight, {0, 0, 1, 1}) > 0.95);

  // Singleton cluster contributes 0; the pair scores (b - a) / b with
  // a = 1 and b the distance to the lone point (5 and 4).
  const auto lone = rows2({{0}, {1}, {5}});
  const double expect = ((5.0 - 1) / 5.0 + (4.0 - 1) / 4.0 + 0.0) / 3.0;
  CHECK(evalx::silhouette(lone, {0, 0, 1}) ==
        doctest::Approx(expect).epsilon(1e-9));

  Rng rng(11);
  SUBCASE("random embeddings, three clusters") {
    Tensor<float> emb({30, 4});
    std::vector<int64_t> labels;
    for (auto& v : emb.data) v = static_cast<float>(rng.normal());
    for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
    CHECK(evalx::silhouette(emb, labels) ==
          doctest::Approx(oracle_silhouette(emb, labels)).epsilon(1e-9));
    // Interleaved draws from one distribution have no cluster structure.
    CHECK(std::abs(evalx::silhouette(emb, labels)) < 0.2);
  }

  CHECK_THROWS_AS(evalx::silhouette(quad, {0, 0, 0, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(evalx::silhouette(rows2({{1}}), {0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(evalx::silhouette(quad, {0, 0, 1}), std::invalid_argument);
}

TEST_CASE("projection preserves geometry when no reduction happens") {
  Rng rng(3);
  Tensor<float> emb({40, 2});
  for (auto& v : emb.data) v = static_cast<float>(rng.uniform(-2, 2));
  const auto proj = evalx::project_embeddings(emb, 2);
  REQUIRE(proj.points.shape == std::vector<int64_t>({40, 2}));
  CHECK(proj.retained == doctest::Approx(1.0));
  // Full-rank PCA is a rigid rotation of the centered data: pairwise
  // distances survive exactly.
  for (int64_t i = 0; i < 40; i += 7)
    for (int64_t j = i + 1; j < 40; j += 5) {
      double d0 = 0, d1 = 0;
      for (int64_t c = 0; c < 2; ++c) {
        const double a =
            double(emb.data[i * 2 + c]) - double(emb.data[j * 2 + c]);
        const double b = double(proj.points.data[i * 2 + c]) -
                         double(proj.points.data[j * 2 + c]);
        d0 += a * a;
        d1 += b * b;
      }
      CHECK(std::sqrt(d1) == doctest::Approx(std::sqrt(d0)).epsilon(1e-4));
    }
}

TEST_CASE("projection retained variance matches a Jacobi eigensolver") {
  // D = 60 > 50 forces a real first-stage truncation; N = 80 > D keeps the
  // covariance branch in play.
  Rng rng(5);
  const int64_t n = 80, d = 60;
  Tensor<float> emb({n, d});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j)
      emb.data[i * d + j] = static_cast<float>(
          rng.normal() * std::pow(0.9, static_cast<double>(j)));

  const auto proj = evalx::project_embeddings(emb, 2);
  const auto ev = jacobi_eigenvalues(covariance_matrix(emb), d);
  double total = 0, kept = 0;
  for (size_t i = 0; i < ev.size(); ++i) {
    total += std::max(0.0, ev[i]);
    if (i >= ev.size() - 50) kept += std::max(0.0, ev[i]);
  }
  CHECK(proj.retained == doctest::Approx(kept / total).epsilon(1e-6));
  CHECK(proj.retained < 1.0);
  CHECK(proj.retained > 0.5);
}

TEST_CASE("Gram-branch projection maximizes variance like true PCA") {
  // D > N exercises the N x N eigendecomposition. Any correct PCA puts
  // exactly the j-th covariance eigenvalue of variance on score column j
  // and keeps the columns centered and orthogonal; check those defining
  // properties against an independent Jacobi eigensolve.
  Rng rng(9);
  const int64_t n = 18, d = 40;
  Tensor<float> emb({n, d});
  for (auto& v : emb.data) v = static_cast<float>(rng.normal());

  const auto proj = evalx::project_embeddings(emb, 2);
  const auto ev = jacobi_eigenvalues(covariance_matrix(emb), d);

  for (int comp = 0; comp < 2; ++comp) {
    double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += proj.points.data[i * 2 + comp];
    mean /= static_cast<double>(n);
    CHECK(std::abs(mean) < 1e-4);
    double var = 0;
    for (int64_t i = 0; i < n; ++i) {
      const double c = double(proj.points.data[i * 2 + comp]) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n - 1);
    CHECK(var == doctest::Approx(ev[ev.size() - 1 -
                                    static_cast<size_t>(comp)])
                     .epsilon(1e-4));
  }
  double dot = 0, n0 = 0, n1 = 0;
  for (int64_t i = 0; i < n; ++i) {
    dot += double(proj.points.data[i * 2]) * double(proj.points.data[i * 2 + 1]);
    n0 += double(proj.points.data[i * 2]) * double(proj.points.data[i * 2]);
    n1 += double(proj.points.data[i * 2 + 1]) *
          double(proj.points.data[i * 2 + 1]);
  }
  CHECK(std::abs(dot) / std::sqrt(n0 * n1) < 1e-4);

  // Same input, same bytes out.
  const auto again = evalx::project_embeddings(emb, 2);
  CHECK(again.points.data == proj.points.data);
  CHECK(again.retained == proj.retained);
}

TEST_CASE("projection rejects degenerate input") {
  CHECK_THROWS_AS(evalx::project_embeddings(rows2({{1, 2}}), 2),
                  std::invalid_argument);
  const auto flat = rows2({{3, 3}, {3, 3}, {3, 3}});
  CHECK_THROWS_AS(evalx::project_embeddings(flat, 2), std::invalid_argument);
}

TEST_CASE("method names round-trip and stage flags match the ablations") {
  for (Method m : {Method::basic, Method::conventional_aug,
                   Method::sudokusens, Method::sudokusens_minus_satcl,
                   Method::sudokusens_minus_interp,
                   Method::sudokusens_frozen_mask})
    CHECK(evalx::method_from_name(evalx::method_name(m)) == m);
  CHECK_THROWS_AS(evalx::method_from_name("nope"), std::invalid_argument);

  CHECK_FALSE(evalx::method_uses_interp(Method::basic));
  CHECK_FALSE(evalx::method_uses_satcl(Method::conventional_aug));
  CHECK(evalx::method_uses_interp(Method::sudokusens));
  CHECK(evalx::method_uses_satcl(Method::sudokusens));
  CHECK_FALSE(evalx::method_uses_satcl(Method::sudokusens_minus_satcl));
  CHECK(evalx::method_uses_interp(Method::sudokusens_minus_satcl));
  CHECK_FALSE(evalx::method_uses_interp(Method::sudokusens_minus_interp));
  CHECK(evalx::method_uses_satcl(Method::sudokusens_frozen_mask));
}

TEST_CASE("experiment config round-trips through JSON with a stable hash") {
  const auto cfg = tiny_experiment();
  cfg.validate();
  const auto back = evalx::ExperimentConfig::from_json(cfg.to_json());
  CHECK(back.to_json().dump() == cfg.to_json().dump());
  CHECK(back.hash() == cfg.hash());

  auto bad = cfg;
  bad.coverages = {150.0};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.methods = {Method::basic, Method::basic};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.overlap_s = cfg.window_s;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("report writers produce exact CSV") {
  evalx::ExperimentReport rep;
  rep.config_hash = 42;
  evalx::CellResult a;
  a.method = Method::basic;
  a.coverage = 50;
  a.seed = 1;
  a.classifier_family = "shallow";
  a.accuracy = 0.5;
  a.macro_f1 = 0.25;
  a.duration_s = 1.5;
  evalx::CellResult b = a;
  b.seed = 2;
  b.accuracy = 0.7;
  b.macro_f1 = 0.35;
  evalx::CellResult c = a;
  c.method = Method::sudokusens;
  c.error = "stage, failed";
  c.silhouette_before = 0.25;
  c.silhouette_after = 0.5;
  rep.cells = {a, b, c};

  TempDir tmp("sudoku_evalx_csv");
  evalx::write_report_csv((tmp.path / "r.csv").string(), rep);
  CHECK(slurp(tmp.path / "r.csv") ==
        "method,coverage,seed,classifier_family,accuracy,macro_f1,"
        "silhouette_before,silhouette_after,error\n"
        "basic,50,1,shallow,0.5,0.25,,,\n"
        "basic,50,2,shallow,0.7,0.35,,,\n"
        "sudokusens,50,1,shallow,,,0.25,0.5,stage; failed\n");

  evalx::write_summary_csv((tmp.path / "s.csv").string(), rep);
  // std of {0.5, 0.7} = sqrt(0.02) = 0.141421356.
  CHECK(slurp(tmp.path / "s.csv") ==
        "method,coverage,n_ok,n_failed,accuracy_mean,accuracy_std,"
        "macro_f1_mean,macro_f1_std\n"
        "basic,50,2,0,0.6,0.141421356,0.3,0.0707106781\n"
        "sudokusens,50,0,1,0,0,0,0\n");
}

TEST_CASE("experiment sweep covers every cell and is reproducible") {
  const auto cfg = tiny_experiment();
  const auto rep = evalx::run_experiment(cfg);

  REQUIRE(rep.cells.size() == 4);
  std::set<std::pair<std::string, double>> seen;
  for (const auto& c : rep.cells) {
    CHECK(c.seed == 1);
    CHECK(c.classifier_family == "shallow");
    CHECK(seen.insert({evalx::method_name(c.method), c.coverage}).second);
    INFO(evalx::method_name(c.method), " cov ", c.coverage, ": ", c.error);
    CHECK(c.ok());
    CHECK(c.accuracy >= 0);
    CHECK(c.accuracy <= 1);
    CHECK(c.macro_f1 >= 0);
    CHECK(c.macro_f1 <= 1);
    if (evalx::method_uses_satcl(c.method)) {
      CHECK(c.silhouette_before.has_value());
      CHECK(c.silhouette_after.has_value());
    } else {
      CHECK_FALSE(c.silhouette_before.has_value());
    }
  }
  for (Method m : cfg.methods)
    for (double cov : cfg.coverages)
      CHECK(seen.count({evalx::method_name(m), cov}) == 1);

  const auto rep2 = evalx::run_experiment(cfg);
  CHECK(rep2.to_json().dump() == rep.to_json().dump());
}

TEST_CASE("a failing stage records its error without sinking other cells") {
  auto cfg = tiny_experiment();
  cfg.coverages = {67.0};
  // More sessions per contrastive batch than the benchmark has: SA-TCL
  // cannot sample a batch and the sudokusens cell must fail.
  cfg.satcl.batch_sessions = 50;
  const auto rep = evalx::run_experiment(cfg);

  REQUIRE(rep.cells.size() == 2);
  for (const auto& c : rep.cells) {
    if (c.method == Method::basic) {
      INFO("basic: ", c.error);
      CHECK(c.ok());
    } else {
      CHECK_FALSE(c.ok());
      CHECK(c.error.find("satcl") != std::string::npos);
    }
  }
}

TEST_CASE("experiment artifacts land on disk and rerun byte-identically") {
  auto cfg = tiny_experiment();
  cfg.methods = {Method::basic, Method::sudokusens_minus_satcl};
  cfg.coverages = {67.0};

  TempDir tmp("sudoku_evalx_run");
  const auto dir = (tmp.path / "out").string();
  (void)evalx::run_experiment(cfg, dir);

  namespace sfs = std::filesystem;
  CHECK(sfs::exists(sfs::path(dir) / "report.json"));
  CHECK(sfs::exists(sfs::path(dir) / "report.csv"));
  CHECK(sfs::exists(sfs::path(dir) / "summary.csv"));
  CHECK(sfs::exists(sfs::path(dir) / "timings.csv"));
  for (const char* cell : {"basic_cov67_seed1", "sudokusens_minus_satcl_cov67_seed1"}) {
    CHECK(sfs::exists(sfs::path(dir) / "cells" / cell / "metrics.json"));
    CHECK(sfs::exists(sfs::path(dir) / "cells" / cell / "predictions.csv"));
  }

  const std::string first = slurp(sfs::path(dir) / "report.json");
  const auto dir2 = (tmp.path / "out2").string();
  (void)evalx::run_experiment(cfg, dir2);
  CHECK(slurp(sfs::path(dir2) / "report.json") == first);
}
