#include "sudokusens/evalx.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "sudokusens/dataset_io.hpp"
#include "sudokusens/parallel.hpp"

namespace sudoku::evalx {

double accuracy(const std::vector<int64_t>& pred,
                const std::vector<int64_t>& truth) {
  if (pred.empty()) throw std::invalid_argument("accuracy: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument("accuracy: length mismatch");
  int64_t hits = 0;
  for (size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double macro_f1(const std::vector<int64_t>& pred,
                const std::vector<int64_t>& truth) {
  if (pred.empty()) throw std::invalid_argument("macro_f1: empty input");
  if (pred.size() != truth.size())
    throw std::invalid_argument("macro_f1: length mismatch");
  std::set<int64_t> classes(pred.begin(), pred.end());
  classes.insert(truth.begin(), truth.end());
  double sum = 0;
  for (int64_t c : classes) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && truth[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (truth[i] == c) ++fn;
    }
    const double prec = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
    const double rec = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
    sum += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  }
  return sum / static_cast<double>(classes.size());
}

double silhouette(const Tensor<float>& emb,
                  const std::vector<int64_t>& labels) {
  if (emb.shape.size() != 2)
    throw std::invalid_argument("silhouette: emb must be [N, D]");
  const int64_t n = emb.shape[0];
  const int64_t d = emb.shape[1];
  if (n < 2) throw std::invalid_argument("silhouette: fewer than two points");
  if (static_cast<int64_t>(labels.size()) != n)
    throw std::invalid_argument("silhouette: label count mismatch");

  // Remap labels to dense cluster ids.
  std::map<int64_t, int64_t> ids;
  for (int64_t l : labels) ids.emplace(l, static_cast<int64_t>(ids.size()));
  const int64_t k = static_cast<int64_t>(ids.size());
  if (k < 2)
    throw std::invalid_argument("silhouette: fewer than two clusters");
  std::vector<int64_t> cid(static_cast<size_t>(n));
  std::vector<int64_t> csize(static_cast<size_t>(k), 0);
  for (int64_t i = 0; i < n; ++i) {
    cid[static_cast<size_t>(i)] = ids.at(labels[static_cast<size_t>(i)]);
    ++csize[static_cast<size_t>(cid[static_cast<size_t>(i)])];
  }

  double total = 0;
  std::vector<double> dist_sum(static_cast<size_t>(k));
  for (int64_t i = 0; i < n; ++i) {
    std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
    const float* xi = emb.data.data() + i * d;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const float* xj = emb.data.data() + j * d;
      double s2 = 0;
      for (int64_t c = 0; c < d; ++c) {
        const double diff = double(xi[c]) - double(xj[c]);
        s2 += diff * diff;
      }
      dist_sum[static_cast<size_t>(cid[static_cast<size_t>(j)])] +=
          std::sqrt(s2);
    }
    const int64_t own = cid[static_cast<size_t>(i)];
    if (csize[static_cast<size_t>(own)] < 2) continue; // singleton scores 0
    const double a = dist_sum[static_cast<size_t>(own)] /
                     double(csize[static_cast<size_t>(own)] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (int64_t c = 0; c < k; ++c) {
      if (c == own || csize[static_cast<size_t>(c)] == 0) continue;
      b = std::min(b, dist_sum[static_cast<size_t>(c)] /
                          double(csize[static_cast<size_t>(c)]));
    }
    const double m = std::max(a, b);
    if (m > 0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

namespace {

struct PcaStage {
  Eigen::MatrixXd scores; // [n, k]
  double retained = 0;    // top-k share of total variance
};

// One PCA projection to k dims. Uses the D x D covariance when D <= N and
// the N x N Gram matrix otherwise; both yield identical scores. Eigenvector
// signs are fixed by making the largest-magnitude component positive.
PcaStage pca_stage(const Eigen::MatrixXd& rows, int64_t k) {
  const int64_t n = rows.rows();
  const int64_t d = rows.cols();
  Eigen::MatrixXd x = rows.rowwise() - rows.colwise().mean();
  const double denom = static_cast<double>(n - 1);
  if (!(x.squaredNorm() / denom > 0))
    throw std::invalid_argument("project_embeddings: zero total variance");

  Eigen::MatrixXd dirs(d, k);
  Eigen::VectorXd evals;
  if (d <= n) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x.transpose() * x /
                                                      denom);
    evals = es.eigenvalues(); // ascending
    for (int64_t i = 0; i < k; ++i)
      dirs.col(i) = es.eigenvectors().col(d - 1 - i);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x * x.transpose() /
                                                      denom);
    evals = es.eigenvalues();
    // Null Gram directions (centered data has rank <= n-1) would normalize
    // numerical noise into a fake component; their true score is zero.
    const double floor_ev = evals(n - 1) * 1e-12;
    for (int64_t i = 0; i < k; ++i) {
      if (evals(n - 1 - i) <= floor_ev) {
        dirs.col(i).setZero();
        continue;
      }
      Eigen::VectorXd v = x.transpose() * es.eigenvectors().col(n - 1 - i);
      dirs.col(i) = v / v.norm();
    }
  }
  for (int64_t i = 0; i < k; ++i) {
    int64_t arg = 0;
    dirs.col(i).cwiseAbs().maxCoeff(&arg);
    if (dirs(arg, i) < 0) dirs.col(i) = -dirs.col(i);
  }

  PcaStage out;
  out.scores = x * dirs;
  double total = 0, kept = 0;
  for (int64_t i = 0; i < evals.size(); ++i) {
    const double ev = std::max(0.0, evals(i));
    total += ev;
    if (i >= evals.size() - k) kept += ev;
  }
  out.retained = total > 0 ? kept / total : 0;
  return out;
}

} // namespace

Projection project_embeddings(const Tensor<float>& emb, int64_t target_dim) {
  if (emb.shape.size() != 2)
    throw std::invalid_argument("project_embeddings: emb must be [N, D]");
  if (target_dim < 1)
    throw std::invalid_argument("project_embeddings: target_dim < 1");
  const int64_t n = emb.shape[0];
  const int64_t d = emb.shape[1];
  if (n < 2 || n < target_dim)
    throw std::invalid_argument("project_embeddings: too few points");

  Eigen::MatrixXd x(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) x(i, j) = emb.data[i * d + j];

  const int64_t k1 = std::min<int64_t>(50, std::min(d, n - 1));
  PcaStage s1 = pca_stage(x, k1);
  const int64_t k2 = std::min(target_dim, k1);
  PcaStage s2 = pca_stage(s1.scores, k2);

  Projection out;
  out.retained = s1.retained;
  out.points = Tensor<float>({n, target_dim});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < k2; ++j) // extra columns stay zero
      out.points.data[i * target_dim + j] =
          static_cast<float>(s2.scores(i, j));
  return out;
}

void write_projection_csv(const std::string& path, const Tensor<float>& pts,
                          const std::vector<std::string>& labels) {
  if (pts.shape.size() != 2 || pts.shape[1] < 2)
    throw std::invalid_argument("write_projection_csv: pts must be [N, >=2]");
  if (static_cast<int64_t>(labels.size()) != pts.shape[0])
    throw std::invalid_argument("write_projection_csv: label count mismatch");
  std::ostringstream os;
  os << "x,y,label\n";
  char buf[64];
  for (int64_t i = 0; i < pts.shape[0]; ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,", pts.data[i * pts.shape[1]],
                  pts.data[i * pts.shape[1] + 1]);
    os << buf << labels[static_cast<size_t>(i)] << "\n";
  }
  io::atomic_write_text(path, os.str());
}

std::string method_name(Method m) {
  switch (m) {
    case Method::basic: return "basic";
    case Method::conventional_aug: return "conventional_aug";
    case Method::sudokusens: return "sudokusens";
    case Method::sudokusens_minus_satcl: return "sudokusens_minus_satcl";
    case Method::sudokusens_minus_interp: return "sudokusens_minus_interp";
    case Method::sudokusens_frozen_mask: return "sudokusens_frozen_mask";
  }
  throw std::logic_error("method_name: bad enum");
}

Method method_from_name(const std::string& s) {
  for (Method m : {Method::basic, Method::conventional_aug,
                   Method::sudokusens, Method::sudokusens_minus_satcl,
                   Method::sudokusens_minus_interp,
                   Method::sudokusens_frozen_mask})
    if (method_name(m) == s) return m;
  throw std::invalid_argument("unknown method: " + s);
}

bool method_uses_interp(Method m) {
  return m == Method::sudokusens || m == Method::sudokusens_minus_satcl ||
         m == Method::sudokusens_frozen_mask;
}

bool method_uses_satcl(Method m) {
  return m == Method::sudokusens || m == Method::sudokusens_minus_interp ||
         m == Method::sudokusens_frozen_mask;
}

void ExperimentConfig::validate() const {
  generator.validate();
  if (!(window_s > 0))
    throw std::invalid_argument("experiment: window_s must be > 0");
  if (!(overlap_s >= 0 && overlap_s < window_s))
    throw std::invalid_argument("experiment: overlap_s in [0, window_s)");
  stft.validate();
  cvae.validate();
  interp.validate();
  satcl.validate();
  classifier.validate();
  if (methods.empty()) throw std::invalid_argument("experiment: no methods");
  if (coverages.empty())
    throw std::invalid_argument("experiment: no coverages");
  if (seeds.empty()) throw std::invalid_argument("experiment: no seeds");
  for (double c : coverages)
    if (!(c > 0 && c <= 100))
      throw std::invalid_argument("experiment: coverage outside (0, 100]");
  std::set<std::string> mn;
  for (Method m : methods)
    if (!mn.insert(method_name(m)).second)
      throw std::invalid_argument("experiment: duplicate method");
  if (std::set<double>(coverages.begin(), coverages.end()).size() !=
      coverages.size())
    throw std::invalid_argument("experiment: duplicate coverage");
  if (std::set<uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    throw std::invalid_argument("experiment: duplicate seed");
  if (diagnostic_cap < 2)
    throw std::invalid_argument("experiment: diagnostic_cap < 2");
}

nlohmann::json ExperimentConfig::to_json() const {
  std::vector<std::string> mn;
  for (Method m : methods) mn.push_back(method_name(m));
  return {{"generator", generator.to_json()},
          {"window_s", window_s},
          {"overlap_s", overlap_s},
          {"stft", stft.to_json()},
          {"cvae", cvae.to_json()},
          {"cvae_train", cvae_train.to_json()},
          {"interp", interp.to_json()},
          {"satcl", satcl.to_json()},
          {"satcl_train", satcl_train.to_json()},
          {"classifier", classifier.to_json()},
          {"cls_train", cls_train.to_json()},
          {"augment", augment.to_json()},
          {"methods", mn},
          {"coverages", coverages},
          {"seeds", seeds},
          {"diagnostic_cap", diagnostic_cap}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.generator = GeneratorConfig::from_json(j.at("generator"));
  c.window_s = j.at("window_s").get<double>();
  c.overlap_s = j.at("overlap_s").get<double>();
  c.stft = StftConfig::from_json(j.at("stft"));
  c.cvae = cvae::CvaeConfig::from_json(j.at("cvae"));
  c.cvae_train = cvae::CvaeTrainConfig::from_json(j.at("cvae_train"));
  c.interp = cvae::InterpolationConfig::from_json(j.at("interp"));
  c.satcl = satcl::SatclConfig::from_json(j.at("satcl"));
  c.satcl_train = satcl::SatclTrainConfig::from_json(j.at("satcl_train"));
  c.classifier = cls::ClassifierSpec::from_json(j.at("classifier"));
  c.cls_train = cls::ClsTrainConfig::from_json(j.at("cls_train"));
  c.augment = AugmentConfig::from_json(j.at("augment"));
  c.methods.clear();
  for (const auto& s : j.at("methods"))
    c.methods.push_back(method_from_name(s.get<std::string>()));
  c.coverages = j.at("coverages").get<std::vector<double>>();
  c.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  c.diagnostic_cap = j.at("diagnostic_cap").get<int64_t>();
  return c;
}

uint64_t ExperimentConfig::hash() const {
  return detail::fnv1a(to_json().dump());
}

// duration_s stays out of the JSON form: metric artifacts rerun
// byte-identically, wall time goes to timings.csv instead.
nlohmann::json CellResult::to_json() const {
  nlohmann::json j{{"method", method_name(method)},
                   {"coverage", coverage},
                   {"seed", seed},
                   {"classifier_family", classifier_family},
                   {"accuracy", accuracy},
                   {"macro_f1", macro_f1},
                   {"error", error}};
  j["silhouette_before"] =
      silhouette_before ? nlohmann::json(*silhouette_before)
                        : nlohmann::json();
  j["silhouette_after"] = silhouette_after ? nlohmann::json(*silhouette_after)
                                           : nlohmann::json();
  return j;
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& c : cells) arr.push_back(c.to_json());
  return {{"config", config}, {"config_hash", config_hash}, {"cells", arr}};
}

namespace {

std::string cov_tag(double cov) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", cov);
  return buf;
}

std::vector<int64_t> session_row_offsets(const Dataset& ds) {
  std::vector<int64_t> off(ds.sessions.size() + 1, 0);
  for (size_t i = 0; i < ds.sessions.size(); ++i)
    off[i + 1] = off[i] + static_cast<int64_t>(ds.sessions[i].samples.size());
  return off;
}

// Evenly spaced row subset for the O(N^2) diagnostics; covers all sessions
// instead of truncating to the first ones.
std::vector<int64_t> strided_indices(int64_t n, int64_t cap) {
  std::vector<int64_t> idx;
  if (n <= cap) {
    idx.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  } else {
    idx.resize(static_cast<size_t>(cap));
    for (int64_t i = 0; i < cap; ++i)
      idx[static_cast<size_t>(i)] = i * n / cap;
  }
  return idx;
}

Tensor<float> flatten_rows(const FeatureSet& fs,
                           const std::vector<int64_t>& rows) {
  int64_t d = 0;
  for (const auto& t : fs.per_modality)
    d += t.shape[1] * t.shape[2] * t.shape[3];
  Tensor<float> out({static_cast<int64_t>(rows.size()), d});
  int64_t col0 = 0;
  for (const auto& t : fs.per_modality) {
    const int64_t per = t.shape[1] * t.shape[2] * t.shape[3];
    for (size_t i = 0; i < rows.size(); ++i)
      std::copy_n(t.data.data() + rows[i] * per, per,
                  out.data.data() + static_cast<int64_t>(i) * d + col0);
    col0 += per;
  }
  return out;
}

Tensor<float> take_rows(const Tensor<float>& t,
                        const std::vector<int64_t>& rows) {
  const int64_t d = t.shape[1];
  Tensor<float> out({static_cast<int64_t>(rows.size()), d});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(t.data.data() + rows[i] * d, d,
                out.data.data() + static_cast<int64_t>(i) * d);
  return out;
}

// Training sessions rebuilt as originals plus augmented copies; copies get
// fresh timestamps after the originals so session ordering stays valid.
Dataset augment_train_sessions(const Dataset& ds, const SplitAssignment& sp,
                               const AugmentConfig& cfg, Rng& rng) {
  Dataset out;
  out.schema = ds.schema;
  out.modality_spec = ds.modality_spec;
  out.class_attribute = ds.class_attribute;
  for (size_t i = 0; i < ds.sessions.size(); ++i) {
    const auto& idx = sp.per_session[i].train;
    if (idx.empty()) continue;
    const auto& src = ds.sessions[i];
    Session sess;
    sess.session_id = src.session_id;
    sess.class_label = src.class_label;
    sess.condition = src.condition;
    int64_t next_ts = 0;
    for (int64_t j : idx) {
      sess.samples.push_back(src.samples[static_cast<size_t>(j)]);
      next_ts = std::max(next_ts, sess.samples.back().timestamp_index + 1);
    }
    for (int64_t j : idx)
      for (auto& copy : conventional_augment(src.samples[static_cast<size_t>(j)],
                                             cfg, rng)) {
        copy.timestamp_index = next_ts++;
        sess.samples.push_back(std::move(copy));
      }
    out.sessions.push_back(std::move(sess));
  }
  if (out.sessions.empty())
    throw std::runtime_error("conventional_aug: no training sessions");
  return out;
}

std::vector<std::string> class_values(const FeatureSet& fs) {
  const int a = fs.schema.attr_index(fs.class_attribute);
  if (a < 0)
    throw std::logic_error("experiment: class attribute missing from schema");
  return fs.schema.attributes[static_cast<size_t>(a)].second;
}

Tensor<float> predict_probs_all(const cls::ClassifierModel& model,
                                const FeatureSet& fs, int64_t chunk = 64) {
  const int64_t n = fs.size();
  const int64_t k = model.n_classes();
  Tensor<float> out({n, k});
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t stop = std::min(n, start + chunk);
    std::vector<int64_t> idx;
    for (int64_t i = start; i < stop; ++i) idx.push_back(i);
    const FeatureSet sub = select(fs, idx);
    const Tensor<float> p = cls::predict_proba(model, sub.per_modality);
    std::copy_n(p.data.data(), (stop - start) * k,
                out.data.data() + start * k);
  }
  return out;
}

struct CellInputs {
  const ExperimentConfig& cfg;
  const Dataset& ds;
  const SudokuMatrix& matrix;
  const SplitAssignment& split;
  const FeatureSet& fs_train;
  const FeatureSet& fs_val;
  const FeatureSet& fs_test;
  uint64_t seed;
  double coverage;
  std::string cell_dir; // empty: keep results in memory only
  bool emit_scatter;
};

// Runs fn under a stage label so a cell error names the failed stage.
template <typename Fn>
decltype(auto) stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(name) + ": " + e.what());
  }
}

CellResult run_cell(Method method, const CellInputs& in) {
  CellResult r;
  r.method = method;
  r.coverage = in.coverage;
  r.seed = in.seed;
  r.classifier_family = cls::family_name(in.cfg.classifier.family);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const uint64_t master = Rng::derive(
        in.seed, "cell/" + method_name(method) + "/cov" + cov_tag(in.coverage));
    RngSet rngs = seed_everything(master);

    FeatureSet train = in.fs_train;
    if (method == Method::conventional_aug)
      train = stage("augment", [&] {
        return build_features(
            augment_train_sessions(in.ds, in.split, in.cfg.augment, rngs.data),
            in.cfg.stft);
      });

    if (method_uses_interp(method)) {
      auto model = stage("cvae", [&] {
        auto m = cvae::build_cvae(in.cfg.cvae, train.schema,
                                  train.class_attribute, shapes_of(train),
                                  rngs.init);
        const auto res = cvae::train_cvae(m, train, in.cfg.cvae_train, rngs);
        if (res.aborted) throw std::runtime_error(res.abort_reason);
        return m;
      });
      train = stage("interpolate", [&] {
        return concat(train, cvae::interpolate(model, train, in.matrix,
                                               in.cfg.interp, rngs.sampling));
      });
    }

    FeatureSet val = in.fs_val;
    FeatureSet test = in.fs_test;
    if (method_uses_satcl(method)) {
      satcl::SatclConfig scfg = in.cfg.satcl;
      if (method == Method::sudokusens_frozen_mask) scfg.learnable_mask = false;
      auto model = stage("satcl", [&] {
        auto m = satcl::build_satcl(scfg, shapes_of(train), rngs.init);
        const auto res = satcl::train_satcl(m, train, in.cfg.satcl_train, rngs);
        if (res.aborted) throw std::runtime_error(res.abort_reason);
        return m;
      });

      Tensor<float> h;
      FeatureSet enc_train =
          stage("encode", [&] { return satcl::encode_featureset(model, train, &h); });

      stage("diagnostics", [&] {
        const auto diag = strided_indices(train.size(), in.cfg.diagnostic_cap);
        std::vector<int64_t> diag_labels;
        for (int64_t i : diag)
          diag_labels.push_back(train.session_index[static_cast<size_t>(i)]);
        const Tensor<float> flat = flatten_rows(train, diag);
        const int64_t pdim =
            std::min<int64_t>({50, flat.shape[0], flat.shape[1]});
        r.silhouette_before =
            silhouette(project_embeddings(flat, pdim).points, diag_labels);
        const Tensor<float> h_diag = take_rows(h, diag);
        r.silhouette_after = silhouette(h_diag, diag_labels);

        if (in.emit_scatter && !in.cell_dir.empty()) {
          std::vector<std::string> names;
          for (int64_t i : diag)
            names.push_back(train.sessions[static_cast<size_t>(
                train.session_index[static_cast<size_t>(i)])]);
          write_projection_csv(in.cell_dir + "/scatter_raw.csv",
                               project_embeddings(flat, 2).points, names);
          write_projection_csv(in.cell_dir + "/scatter_encoded.csv",
                               project_embeddings(h_diag, 2).points, names);
        }
      });

      train = std::move(enc_train);
      val = stage("encode", [&] { return satcl::encode_featureset(model, val); });
      test = stage("encode", [&] { return satcl::encode_featureset(model, test); });
    }

    const auto pred = stage("classifier", [&] {
      auto model = cls::build_classifier(in.cfg.classifier, shapes_of(train),
                                         class_values(train), rngs.init);
      const auto res =
          cls::train_classifier(model, train, val, in.cfg.cls_train, rngs);
      if (res.aborted) throw std::runtime_error(res.abort_reason);
      if (!in.cell_dir.empty())
        cls::write_predictions_csv(in.cell_dir + "/predictions.csv", test,
                                   predict_probs_all(model, test));
      return cls::predict(model, test);
    });
    r.accuracy = stage("metrics", [&] { return accuracy(pred, test.labels); });
    r.macro_f1 = stage("metrics", [&] { return macro_f1(pred, test.labels); });
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  r.duration_s = std::chrono::duration<double>(
                     std::chrono::steady_clock::now() - t0)
                     .count();
  if (!in.cell_dir.empty())
    io::atomic_write_text(in.cell_dir + "/metrics.json",
                          r.to_json().dump(2) + "\n");
  return r;
}

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

} // namespace

SudokuMatrix apply_coverage(const Dataset& ds, const SudokuMatrix& m,
                            double coverage, Rng& rng) {
  const int64_t total = m.rows() * m.cols();
  const int64_t hide =
      std::llround(static_cast<double>(total) * (1.0 - coverage / 100.0));
  if (hide <= 0) return m;

  std::vector<std::pair<int64_t, int64_t>> cand = m.seen_cells();
  for (size_t i = cand.size(); i > 1; --i)
    std::swap(cand[i - 1], cand[static_cast<size_t>(rng.index(
                               static_cast<int64_t>(i)))]);

  std::vector<std::pair<int64_t, int64_t>> chosen;
  for (const auto& c : cand) {
    if (static_cast<int64_t>(chosen.size()) == hide) break;
    chosen.push_back(c);
    try {
      (void)mask_cells(ds, m, chosen);
    } catch (const std::invalid_argument&) {
      chosen.pop_back();
    }
  }
  if (chosen.empty())
    throw std::runtime_error("apply_coverage: no feasible cell pattern for " +
                             cov_tag(coverage) + "% coverage");
  return mask_cells(ds, m, chosen).matrix;
}

std::vector<int64_t> split_feature_rows(const Dataset& ds,
                                        const SplitAssignment& sp,
                                        SplitPart part) {
  if (sp.per_session.size() != ds.sessions.size())
    throw std::invalid_argument(
        "split_feature_rows: split does not match dataset");
  const std::vector<int64_t> off = session_row_offsets(ds);
  std::vector<int64_t> rows;
  for (size_t i = 0; i < sp.per_session.size(); ++i) {
    const auto& s = sp.per_session[i];
    const auto& idx = part == SplitPart::train ? s.train
                      : part == SplitPart::val ? s.val
                                               : s.test;
    for (int64_t j : idx) rows.push_back(off[i] + j);
  }
  return rows;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::string& out_dir) {
  cfg.validate();
  apply_thread_cap();
  namespace sfs = std::filesystem;
  if (!out_dir.empty()) sfs::create_directories(sfs::path(out_dir) / "cells");

  ExperimentReport rep;
  rep.config = cfg.to_json();
  rep.config_hash = cfg.hash();

  for (size_t si = 0; si < cfg.seeds.size(); ++si) {
    const uint64_t seed = cfg.seeds[si];
    GeneratorConfig gen = cfg.generator;
    gen.rng_seed = Rng::derive(seed, "dataset");
    const Dataset ds =
        segment_sessions(generate_dataset(gen).first, cfg.window_s,
                         cfg.overlap_s)
            .dataset;
    const SudokuMatrix full = build_sudoku_matrix(ds);
    const FeatureSet features = build_features(ds, cfg.stft);
    const std::vector<int64_t> off = session_row_offsets(ds);

    for (double cov : cfg.coverages) {
      // A masking failure still has to surface every requested cell.
      std::string prep_error;
      SudokuMatrix matrix = full;
      SplitAssignment split;
      FeatureSet fs_train, fs_val, fs_test;
      try {
        Rng mask_rng(Rng::derive(seed, "mask/cov" + cov_tag(cov)));
        matrix = apply_coverage(ds, full, cov, mask_rng);
        const SplitMode mode = matrix.unseen_cells().empty()
                                   ? SplitMode::in_dataset
                                   : SplitMode::sudoku;
        split = make_split(ds, matrix, mode);
        fs_train = select(features, split_rows(split, off, Part::train));
        fs_val = select(features, split_rows(split, off, Part::val));
        fs_test = select(features, split_rows(split, off, Part::test));
      } catch (const std::exception& e) {
        prep_error = e.what();
      }

      for (Method m : cfg.methods) {
        std::string cell_dir;
        if (!out_dir.empty()) {
          cell_dir = (sfs::path(out_dir) / "cells" /
                      (method_name(m) + "_cov" + cov_tag(cov) + "_seed" +
                       std::to_string(seed)))
                         .string();
          sfs::create_directories(cell_dir);
        }
        if (!prep_error.empty()) {
          CellResult r;
          r.method = m;
          r.coverage = cov;
          r.seed = seed;
          r.classifier_family = cls::family_name(cfg.classifier.family);
          r.error = prep_error;
          if (!cell_dir.empty())
            io::atomic_write_text(cell_dir + "/metrics.json",
                                  r.to_json().dump(2) + "\n");
          rep.cells.push_back(std::move(r));
          continue;
        }
        CellInputs in{cfg,    ds,     matrix, split,    fs_train, fs_val,
                      fs_test, seed,  cov,    cell_dir, si == 0};
        rep.cells.push_back(run_cell(m, in));
      }
    }
  }

  if (!out_dir.empty()) {
    write_report_json((sfs::path(out_dir) / "report.json").string(), rep);
    write_report_csv((sfs::path(out_dir) / "report.csv").string(), rep);
    write_summary_csv((sfs::path(out_dir) / "summary.csv").string(), rep);
    // Wall time is the one non-reproducible output, so it gets its own file.
    std::ostringstream os;
    os << "method,coverage,seed,duration_s\n";
    for (const auto& c : rep.cells)
      os << method_name(c.method) << ',' << csv_double(c.coverage) << ','
         << c.seed << ',' << csv_double(c.duration_s) << '\n';
    io::atomic_write_text((sfs::path(out_dir) / "timings.csv").string(),
                          os.str());
  }
  return rep;
}

void write_report_json(const std::string& path, const ExperimentReport& rep) {
  io::atomic_write_text(path, rep.to_json().dump(2) + "\n");
}

void write_report_csv(const std::string& path, const ExperimentReport& rep) {
  std::ostringstream os;
  os << "method,coverage,seed,classifier_family,accuracy,macro_f1,"
        "silhouette_before,silhouette_after,error\n";
  for (const auto& c : rep.cells) {
    os << method_name(c.method) << ',' << csv_double(c.coverage) << ','
       << c.seed << ',' << c.classifier_family << ',';
    if (c.ok())
      os << csv_double(c.accuracy) << ',' << csv_double(c.macro_f1);
    else
      os << ',';
    os << ',';
    if (c.silhouette_before) os << csv_double(*c.silhouette_before);
    os << ',';
    if (c.silhouette_after) os << csv_double(*c.silhouette_after);
    os << ',';
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << err << '\n';
  }
  io::atomic_write_text(path, os.str());
}

void write_summary_csv(const std::string& path, const ExperimentReport& rep) {
  struct Agg {
    std::vector<double> acc, f1;
    int64_t failed = 0;
  };
  std::map<std::pair<std::string, double>, Agg> groups;
  for (const auto& c : rep.cells) {
    Agg& g = groups[{method_name(c.method), c.coverage}];
    if (c.ok()) {
      g.acc.push_back(c.accuracy);
      g.f1.push_back(c.macro_f1);
    } else {
      ++g.failed;
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto stddev = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };
  std::ostringstream os;
  os << "method,coverage,n_ok,n_failed,accuracy_mean,accuracy_std,"
        "macro_f1_mean,macro_f1_std\n";
  for (const auto& [key, g] : groups) {
    os << key.first << ',' << csv_double(key.second) << ',' << g.acc.size()
       << ',' << g.failed << ',' << csv_double(mean(g.acc)) << ','
       << csv_double(stddev(g.acc)) << ',' << csv_double(mean(g.f1)) << ','
       << csv_double(stddev(g.f1)) << '\n';
  }
  io::atomic_write_text(path, os.str());
}

} // namespace sudoku::evalx
