#include "sudokusens/satcl.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sudoku::satcl {

namespace {

std::vector<double> unit_row(const Tensor<float>& h, int64_t i) {
  const int64_t d = h.shape[1];
  std::vector<double> r(static_cast<size_t>(d));
  double ss = 0;
  for (int64_t c = 0; c < d; ++c) {
    r[static_cast<size_t>(c)] = h.at2(i, c);
    ss += r[static_cast<size_t>(c)] * r[static_cast<size_t>(c)];
  }
  const double n = std::sqrt(ss);
  if (n == 0.0)
    throw std::domain_error("nt_xent: zero-norm embedding at row " +
                            std::to_string(i));
  for (auto& v : r) v /= n;
  return r;
}

std::vector<Tensor<float>> gather_rows(const FeatureSet& fs,
                                       const std::vector<int64_t>& idx) {
  std::vector<Tensor<float>> out;
  for (const auto& t : fs.per_modality) {
    const int64_t per = t.numel() / t.shape[0];
    std::vector<int64_t> shape = t.shape;
    shape[0] = static_cast<int64_t>(idx.size());
    Tensor<float> sub(shape, 0.0f);
    for (size_t r = 0; r < idx.size(); ++r)
      std::copy(t.data.begin() + static_cast<size_t>(idx[r] * per),
                t.data.begin() + static_cast<size_t>((idx[r] + 1) * per),
                sub.data.begin() + r * static_cast<size_t>(per));
    out.push_back(std::move(sub));
  }
  return out;
}

// Top eigenvalue share of the embedding covariance; near 1 means the
// embeddings live on a line (dimensional collapse).
double top_eig_share(const Tensor<float>& h) {
  const int64_t n = h.shape[0], d = h.shape[1];
  if (n < 2) return 0.0;
  Eigen::MatrixXd x(n, d);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) x(i, j) = h.at2(i, j);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  Eigen::MatrixXd cov = x.transpose() * x / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const double trace = cov.trace();
  if (trace <= 0) return 0.0;
  return es.eigenvalues().maxCoeff() / trace;
}

} // namespace

double nt_xent_pair(const Tensor<float>& h, int64_t i, int64_t j, double tau) {
  if (h.rank() != 2) throw std::invalid_argument("nt_xent_pair: h must be 2-D");
  const int64_t n = h.shape[0];
  if (i < 0 || j < 0 || i >= n || j >= n || i == j)
    throw std::invalid_argument("nt_xent_pair: bad pair indices");
  if (!(tau > 0)) throw std::invalid_argument("nt_xent_pair: tau must be > 0");
  std::vector<std::vector<double>> rows;
  rows.reserve(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) rows.push_back(unit_row(h, r));

  auto sim = [&](int64_t a, int64_t b) {
    double s = 0;
    for (size_t c = 0; c < rows[static_cast<size_t>(a)].size(); ++c)
      s += rows[static_cast<size_t>(a)][c] * rows[static_cast<size_t>(b)][c];
    return s;
  };
  // log-sum-exp over k != i, stabilized
  double mx = -1e300;
  for (int64_t k = 0; k < n; ++k)
    if (k != i) mx = std::max(mx, sim(i, k) / tau);
  double z = 0;
  for (int64_t k = 0; k < n; ++k)
    if (k != i) z += std::exp(sim(i, k) / tau - mx);
  return -(sim(i, j) / tau - (std::log(z) + mx));
}

double batch_loss(const Tensor<float>& h, double tau) {
  if (h.rank() != 2) throw std::invalid_argument("batch_loss: h must be 2-D");
  const int64_t n = h.shape[0];
  if (n % 2 != 0)
    throw std::invalid_argument("batch_loss: odd number of embeddings");
  if (n < 4)
    throw std::invalid_argument(
        "batch_loss: need at least two sessions (B >= 2) for negatives");
  double acc = 0;
  for (int64_t k = 0; k < n / 2; ++k) {
    acc += nt_xent_pair(h, 2 * k, 2 * k + 1, tau);
    acc += nt_xent_pair(h, 2 * k + 1, 2 * k, tau);
  }
  return acc / static_cast<double>(n);
}

std::vector<int64_t> sample_session_batch(const FeatureSet& fs, int64_t B,
                                          Rng& rng) {
  if (B < 2)
    throw std::invalid_argument("sample_session_batch: B must be >= 2");

  // samples per session, fs order
  std::vector<std::vector<int64_t>> members(fs.sessions.size());
  for (int64_t i = 0; i < fs.size(); ++i)
    members[static_cast<size_t>(fs.session_index[static_cast<size_t>(i)])]
        .push_back(i);

  std::vector<int64_t> eligible;
  std::string ineligible;
  for (size_t s = 0; s < members.size(); ++s) {
    if (members[s].size() >= 2) {
      eligible.push_back(static_cast<int64_t>(s));
    } else if (!members[s].empty()) {
      if (!ineligible.empty()) ineligible += ", ";
      ineligible += fs.sessions[s];
    }
  }
  if (static_cast<int64_t>(eligible.size()) < B)
    throw std::invalid_argument(
        "sample_session_batch: need " + std::to_string(B) +
        " sessions with >= 2 samples, have " +
        std::to_string(eligible.size()) +
        (ineligible.empty() ? std::string()
                            : "; ineligible: " + ineligible));

  // partial Fisher-Yates: uniform draw of B distinct sessions
  for (int64_t k = 0; k < B; ++k) {
    const int64_t pick =
        k + static_cast<int64_t>(
                rng.index(static_cast<size_t>(eligible.size() - k)));
    std::swap(eligible[static_cast<size_t>(k)],
              eligible[static_cast<size_t>(pick)]);
  }

  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(2 * B));
  for (int64_t k = 0; k < B; ++k) {
    const auto& m = members[static_cast<size_t>(eligible[static_cast<size_t>(k)])];
    const int64_t a = static_cast<int64_t>(rng.index(m.size()));
    int64_t b = static_cast<int64_t>(rng.index(m.size() - 1));
    if (b >= a) ++b;
    out.push_back(m[static_cast<size_t>(a)]);
    out.push_back(m[static_cast<size_t>(b)]);
  }
  return out;
}

SatclTrainResult train_satcl(SatclModel& model, const FeatureSet& aug,
                             const SatclTrainConfig& cfg, RngSet& rngs) {
  SatclTrainResult res;
  auto opt = train::make_adam<float>(cfg.opt);

  // Establishes eligibility up front so an impossible dataset fails loudly.
  (void)sample_session_batch(aug, model.cfg.batch_sessions, rngs.sampling);

  int64_t eligible = 0;
  {
    std::vector<int64_t> counts(aug.sessions.size(), 0);
    for (int64_t si : aug.session_index) ++counts[static_cast<size_t>(si)];
    for (int64_t c : counts)
      if (c >= 2) ++eligible;
  }
  const int steps = cfg.steps_per_epoch > 0
                        ? cfg.steps_per_epoch
                        : std::max<int>(1, static_cast<int>(
                                              eligible / model.cfg.batch_sessions));

  auto snapshot = model.params;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double sum = 0;
    Tensor<float> last_h;
    for (int step = 0; step < steps; ++step) {
      const auto idx =
          sample_session_batch(aug, model.cfg.batch_sessions, rngs.sampling);
      auto x = gather_rows(aug, idx);

      ag::Graph<float> g;
      nn::Binder<float> b(g, model.params, true);
      std::vector<ag::Var<float>> xv;
      for (auto& t : x) xv.push_back(g.leaf(t));
      auto enc = encoder_graph(g, b, model.cfg, model.shapes, xv);
      auto loss = contrastive_loss_graph(enc.h, model.cfg.tau);
      const double v = loss.val()[0];
      if (!std::isfinite(v)) {
        model.params = snapshot;
        res.aborted = true;
        res.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step) +
                           "; parameters rolled back to last finite epoch";
        return res;
      }
      g.backward(loss);
      nn::adam_step(opt, model.params, g, b, cfg.opt.clip_norm);
      res.step_loss.push_back(v);
      sum += v;
      last_h = enc.h.val();
    }
    res.epoch_loss.push_back(sum / steps);
    res.epochs_run = epoch + 1;
    if (top_eig_share(last_h) > 0.99)
      res.collapse_warning_epochs.push_back(epoch);
    snapshot = model.params;
  }
  return res;
}

EncodedFeatures encode_features(const SatclModel& model,
                                const std::vector<Tensor<float>>& x) {
  ag::Graph<float> g;
  auto& params = const_cast<nn::ParamStore<float>&>(model.params);
  nn::Binder<float> b(g, params, false);
  std::vector<ag::Var<float>> xv;
  for (const auto& t : x) xv.push_back(g.leaf(t));
  auto enc = encoder_graph(g, b, model.cfg, model.shapes, xv);
  EncodedFeatures out;
  for (auto v : enc.backbone) out.backbone.push_back(v.val());
  out.h = enc.h.val();
  return out;
}

FeatureSet encode_featureset(const SatclModel& model, const FeatureSet& fs,
                             Tensor<float>* h_out, int64_t chunk) {
  FeatureSet out;
  out.modality_names = fs.modality_names;
  out.seconds_per_frame = fs.seconds_per_frame;
  out.hz_per_bin = fs.hz_per_bin;
  out.sessions = fs.sessions;
  out.schema = fs.schema;
  out.class_attribute = fs.class_attribute;
  out.labels = fs.labels;
  out.session_index = fs.session_index;
  out.conditions = fs.conditions;

  const int64_t n = fs.size();
  for (size_t m = 0; m < fs.per_modality.size(); ++m)
    out.per_modality.emplace_back(
        std::vector<int64_t>{n, model.cfg.conv_channels.back(),
                             model.shapes[m].t, model.shapes[m].fr},
        0.0f);
  if (h_out) *h_out = Tensor<float>({n, model.cfg.embed_dim}, 0.0f);

  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t stop = std::min(n, start + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    auto enc = encode_features(model, gather_rows(fs, idx));
    for (size_t m = 0; m < out.per_modality.size(); ++m) {
      const int64_t per = enc.backbone[m].numel() / (stop - start);
      std::copy(enc.backbone[m].data.begin(), enc.backbone[m].data.end(),
                out.per_modality[m].data.begin() +
                    static_cast<size_t>(start * per));
    }
    if (h_out)
      std::copy(enc.h.data.begin(), enc.h.data.end(),
                h_out->data.begin() +
                    static_cast<size_t>(start * model.cfg.embed_dim));
  }
  return out;
}

} // namespace sudoku::satcl
