#include "sudokusens/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace sudoku::cvae {

namespace {

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

Tensor<float> normal_tensor(std::vector<int64_t> shape, Rng& rng) {
  Tensor<float> t(std::move(shape), 0.0f);
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = static_cast<float>(rng.normal());
  return t;
}

} // namespace

ElboTerms elbo_loss(const CvaeModel& model, const std::vector<Tensor<float>>& x,
                    const std::vector<ConditionVector>& cs, Rng& rng) {
  const int64_t n = static_cast<int64_t>(cs.size());
  const auto onehot = onehot_batch<float>(cs, model.schema);
  const auto eps = normal_tensor({n, model.cfg.latent_dim}, rng);
  ag::Graph<float> g;
  auto& params = const_cast<nn::ParamStore<float>&>(model.params);
  nn::Binder<float> b(g, params, false);
  auto vars = elbo_graph(g, b, model.cfg, model.shapes, x, onehot, eps);
  ElboTerms t{vars.total.val()[0], vars.recon.val()[0], vars.kl.val()[0]};
  if (!std::isfinite(t.total))
    throw std::runtime_error("elbo_loss: non-finite loss (recon=" +
                             std::to_string(t.recon) +
                             ", kl=" + std::to_string(t.kl) + ")");
  return t;
}

CvaeTrainResult train_cvae(CvaeModel& model, const FeatureSet& train_set,
                           const CvaeTrainConfig& cfg, RngSet& rngs) {
  if (train_set.size() == 0)
    throw std::invalid_argument("train_cvae: empty training set");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train_cvae: batch_size < 1");

  auto opt = train::make_adam<float>(cfg.opt);
  CvaeTrainResult res;

  const int64_t n = train_set.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  // Last-good snapshot for divergence rollback, refreshed per finite epoch.
  auto snapshot = model.params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rngs.data.index(i + 1))]);

    double sum_total = 0, sum_recon = 0, sum_kl = 0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t stop = std::min(n, start + cfg.batch_size);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      auto x = gather_rows(train_set, idx);
      std::vector<ConditionVector> cs;
      for (int64_t i : idx)
        cs.push_back(train_set.conditions[static_cast<size_t>(i)]);
      const auto onehot = onehot_batch<float>(cs, model.schema);
      const auto eps = normal_tensor(
          {static_cast<int64_t>(idx.size()), model.cfg.latent_dim},
          rngs.training);

      ag::Graph<float> g;
      nn::Binder<float> b(g, model.params, true);
      auto vars =
          elbo_graph(g, b, model.cfg, model.shapes, x, onehot, eps);
      const double total = vars.total.val()[0];
      if (!std::isfinite(total)) {
        model.params = snapshot;
        res.aborted = true;
        res.abort_reason = "non-finite loss at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(batches) +
                           "; parameters rolled back to last finite epoch";
        return res;
      }
      g.backward(vars.total);
      nn::adam_step(opt, model.params, g, b, cfg.opt.clip_norm);

      sum_total += total;
      sum_recon += vars.recon.val()[0];
      sum_kl += vars.kl.val()[0];
      ++batches;
    }
    res.epoch_total.push_back(sum_total / static_cast<double>(batches));
    res.epoch_recon.push_back(sum_recon / static_cast<double>(batches));
    res.epoch_kl.push_back(sum_kl / static_cast<double>(batches));
    res.epochs_run = epoch + 1;
    snapshot = model.params;
  }
  return res;
}

FeatureSet interpolate(const CvaeModel& model, const FeatureSet& real,
                       const SudokuMatrix& matrix,
                       const InterpolationConfig& icfg, Rng& rng) {
  icfg.validate();

  FeatureSet out;
  out.modality_names = real.modality_names;
  out.seconds_per_frame = real.seconds_per_frame;
  out.hz_per_bin = real.hz_per_bin;
  out.schema = real.schema;
  out.class_attribute = real.class_attribute;

  const auto unseen = matrix.unseen_cells();
  if (unseen.empty()) return out;

  // Average real samples per seen cell, counted from the training features.
  int64_t per_cell = icfg.count;
  if (per_cell < 0) {
    const auto seen = matrix.seen_cells();
    if (seen.empty())
      throw std::invalid_argument("interpolate: matrix has no seen cells");
    std::map<std::pair<int64_t, int64_t>, int64_t> counts;
    const int class_attr = real.schema.attr_index(real.class_attribute);
    for (const auto& c : real.conditions) {
      ConditionVector env;
      for (size_t a = 0; a < c.values.size(); ++a)
        if (static_cast<int>(a) != class_attr) env.values.push_back(c.values[a]);
      const int64_t r = matrix.row_of(c.values[static_cast<size_t>(class_attr)]);
      const int64_t col = matrix.col_of(env);
      if (r >= 0 && col >= 0 && matrix.is_seen(r, col)) ++counts[{r, col}];
    }
    int64_t total = 0;
    for (const auto& [cell, k] : counts) total += k;
    const double avg =
        static_cast<double>(total) / static_cast<double>(seen.size());
    per_cell = static_cast<int64_t>(std::llround(icfg.ratio * avg));
  }
  if (per_cell <= 0) return out;

  const int class_attr = real.schema.attr_index(real.class_attribute);
  const int64_t n_total = per_cell * static_cast<int64_t>(unseen.size());
  for (size_t m = 0; m < real.per_modality.size(); ++m) {
    std::vector<int64_t> shape = real.per_modality[m].shape;
    shape[0] = n_total;
    out.per_modality.emplace_back(shape, 0.0f);
  }

  int64_t row = 0;
  for (const auto& [r, col] : unseen) {
    // Full condition for this cell: environment values with the class value
    // inserted at the class attribute's schema position.
    ConditionVector cond;
    const auto& env = matrix.environment_conditions[static_cast<size_t>(col)];
    size_t e = 0;
    for (size_t a = 0; a < real.schema.attributes.size(); ++a)
      cond.values.push_back(static_cast<int>(a) == class_attr
                                ? matrix.classes[static_cast<size_t>(r)]
                                : env.values[e++]);
    const int64_t label = real.schema.value_index(
        class_attr, matrix.classes[static_cast<size_t>(r)]);

    const std::string cell_tag =
        "synth/r" + std::to_string(r) + "c" + std::to_string(col);

    for (int64_t done = 0; done < per_cell;) {
      const int64_t chunk = std::min<int64_t>(64, per_cell - done);
      const auto z = normal_tensor({chunk, model.cfg.latent_dim}, rng);
      const std::vector<ConditionVector> cs(static_cast<size_t>(chunk), cond);
      auto recs = decode(model, z, cs);
      for (size_t m = 0; m < recs.size(); ++m) {
        const int64_t per = recs[m].numel() / chunk;
        std::copy(recs[m].data.begin(), recs[m].data.end(),
                  out.per_modality[m].data.begin() +
                      static_cast<size_t>(row * per));
      }
      for (int64_t i = 0; i < chunk; ++i) {
        const int64_t k = done + i;
        const int64_t sess_local = k / model.cfg.pseudo_session_size;
        const std::string sid = cell_tag + "/s" + std::to_string(sess_local);
        if (out.sessions.empty() || out.sessions.back() != sid)
          out.sessions.push_back(sid);
        out.labels.push_back(label);
        out.session_index.push_back(
            static_cast<int64_t>(out.sessions.size()) - 1);
        out.conditions.push_back(cond);
      }
      done += chunk;
      row += chunk;
    }
  }
  return out;
}

} // namespace sudoku::cvae
