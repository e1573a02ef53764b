#include "sudokusens/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sudokusens/dataset_io.hpp"

namespace sudoku::cls {

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

} // namespace

ClassifierModel build_classifier(const ClassifierSpec& spec,
                                 const std::vector<ModalityShape>& shapes,
                                 const std::vector<std::string>& classes,
                                 Rng& rng) {
  spec.validate();
  if (shapes.empty()) throw std::invalid_argument("classifier: no modalities");
  if (classes.size() < 2)
    throw std::invalid_argument("classifier: need at least 2 classes");

  ClassifierModel model;
  model.spec = spec;
  model.shapes = shapes;
  model.classes = classes;
  auto& p = model.params;
  const int64_t C = model.n_classes();

  switch (spec.family) {
    case Family::shallow: {
      int64_t flat = 0;
      for (const auto& s : shapes) flat += s.f * s.t * s.fr;
      nn::def_linear(p, "fc.hidden", flat, spec.hidden, rng);
      nn::def_linear(p, "fc.out", spec.hidden, C, rng);
      break;
    }
    case Family::deepsense_like: {
      for (const auto& s : shapes)
        if (s.t != shapes[0].t)
          throw std::invalid_argument(
              "classifier: modality averaging needs equal frame counts, got " +
              std::to_string(s.t) + " vs " + std::to_string(shapes[0].t));
      for (size_t m = 0; m < shapes.size(); ++m) {
        int64_t ci = shapes[m].f;
        for (size_t l = 0; l < spec.conv_channels.size(); ++l) {
          nn::def_conv2d(p, "ds.m" + std::to_string(m) + ".conv" +
                                std::to_string(l),
                         spec.conv_channels[l], ci, 3, 3, rng);
          ci = spec.conv_channels[l];
        }
        nn::def_linear(p, "ds.m" + std::to_string(m) + ".frame",
                       ci * shapes[m].fr, spec.frame_dim, rng);
      }
      nn::def_gru_cell(p, "ds.gru", spec.frame_dim, spec.hidden, rng);
      nn::def_linear(p, "fc.out", spec.hidden, C, rng);
      break;
    }
    case Family::transformer_like: {
      int64_t fused = 0;
      for (size_t m = 0; m < shapes.size(); ++m) {
        const int64_t embed = shapes[m].f * shapes[m].fr;
        if (embed % spec.heads != 0)
          throw std::invalid_argument(
              "classifier: embedding dim " + std::to_string(embed) +
              " for modality " + shapes[m].name + " not divisible by " +
              std::to_string(spec.heads) + " heads");
        nn::def_attention_layer(p, "tr.m" + std::to_string(m) + ".attn", embed,
                                spec.hidden, rng);
        fused += embed;
      }
      nn::def_linear(p, "fc.fuse", fused, spec.hidden, rng);
      nn::def_linear(p, "fc.out", spec.hidden, C, rng);
      break;
    }
  }
  return model;
}

Tensor<float> predict_proba(const ClassifierModel& model,
                            const std::vector<Tensor<float>>& x) {
  ag::Graph<float> g;
  auto& params = const_cast<nn::ParamStore<float>&>(model.params);
  nn::Binder<float> b(g, params, false);
  std::vector<ag::Var<float>> xv;
  for (const auto& t : x) xv.push_back(g.leaf(t));
  auto logits = logits_graph(g, b, model.spec, model.shapes,
                             model.n_classes(), xv);
  return ag::softmax_lastdim(logits).val();
}

std::vector<int64_t> predict(const ClassifierModel& model, const FeatureSet& fs,
                             int64_t chunk) {
  const int64_t n = fs.size();
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t stop = std::min(n, start + chunk);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    auto probs = predict_proba(model, gather_rows(fs, idx));
    const int64_t C = probs.shape[1];
    for (int64_t r = 0; r < stop - start; ++r) {
      int64_t best = 0;
      for (int64_t c = 1; c < C; ++c)
        if (probs.at2(r, c) > probs.at2(r, best)) best = c;
      out[static_cast<size_t>(start + r)] = best;
    }
  }
  return out;
}

ClsTrainResult train_classifier(ClassifierModel& model,
                                const FeatureSet& train_set,
                                const FeatureSet& val_set,
                                const ClsTrainConfig& cfg, RngSet& rngs) {
  if (train_set.size() == 0)
    throw std::invalid_argument("train_classifier: empty training set");
  if (val_set.size() == 0)
    throw std::invalid_argument("train_classifier: empty validation set");

  auto opt = train::make_adam<float>(cfg.opt);
  ClsTrainResult res;
  train::EarlyStopper stopper;
  stopper.patience = cfg.patience;
  stopper.minimize = false;

  const int64_t n = train_set.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  auto val_accuracy = [&]() {
    const auto pred = predict(model, val_set);
    int64_t hit = 0;
    for (size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == val_set.labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(pred.size());
  };

  auto best_params = model.params;
  const double keep = 1.0 - model.spec.dropout;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(order[static_cast<size_t>(i)],
                order[static_cast<size_t>(rngs.data.index(i + 1))]);

    double sum = 0;
    int64_t batches = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t stop = std::min(n, start + cfg.batch_size);
      std::vector<int64_t> idx(order.begin() + start, order.begin() + stop);
      auto x = gather_rows(train_set, idx);
      std::vector<int64_t> labels;
      for (int64_t i : idx)
        labels.push_back(train_set.labels[static_cast<size_t>(i)]);

      Tensor<float> mask;
      const Tensor<float>* mask_ptr = nullptr;
      if (model.spec.dropout > 0.0) {
        mask = Tensor<float>({stop - start, model.spec.hidden}, 0.0f);
        for (int64_t i = 0; i < mask.numel(); ++i)
          mask[i] = rngs.training.uniform() < keep
                        ? static_cast<float>(1.0 / keep)
                        : 0.0f;
        mask_ptr = &mask;
      }

      ag::Graph<float> g;
      nn::Binder<float> b(g, model.params, true);
      std::vector<ag::Var<float>> xv;
      for (auto& t : x) xv.push_back(g.leaf(t));
      auto logits = logits_graph(g, b, model.spec, model.shapes,
                                 model.n_classes(), xv, mask_ptr);
      auto loss = ag::cross_entropy_logits(logits, labels);
      const double v = loss.val()[0];
      if (!std::isfinite(v)) {
        model.params = best_params;
        res.aborted = true;
        res.abort_reason =
            "non-finite loss at epoch " + std::to_string(epoch) +
            "; parameters rolled back to best validation checkpoint";
        return res;
      }
      g.backward(loss);
      nn::adam_step(opt, model.params, g, b, cfg.opt.clip_norm);
      sum += v;
      ++batches;
    }
    res.epoch_loss.push_back(sum / static_cast<double>(batches));

    const double acc = val_accuracy();
    res.epoch_val_acc.push_back(acc);
    if (stopper.update(epoch, acc)) best_params = model.params;
    if (stopper.should_stop()) break;
  }
  model.params = best_params;
  res.best_epoch = stopper.best_epoch;
  res.best_val_acc = stopper.best;
  return res;
}

void write_predictions_csv(const std::string& path, const FeatureSet& fs,
                           const Tensor<float>& probs) {
  if (probs.shape[0] != fs.size())
    throw std::invalid_argument("write_predictions_csv: row count mismatch");
  const int64_t C = probs.shape[1];
  std::ostringstream os;
  os << "sample,session,true_class,predicted_class";
  for (int64_t c = 0; c < C; ++c) os << ",p" << c;
  os << "\n";
  for (int64_t i = 0; i < fs.size(); ++i) {
    int64_t best = 0;
    for (int64_t c = 1; c < C; ++c)
      if (probs.at2(i, c) > probs.at2(i, best)) best = c;
    os << i << ","
       << fs.sessions[static_cast<size_t>(
              fs.session_index[static_cast<size_t>(i)])]
       << "," << fs.labels[static_cast<size_t>(i)] << "," << best;
    for (int64_t c = 0; c < C; ++c) os << "," << probs.at2(i, c);
    os << "\n";
  }
  io::atomic_write_text(path, os.str());
}

} // namespace sudoku::cls
