#pragma once

// The three downstream classifier families. All consume the FeatureSet
// layout (raw spectrograms or SA-TCL backbone maps), emit logits over the
// class list, and train with cross-entropy + validation-best checkpointing.
//
//   shallow:          flatten-concat -> hidden + ReLU -> linear
//   deepsense_like:   per-modality conv stack -> per-frame projection ->
//                     modality average -> GRU over time -> linear
//   transformer_like: per-modality (f,t,fr) -> (t, fr*f) sequence ->
//                     self-attention encoder layer -> time mean-pool ->
//                     concat fusion -> linear

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sudokusens/autograd.hpp"
#include "sudokusens/nn.hpp"
#include "sudokusens/pipeline.hpp"
#include "sudokusens/rng.hpp"
#include "sudokusens/training.hpp"

namespace sudoku::cls {

enum class Family { shallow, deepsense_like, transformer_like };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::shallow: return "shallow";
    case Family::deepsense_like: return "deepsense_like";
    case Family::transformer_like: return "transformer_like";
  }
  throw std::logic_error("family_name: bad enum");
}

inline Family family_from_name(const std::string& s) {
  if (s == "shallow") return Family::shallow;
  if (s == "deepsense_like") return Family::deepsense_like;
  if (s == "transformer_like") return Family::transformer_like;
  throw std::invalid_argument("unknown classifier family: " + s);
}

struct ClassifierSpec {
  Family family = Family::shallow;
  int64_t hidden = 64;                          // penultimate dense width
  std::vector<int64_t> conv_channels = {8, 8, 8}; // deepsense modality stack
  int64_t frame_dim = 16;                       // deepsense per-frame width
  int64_t heads = 2;                            // transformer heads
  double dropout = 0.0;                         // on the penultimate layer

  void validate() const {
    if (hidden < 1) throw std::invalid_argument("classifier: hidden < 1");
    if (frame_dim < 1) throw std::invalid_argument("classifier: frame_dim < 1");
    if (heads < 1) throw std::invalid_argument("classifier: heads < 1");
    if (!(dropout >= 0.0 && dropout < 1.0))
      throw std::invalid_argument("classifier: dropout must be in [0, 1)");
    if (conv_channels.empty())
      throw std::invalid_argument("classifier: conv_channels empty");
    for (int64_t c : conv_channels)
      if (c < 1) throw std::invalid_argument("classifier: conv channel < 1");
  }

  nlohmann::json to_json() const {
    return {{"family", family_name(family)},
            {"hidden", hidden},
            {"conv_channels", conv_channels},
            {"frame_dim", frame_dim},
            {"heads", heads},
            {"dropout", dropout}};
  }
  static ClassifierSpec from_json(const nlohmann::json& j) {
    ClassifierSpec s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.hidden = j.at("hidden").get<int64_t>();
    s.conv_channels = j.at("conv_channels").get<std::vector<int64_t>>();
    s.frame_dim = j.at("frame_dim").get<int64_t>();
    s.heads = j.at("heads").get<int64_t>();
    s.dropout = j.at("dropout").get<double>();
    return s;
  }
};

struct ClassifierModel {
  ClassifierSpec spec;
  std::vector<ModalityShape> shapes;
  std::vector<std::string> classes;
  nn::ParamStore<float> params;

  int64_t n_classes() const { return static_cast<int64_t>(classes.size()); }
};

ClassifierModel build_classifier(const ClassifierSpec& spec,
                                 const std::vector<ModalityShape>& shapes,
                                 const std::vector<std::string>& classes,
                                 Rng& rng);

inline ClassifierModel build_shallow(ClassifierSpec spec,
                                     const std::vector<ModalityShape>& shapes,
                                     const std::vector<std::string>& classes,
                                     Rng& rng) {
  spec.family = Family::shallow;
  return build_classifier(spec, shapes, classes, rng);
}
inline ClassifierModel build_deepsense_like(
    ClassifierSpec spec, const std::vector<ModalityShape>& shapes,
    const std::vector<std::string>& classes, Rng& rng) {
  spec.family = Family::deepsense_like;
  return build_classifier(spec, shapes, classes, rng);
}
inline ClassifierModel build_transformer_like(
    ClassifierSpec spec, const std::vector<ModalityShape>& shapes,
    const std::vector<std::string>& classes, Rng& rng) {
  spec.family = Family::transformer_like;
  return build_classifier(spec, shapes, classes, rng);
}

// Logits over classes for a batch of graph inputs. dropout_mask, when
// non-null, multiplies the penultimate activation (inverted-dropout mask,
// already scaled by 1/(1-p)); pass nullptr for evaluation.
template <typename T>
ag::Var<T> logits_graph(ag::Graph<T>& g, nn::Binder<T>& b,
                        const ClassifierSpec& spec,
                        const std::vector<ModalityShape>& shapes,
                        int64_t n_classes, const std::vector<ag::Var<T>>& x,
                        const Tensor<T>* dropout_mask = nullptr) {
  if (x.size() != shapes.size())
    throw std::invalid_argument("classifier: modality count mismatch");
  if (x.empty()) throw std::invalid_argument("classifier: no inputs");
  const int64_t n = x[0].val().shape[0];
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto& s = x[m].val().shape;
    if (s.size() != 4 || s[0] != n || s[1] != shapes[m].f ||
        s[2] != shapes[m].t || s[3] != shapes[m].fr)
      throw std::invalid_argument("classifier: bad input shape for modality " +
                                  shapes[m].name + ": " +
                                  x[m].val().shape_str() + ", expected [" +
                                  std::to_string(n) + "," +
                                  std::to_string(shapes[m].f) + "," +
                                  std::to_string(shapes[m].t) + "," +
                                  std::to_string(shapes[m].fr) + "]");
  }

  auto penult = [&]() -> ag::Var<T> {
    switch (spec.family) {
      case Family::shallow: {
        std::vector<ag::Var<T>> flat;
        for (size_t m = 0; m < shapes.size(); ++m)
          flat.push_back(ag::reshape(
              x[m], {n, shapes[m].f * shapes[m].t * shapes[m].fr}));
        return ag::relu(nn::linear(b, ag::concat_cols(flat), "fc.hidden"));
      }
      case Family::deepsense_like: {
        const int64_t t = shapes[0].t;
        ag::Var<T> acc;
        for (size_t m = 0; m < shapes.size(); ++m) {
          auto h = x[m];
          int64_t c_last = shapes[m].f;
          for (size_t l = 0; l < spec.conv_channels.size(); ++l) {
            h = ag::relu(nn::conv2d(b, h,
                                    "ds.m" + std::to_string(m) + ".conv" +
                                        std::to_string(l),
                                    1, 1, 1, 1));
            c_last = spec.conv_channels[l];
          }
          // [n, C, t, fr] -> [n, t, C, fr] -> per-frame rows
          auto frames = ag::reshape(
              ag::permute4(h, std::array<int, 4>{0, 2, 1, 3}),
              {n * t, c_last * shapes[m].fr});
          auto proj = ag::relu(
              nn::linear(b, frames, "ds.m" + std::to_string(m) + ".frame"));
          acc = m == 0 ? proj : ag::add(acc, proj);
        }
        auto avg = ag::scale(acc, 1.0 / static_cast<double>(shapes.size()));
        auto seq = ag::reshape(avg, {n, t, spec.frame_dim});
        return nn::gru_forward(b, seq, "ds.gru", spec.hidden);
      }
      case Family::transformer_like: {
        std::vector<ag::Var<T>> pooled;
        for (size_t m = 0; m < shapes.size(); ++m) {
          // (f, t, fr) -> sequence of t tokens with fr*f features
          auto seq = ag::reshape(
              ag::permute4(x[m], std::array<int, 4>{0, 2, 1, 3}),
              {n, shapes[m].t, shapes[m].f * shapes[m].fr});
          auto enc = nn::attention_layer(
              b, seq, "tr.m" + std::to_string(m) + ".attn", spec.heads);
          pooled.push_back(ag::reduce_mean_dim1(enc));
        }
        return ag::relu(nn::linear(b, ag::concat_cols(pooled), "fc.fuse"));
      }
    }
    throw std::logic_error("classifier: bad family enum");
  }();

  if (dropout_mask) penult = ag::mul(penult, g.leaf(*dropout_mask));
  return nn::linear(b, penult, "fc.out");
}

// Softmax probabilities [N, n_classes]; pure function of the inputs.
Tensor<float> predict_proba(const ClassifierModel& model,
                            const std::vector<Tensor<float>>& x);

// Argmax class indices for a whole feature set, evaluated in chunks.
std::vector<int64_t> predict(const ClassifierModel& model, const FeatureSet& fs,
                             int64_t chunk = 64);

struct ClsTrainConfig {
  int epochs = 60;
  int64_t batch_size = 32;
  int patience = 10;
  train::OptimizerConfig opt;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"patience", patience},
            {"opt", opt.to_json()}};
  }
  static ClsTrainConfig from_json(const nlohmann::json& j) {
    ClsTrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int64_t>();
    c.patience = j.at("patience").get<int>();
    c.opt = train::OptimizerConfig::from_json(j.at("opt"));
    return c;
  }
};

struct ClsTrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_val_acc;
  int best_epoch = -1;
  double best_val_acc = 0;
  bool aborted = false;
  std::string abort_reason;
};

// Cross-entropy training; the parameters left in `model` are the
// best-on-validation checkpoint.
ClsTrainResult train_classifier(ClassifierModel& model,
                                const FeatureSet& train_set,
                                const FeatureSet& val_set,
                                const ClsTrainConfig& cfg, RngSet& rngs);

// (sample index, true class, predicted class, per-class probabilities)
void write_predictions_csv(const std::string& path, const FeatureSet& fs,
                           const Tensor<float>& probs);

} // namespace sudoku::cls
