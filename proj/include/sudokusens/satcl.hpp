#pragma once

// Session-aware temporal contrastive learning. A learnable frequency mask
// gates each modality's spectrogram, a shape-keeping conv stack widens the
// channel axis into backbone feature maps, and a projection MLP maps the
// fused features to the contrastive embedding h. Positive pairs are two
// samples from the same session; the loss is NT-Xent over cosine
// similarities.

#include <cmath>
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

namespace sudoku::satcl {

struct SatclConfig {
  int64_t embed_dim = 64;
  int64_t proj_hidden = 64;
  double tau = 0.5;
  int64_t batch_sessions = 16; // B
  std::vector<int64_t> conv_channels = {8, 8};
  bool learnable_mask = true; // frozen-mask ablation flips this

  void validate() const {
    if (embed_dim < 1) throw std::invalid_argument("satcl: embed_dim < 1");
    if (proj_hidden < 1) throw std::invalid_argument("satcl: proj_hidden < 1");
    if (!(tau > 0)) throw std::invalid_argument("satcl: tau must be > 0");
    if (batch_sessions < 2)
      throw std::invalid_argument("satcl: batch_sessions must be >= 2");
    if (conv_channels.empty())
      throw std::invalid_argument("satcl: conv_channels empty");
    for (int64_t c : conv_channels)
      if (c < 1) throw std::invalid_argument("satcl: conv channel < 1");
  }

  nlohmann::json to_json() const {
    return {{"embed_dim", embed_dim},
            {"proj_hidden", proj_hidden},
            {"tau", tau},
            {"batch_sessions", batch_sessions},
            {"conv_channels", conv_channels},
            {"learnable_mask", learnable_mask}};
  }
  static SatclConfig from_json(const nlohmann::json& j) {
    SatclConfig c;
    c.embed_dim = j.at("embed_dim").get<int64_t>();
    c.proj_hidden = j.at("proj_hidden").get<int64_t>();
    c.tau = j.at("tau").get<double>();
    c.batch_sessions = j.at("batch_sessions").get<int64_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<int64_t>>();
    c.learnable_mask = j.at("learnable_mask").get<bool>();
    return c;
  }
};

// M[k] = log(fr/(k+1)) / log(fr): 1 at DC, 0 at the top bin, descending on
// a logarithmic scale. Degenerate fr = 1 keeps the single bin.
inline std::vector<float> init_frequency_mask(int64_t fr) {
  if (fr < 1) throw std::invalid_argument("init_frequency_mask: fr < 1");
  if (fr == 1) return {1.0f};
  std::vector<float> m(static_cast<size_t>(fr));
  const double denom = std::log(static_cast<double>(fr));
  for (int64_t k = 0; k < fr; ++k)
    m[static_cast<size_t>(k)] = static_cast<float>(
        std::log(static_cast<double>(fr) / static_cast<double>(k + 1)) / denom);
  return m;
}

// Broadcast multiply along the trailing frequency axis.
inline Tensor<float> apply_mask(const Tensor<float>& x,
                                const std::vector<float>& m) {
  if (x.rank() < 1 ||
      x.shape.back() != static_cast<int64_t>(m.size()))
    throw std::invalid_argument(
        "apply_mask: mask length " + std::to_string(m.size()) +
        " does not match frequency axis of " + x.shape_str());
  Tensor<float> out = x;
  const int64_t K = x.shape.back();
  const int64_t R = x.numel() / K;
  for (int64_t r = 0; r < R; ++r)
    for (int64_t k = 0; k < K; ++k)
      out[r * K + k] *= m[static_cast<size_t>(k)];
  return out;
}

struct SatclModel {
  SatclConfig cfg;
  std::vector<ModalityShape> shapes;
  nn::ParamStore<float> params;
};

inline SatclModel build_satcl(const SatclConfig& cfg,
                              const std::vector<ModalityShape>& shapes,
                              Rng& rng) {
  cfg.validate();
  if (shapes.empty()) throw std::invalid_argument("satcl: no modalities");
  for (const auto& s : shapes)
    if (cfg.conv_channels.back() <= s.f)
      throw std::invalid_argument(
          "satcl: backbone channels must exceed input channels for modality " +
          s.name);

  SatclModel model;
  model.cfg = cfg;
  model.shapes = shapes;
  auto& p = model.params;
  int64_t flat_total = 0;
  for (size_t m = 0; m < shapes.size(); ++m) {
    auto& mask = p.create("mask.m" + std::to_string(m), {shapes[m].fr});
    const auto init = init_frequency_mask(shapes[m].fr);
    std::copy(init.begin(), init.end(), mask.data.begin());

    int64_t ci = shapes[m].f;
    for (size_t l = 0; l < cfg.conv_channels.size(); ++l) {
      nn::def_conv2d(p, "enc.m" + std::to_string(m) + ".conv" + std::to_string(l),
                     cfg.conv_channels[l], ci, 3, 3, rng);
      ci = cfg.conv_channels[l];
    }
    flat_total += cfg.conv_channels.back() * shapes[m].t * shapes[m].fr;
  }
  nn::def_linear(p, "proj.l1", flat_total, cfg.proj_hidden, rng);
  nn::def_linear(p, "proj.l2", cfg.proj_hidden, cfg.embed_dim, rng);
  return model;
}

template <typename T>
struct EncoderVars {
  std::vector<ag::Var<T>> backbone; // per modality [N, F_out, t, fr]
  ag::Var<T> h;                     // [N, embed_dim], unnormalized
};

// x[m] must be a graph var of shape [N, f, t, fr]. When the mask is frozen
// it enters as a constant leaf so optimizer steps skip it.
template <typename T>
EncoderVars<T> encoder_graph(ag::Graph<T>& g, nn::Binder<T>& b,
                             const SatclConfig& cfg,
                             const std::vector<ModalityShape>& shapes,
                             const std::vector<ag::Var<T>>& x) {
  if (x.size() != shapes.size())
    throw std::invalid_argument("encoder_graph: modality count mismatch");
  EncoderVars<T> out;
  std::vector<ag::Var<T>> flat;
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto& s = x[m].val().shape;
    if (s.size() != 4 || s[1] != shapes[m].f || s[2] != shapes[m].t ||
        s[3] != shapes[m].fr)
      throw std::invalid_argument("encoder_graph: bad input shape for " +
                                  shapes[m].name + ": " + x[m].val().shape_str());
    const std::string mask_name = "mask.m" + std::to_string(m);
    auto mask = cfg.learnable_mask
                    ? b(mask_name)
                    : g.leaf(b.store->at(mask_name), false);
    auto h = ag::scale_lastdim(x[m], mask);
    for (size_t l = 0; l < cfg.conv_channels.size(); ++l)
      h = ag::relu(nn::conv2d(b, h,
                              "enc.m" + std::to_string(m) + ".conv" +
                                  std::to_string(l),
                              1, 1, 1, 1));
    out.backbone.push_back(h);
    const int64_t n = h.val().shape[0];
    flat.push_back(ag::reshape(
        h, {n, cfg.conv_channels.back() * shapes[m].t * shapes[m].fr}));
  }
  auto fused = ag::concat_cols(flat);
  auto p1 = ag::relu(nn::linear(b, fused, "proj.l1"));
  out.h = nn::linear(b, p1, "proj.l2");
  return out;
}

// Contrastive loss over rows paired as (2k, 2k+1): cosine similarity via
// row normalization, then NT-Xent at temperature tau.
template <typename T>
ag::Var<T> contrastive_loss_graph(ag::Var<T> h, double tau) {
  return ag::ntxent_loss(ag::row_l2_normalize(h), tau);
}

// ---- eager reference math ----

// l(i, j) = -log[ exp(sim(i,j)/tau) / sum_{k != i} exp(sim(i,k)/tau) ]
double nt_xent_pair(const Tensor<float>& h, int64_t i, int64_t j, double tau);

// Mean of l(2k, 2k+1) + l(2k+1, 2k) over all pairs, divided by 2B.
double batch_loss(const Tensor<float>& h, double tau);

// 2B sample indices: B distinct sessions drawn uniformly from sessions with
// at least two samples, two distinct samples per session, pair-adjacent.
// Throws when fewer than B sessions are eligible, naming the ineligible
// ones.
std::vector<int64_t> sample_session_batch(const FeatureSet& fs, int64_t B,
                                          Rng& rng);

struct SatclTrainConfig {
  int epochs = 20;
  int steps_per_epoch = 0; // 0: eligible_sessions / B, at least 1
  train::OptimizerConfig opt;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"steps_per_epoch", steps_per_epoch},
            {"opt", opt.to_json()}};
  }
  static SatclTrainConfig from_json(const nlohmann::json& j) {
    SatclTrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
    c.opt = train::OptimizerConfig::from_json(j.at("opt"));
    return c;
  }
};

struct SatclTrainResult {
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  std::vector<int> collapse_warning_epochs; // top-1 eig > 99% of trace
  bool aborted = false;
  std::string abort_reason;
  int epochs_run = 0;
};

SatclTrainResult train_satcl(SatclModel& model, const FeatureSet& aug,
                             const SatclTrainConfig& cfg, RngSet& rngs);

struct EncodedFeatures {
  std::vector<Tensor<float>> backbone; // per modality [N, F_out, t, fr]
  Tensor<float> h;                     // [N, embed_dim]
};

// Pure forward pass on frozen params.
EncodedFeatures encode_features(const SatclModel& model,
                                const std::vector<Tensor<float>>& x);

// Whole-set encoding in chunks; the result carries backbone maps in place
// of the raw spectrograms so classifiers can consume it like any
// FeatureSet. h rows come back aligned with the input order.
FeatureSet encode_featureset(const SatclModel& model, const FeatureSet& fs,
                             Tensor<float>* h_out = nullptr,
                             int64_t chunk = 64);

} // namespace sudoku::satcl
