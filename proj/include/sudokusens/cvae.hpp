#pragma once

// Conditional VAE over multimodal spectrograms. Each modality gets its own
// conv stack that halves the frequency axis per layer; flattened features
// are fused with a condition embedding into a Gaussian posterior, and the
// decoder mirrors the path with transposed convolutions. Sampling from the
// prior with an unseen cell's condition yields synthetic samples for that
// cell.
//
// The graph builders are templated on the scalar type so the same code runs
// in double precision for finite-difference gradient checks.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sudokusens/autograd.hpp"
#include "sudokusens/datamodel.hpp"
#include "sudokusens/nn.hpp"
#include "sudokusens/pipeline.hpp"
#include "sudokusens/rng.hpp"
#include "sudokusens/training.hpp"

namespace sudoku::cvae {

struct CvaeConfig {
  int64_t latent_dim = 32;
  int64_t cond_width = 32;                    // g(c) hidden + output width
  std::vector<int64_t> conv_channels = {8, 16, 32}; // frequency-halving stack
  int64_t fusion_width = 128;
  double beta = 1.0;       // KL weight; 1.0 is the plain ELBO
  double sigma_floor = 1e-6;
  int64_t pseudo_session_size = 16;

  void validate() const {
    if (latent_dim < 1) throw std::invalid_argument("cvae: latent_dim < 1");
    if (cond_width < 1) throw std::invalid_argument("cvae: cond_width < 1");
    if (conv_channels.empty())
      throw std::invalid_argument("cvae: conv_channels empty");
    for (int64_t c : conv_channels)
      if (c < 1) throw std::invalid_argument("cvae: conv channel < 1");
    if (fusion_width < 1) throw std::invalid_argument("cvae: fusion_width < 1");
    if (beta < 0) throw std::invalid_argument("cvae: beta < 0");
    if (sigma_floor <= 0) throw std::invalid_argument("cvae: sigma_floor <= 0");
    if (pseudo_session_size < 1)
      throw std::invalid_argument("cvae: pseudo_session_size < 1");
  }

  nlohmann::json to_json() const {
    return {{"latent_dim", latent_dim},
            {"cond_width", cond_width},
            {"conv_channels", conv_channels},
            {"fusion_width", fusion_width},
            {"beta", beta},
            {"sigma_floor", sigma_floor},
            {"pseudo_session_size", pseudo_session_size}};
  }
  static CvaeConfig from_json(const nlohmann::json& j) {
    CvaeConfig c;
    c.latent_dim = j.at("latent_dim").get<int64_t>();
    c.cond_width = j.at("cond_width").get<int64_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<int64_t>>();
    c.fusion_width = j.at("fusion_width").get<int64_t>();
    c.beta = j.at("beta").get<double>();
    c.sigma_floor = j.at("sigma_floor").get<double>();
    c.pseudo_session_size = j.at("pseudo_session_size").get<int64_t>();
    return c;
  }
};

using sudoku::ModalityShape;
using sudoku::shapes_of;

namespace detail {

constexpr int64_t kKernel = 3, kPad = 1, kStride = 2;

inline int64_t conv_out(int64_t w) { return (w + 2 * kPad - kKernel) / kStride + 1; }

// Frequency-axis sizes through the encoder stack, input first.
inline std::vector<int64_t> fr_chain(int64_t fr, size_t layers) {
  std::vector<int64_t> chain{fr};
  for (size_t i = 0; i < layers; ++i) {
    if (chain.back() < 1)
      throw std::invalid_argument("cvae: frequency axis vanished in conv stack");
    chain.push_back(conv_out(chain.back()));
  }
  return chain;
}

// Output padding needed for the transposed conv to land exactly on target.
inline int64_t deconv_opad(int64_t in, int64_t target) {
  const int64_t base = (in - 1) * kStride - 2 * kPad + kKernel;
  const int64_t opad = target - base;
  if (opad < 0 || opad > 1)
    throw std::invalid_argument(
        "cvae: transposed conv cannot reach target width " +
        std::to_string(target) + " from " + std::to_string(in));
  return opad;
}

} // namespace detail

// One-hot blocks concatenated across attributes in schema order. Each block
// has exactly one 1.
inline std::vector<float> embed_condition(const ConditionVector& c,
                                          const AttributeSchema& schema) {
  validate_condition(c, schema);
  std::vector<float> out(static_cast<size_t>(schema.onehot_length()), 0.0f);
  size_t off = 0;
  for (size_t a = 0; a < schema.attributes.size(); ++a) {
    const auto& values = schema.attributes[a].second;
    const int64_t v =
        schema.value_index(static_cast<int>(a), c.values[a]);
    out[off + static_cast<size_t>(v)] = 1.0f;
    off += values.size();
  }
  return out;
}

template <typename T>
Tensor<T> onehot_batch(const std::vector<ConditionVector>& cs,
                       const AttributeSchema& schema) {
  const int64_t n = static_cast<int64_t>(cs.size());
  const int64_t w = schema.onehot_length();
  Tensor<T> out({n, w}, T(0));
  for (int64_t i = 0; i < n; ++i) {
    const auto row = embed_condition(cs[static_cast<size_t>(i)], schema);
    for (int64_t j = 0; j < w; ++j)
      out.at2(i, j) = static_cast<T>(row[static_cast<size_t>(j)]);
  }
  return out;
}

struct CvaeModel {
  CvaeConfig cfg;
  AttributeSchema schema;
  std::string class_attribute;
  std::vector<ModalityShape> shapes;
  nn::ParamStore<float> params;
};

inline CvaeModel build_cvae(const CvaeConfig& cfg, const AttributeSchema& schema,
                            const std::string& class_attribute,
                            const std::vector<ModalityShape>& shapes, Rng& rng) {
  cfg.validate();
  schema.validate();
  if (shapes.empty()) throw std::invalid_argument("cvae: no modalities");
  if (schema.attr_index(class_attribute) < 0)
    throw std::invalid_argument("cvae: unknown class attribute " + class_attribute);

  CvaeModel model;
  model.cfg = cfg;
  model.schema = schema;
  model.class_attribute = class_attribute;
  model.shapes = shapes;
  auto& p = model.params;
  const size_t layers = cfg.conv_channels.size();

  nn::def_linear(p, "cond.l1", schema.onehot_length(), cfg.cond_width, rng);
  nn::def_linear(p, "cond.l2", cfg.cond_width, cfg.cond_width, rng);

  int64_t flat_total = 0;
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto chain = detail::fr_chain(shapes[m].fr, layers);
    int64_t ci = shapes[m].f;
    for (size_t l = 0; l < layers; ++l) {
      nn::def_conv2d(p, "enc.m" + std::to_string(m) + ".conv" + std::to_string(l),
                     cfg.conv_channels[l], ci, detail::kKernel, detail::kKernel,
                     rng);
      ci = cfg.conv_channels[l];
    }
    flat_total += cfg.conv_channels.back() * shapes[m].t * chain.back();
  }
  nn::def_linear(p, "enc.fuse", flat_total + cfg.cond_width, cfg.fusion_width, rng);
  nn::def_linear(p, "enc.mu", cfg.fusion_width, cfg.latent_dim, rng);
  nn::def_linear(p, "enc.raw_sigma", cfg.fusion_width, cfg.latent_dim, rng);

  nn::def_linear(p, "dec.fuse", cfg.latent_dim + cfg.cond_width,
                 cfg.fusion_width, rng);
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto chain = detail::fr_chain(shapes[m].fr, layers);
    nn::def_linear(p, "dec.m" + std::to_string(m) + ".seed", cfg.fusion_width,
                   cfg.conv_channels.back() * shapes[m].t * chain.back(), rng);
    for (size_t l = layers; l-- > 0;) {
      const int64_t co = l == 0 ? shapes[m].f : cfg.conv_channels[l - 1];
      nn::def_conv2d_transpose(
          p, "dec.m" + std::to_string(m) + ".deconv" + std::to_string(l),
          cfg.conv_channels[l], co, detail::kKernel, detail::kKernel, rng);
    }
  }
  return model;
}

// ---- graph builders ----

template <typename T>
ag::Var<T> cond_mlp(ag::Graph<T>& g, nn::Binder<T>& b, ag::Var<T> onehot) {
  auto h = ag::relu(nn::linear(b, onehot, "cond.l1"));
  return nn::linear(b, h, "cond.l2");
}

template <typename T>
struct PosteriorVars {
  ag::Var<T> mu, sigma;
};

// x[m] is a leaf of shape [N, f, t, fr]; cond is the g(c) output [N, W].
template <typename T>
PosteriorVars<T> encode_graph(ag::Graph<T>& g, nn::Binder<T>& b,
                              const CvaeConfig& cfg,
                              const std::vector<ModalityShape>& shapes,
                              const std::vector<ag::Var<T>>& x,
                              ag::Var<T> cond) {
  const size_t layers = cfg.conv_channels.size();
  std::vector<ag::Var<T>> flat;
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto chain = detail::fr_chain(shapes[m].fr, layers);
    auto h = x[m];
    for (size_t l = 0; l < layers; ++l)
      h = ag::relu(nn::conv2d(b, h,
                              "enc.m" + std::to_string(m) + ".conv" +
                                  std::to_string(l),
                              1, detail::kStride, detail::kPad, detail::kPad));
    const int64_t n = h.val().shape[0];
    flat.push_back(ag::reshape(
        h, {n, cfg.conv_channels.back() * shapes[m].t * chain.back()}));
  }
  flat.push_back(cond);
  auto fused = ag::relu(nn::linear(b, ag::concat_cols(flat), "enc.fuse"));
  auto mu = nn::linear(b, fused, "enc.mu");
  auto raw = nn::linear(b, fused, "enc.raw_sigma");
  auto sigma = ag::clamp_min(ag::exp(raw), cfg.sigma_floor);
  return {mu, sigma};
}

// z [N, latent] -> per-modality reconstructions with encoder input shapes.
template <typename T>
std::vector<ag::Var<T>> decode_graph(ag::Graph<T>& g, nn::Binder<T>& b,
                                     const CvaeConfig& cfg,
                                     const std::vector<ModalityShape>& shapes,
                                     ag::Var<T> z, ag::Var<T> cond) {
  const size_t layers = cfg.conv_channels.size();
  auto fused =
      ag::relu(nn::linear(b, ag::concat_cols<T>({z, cond}), "dec.fuse"));
  const int64_t n = fused.val().shape[0];
  std::vector<ag::Var<T>> out;
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto chain = detail::fr_chain(shapes[m].fr, layers);
    auto h = ag::relu(
        nn::linear(b, fused, "dec.m" + std::to_string(m) + ".seed"));
    h = ag::reshape(h, {n, cfg.conv_channels.back(), shapes[m].t, chain.back()});
    for (size_t l = layers; l-- > 0;) {
      const int64_t target = chain[l];
      const int64_t opad = detail::deconv_opad(chain[l + 1], target);
      h = nn::conv2d_transpose(b, h,
                               "dec.m" + std::to_string(m) + ".deconv" +
                                   std::to_string(l),
                               1, detail::kStride, detail::kPad, detail::kPad,
                               0, opad);
      if (l > 0) h = ag::relu(h);
    }
    out.push_back(h);
  }
  return out;
}

template <typename T>
struct ElboVars {
  ag::Var<T> total, recon, kl;
  PosteriorVars<T> posterior;
};

// eps is the frozen reparameterization noise [N, latent]; freezing it keeps
// the loss a deterministic function of the parameters (gradient checks,
// reproducibility).
template <typename T>
ElboVars<T> elbo_graph(ag::Graph<T>& g, nn::Binder<T>& b, const CvaeConfig& cfg,
                       const std::vector<ModalityShape>& shapes,
                       const std::vector<Tensor<T>>& x,
                       const Tensor<T>& cond_onehot, const Tensor<T>& eps) {
  if (x.size() != shapes.size())
    throw std::invalid_argument("elbo_graph: modality count mismatch");
  const int64_t n = cond_onehot.shape[0];
  int64_t total_elems = 0;
  std::vector<ag::Var<T>> xv;
  for (size_t m = 0; m < shapes.size(); ++m) {
    const auto& s = x[m].shape;
    if (s.size() != 4 || s[0] != n || s[1] != shapes[m].f ||
        s[2] != shapes[m].t || s[3] != shapes[m].fr)
      throw std::invalid_argument("elbo_graph: bad input shape for modality " +
                                  shapes[m].name + ": " + x[m].shape_str());
    total_elems += x[m].numel();
    xv.push_back(g.leaf(x[m]));
  }
  auto cond = cond_mlp(g, b, g.leaf(cond_onehot));
  auto post = encode_graph(g, b, cfg, shapes, xv, cond);

  auto z = ag::add(post.mu, ag::mul(post.sigma, g.leaf(eps)));
  auto recs = decode_graph(g, b, cfg, shapes, z, cond);

  ag::Var<T> sq_sum;
  for (size_t m = 0; m < shapes.size(); ++m) {
    auto d = ag::reduce_sum_all(ag::square(ag::sub(recs[m], xv[m])));
    sq_sum = m == 0 ? d : ag::add(sq_sum, d);
  }
  auto recon = ag::scale(sq_sum, 1.0 / static_cast<double>(total_elems));

  // 0.5 * sum(mu^2 + sigma^2 - 1 - ln sigma^2), averaged over the batch
  auto kl_elem = ag::add(ag::add(ag::square(post.mu), ag::square(post.sigma)),
                         ag::add_scalar(ag::scale(ag::log(post.sigma), -2.0),
                                        -1.0));
  auto kl = ag::scale(ag::reduce_sum_all(kl_elem), 0.5 / static_cast<double>(n));

  auto total = ag::add(recon, ag::scale(kl, cfg.beta));
  return {total, recon, kl, post};
}

// ---- eager wrappers over frozen params ----

struct GaussianPosterior {
  Tensor<float> mu, sigma; // [N, latent]
};

inline GaussianPosterior encode(const CvaeModel& model,
                                const std::vector<Tensor<float>>& x,
                                const std::vector<ConditionVector>& cs) {
  ag::Graph<float> g;
  auto& params = const_cast<nn::ParamStore<float>&>(model.params);
  nn::Binder<float> b(g, params, false);
  const auto onehot = onehot_batch<float>(cs, model.schema);
  if (!x.empty() && x[0].shape[0] != onehot.shape[0])
    throw std::invalid_argument("encode: batch size mismatch");
  std::vector<ag::Var<float>> xv;
  for (size_t m = 0; m < x.size(); ++m) {
    const auto& s = x[m].shape;
    if (s.size() != 4 || s[1] != model.shapes[m].f ||
        s[2] != model.shapes[m].t || s[3] != model.shapes[m].fr)
      throw std::invalid_argument("encode: bad input shape for modality " +
                                  model.shapes[m].name + ": " +
                                  x[m].shape_str());
    xv.push_back(g.leaf(x[m]));
  }
  if (x.size() != model.shapes.size())
    throw std::invalid_argument("encode: modality count mismatch");
  auto cond = cond_mlp(g, b, g.leaf(onehot));
  auto post = encode_graph(g, b, model.cfg, model.shapes, xv, cond);
  return {post.mu.val(), post.sigma.val()};
}

inline Tensor<float> reparameterize(const GaussianPosterior& post, Rng& rng) {
  Tensor<float> z(post.mu.shape, 0.0f);
  for (int64_t i = 0; i < z.numel(); ++i)
    z[i] = post.mu[i] +
           post.sigma[i] * static_cast<float>(rng.normal());
  return z;
}

inline std::vector<Tensor<float>> decode(const CvaeModel& model,
                                         const Tensor<float>& z,
                                         const std::vector<ConditionVector>& cs) {
  if (z.rank() != 2 || z.shape[1] != model.cfg.latent_dim)
    throw std::invalid_argument("decode: z must be [N, latent_dim]");
  ag::Graph<float> g;
  auto& params = const_cast<nn::ParamStore<float>&>(model.params);
  nn::Binder<float> b(g, params, false);
  auto cond = cond_mlp(g, b, g.leaf(onehot_batch<float>(cs, model.schema)));
  auto recs = decode_graph(g, b, model.cfg, model.shapes, g.leaf(z), cond);
  std::vector<Tensor<float>> out;
  for (auto v : recs) out.push_back(v.val());
  return out;
}

struct ElboTerms {
  double total = 0, recon = 0, kl = 0;
};

// Evaluation-only ELBO with noise drawn from rng.
ElboTerms elbo_loss(const CvaeModel& model, const std::vector<Tensor<float>>& x,
                    const std::vector<ConditionVector>& cs, Rng& rng);

struct CvaeTrainConfig {
  int epochs = 30;
  int64_t batch_size = 32;
  train::OptimizerConfig opt;

  nlohmann::json to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"opt", opt.to_json()}};
  }
  static CvaeTrainConfig from_json(const nlohmann::json& j) {
    CvaeTrainConfig c;
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int64_t>();
    c.opt = train::OptimizerConfig::from_json(j.at("opt"));
    return c;
  }
};

struct CvaeTrainResult {
  std::vector<double> epoch_total, epoch_recon, epoch_kl;
  bool aborted = false;   // NaN divergence; params rolled back to last good
  std::string abort_reason;
  int epochs_run = 0;
};

CvaeTrainResult train_cvae(CvaeModel& model, const FeatureSet& train_set,
                           const CvaeTrainConfig& cfg, RngSet& rngs);

struct InterpolationConfig {
  double ratio = 1.0;  // synthetic-per-cell / average-real-per-seen-cell
  int64_t count = -1;  // exact per-cell count; overrides ratio when >= 0

  void validate() const {
    if (count < 0 && ratio < 0)
      throw std::invalid_argument("interpolate: ratio < 0");
  }

  nlohmann::json to_json() const {
    return {{"ratio", ratio}, {"count", count}};
  }
  static InterpolationConfig from_json(const nlohmann::json& j) {
    InterpolationConfig c;
    c.ratio = j.at("ratio").get<double>();
    c.count = j.at("count").get<int64_t>();
    return c;
  }
};

// Draws fresh z ~ N(0, I) per sample and decodes with each unseen cell's
// condition. Returns a FeatureSet whose sessions are pseudo-sessions of
// cfg.pseudo_session_size; empty when there are no unseen cells or the
// per-cell count works out to zero.
FeatureSet interpolate(const CvaeModel& model, const FeatureSet& real,
                       const SudokuMatrix& matrix,
                       const InterpolationConfig& icfg, Rng& rng);

} // namespace sudoku::cvae
