#pragma once

// Bridges the raw datamodel to the tensor-based models: turns a segmented
// dataset into per-modality spectrogram stacks plus aligned label /
// session / condition metadata. Every model stage (CVAE, SA-TCL, the
// classifiers) consumes this one layout, so index i means the same sample
// everywhere.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sudokusens/datamodel.hpp"
#include "sudokusens/features.hpp"
#include "sudokusens/tensor.hpp"

namespace sudoku {

// Flat, model-ready view of a segmented dataset. per_modality[m] holds a
// [N, f, t, fr] stack; rows across modalities line up (sample i of modality
// 0 and sample i of modality 1 come from the same window).
struct FeatureSet {
  std::vector<std::string> modality_names;
  std::vector<Tensor<float>> per_modality; // each [N, f, t, fr]
  std::vector<double> seconds_per_frame;   // per modality
  std::vector<double> hz_per_bin;          // per modality

  std::vector<int64_t> labels;          // class index in schema order
  std::vector<int64_t> session_index;   // index into `sessions`
  std::vector<std::string> sessions;    // session ids, dataset order
  std::vector<ConditionVector> conditions; // full condition per sample

  AttributeSchema schema;
  std::string class_attribute;

  int64_t size() const {
    return per_modality.empty() ? 0 : per_modality[0].shape[0];
  }
  int64_t n_modalities() const {
    return static_cast<int64_t>(per_modality.size());
  }
};

// Static (f, t, fr) signature of one modality's samples; models size their
// layers from these.
struct ModalityShape {
  std::string name;
  int64_t f = 0, t = 0, fr = 0;
};

inline std::vector<ModalityShape> shapes_of(const FeatureSet& fs) {
  std::vector<ModalityShape> out;
  for (size_t m = 0; m < fs.per_modality.size(); ++m) {
    const auto& s = fs.per_modality[m].shape;
    out.push_back({fs.modality_names[m], s[1], s[2], s[3]});
  }
  return out;
}

inline FeatureSet build_features(const Dataset& ds, const StftConfig& cfg) {
  ds.validate();
  cfg.validate();

  FeatureSet fs;
  fs.schema = ds.schema;
  fs.class_attribute = ds.class_attribute;
  const int64_t class_attr =
      ds.schema.attr_index(ds.class_attribute);

  int64_t n = 0;
  for (const auto& s : ds.sessions) n += static_cast<int64_t>(s.samples.size());
  if (n == 0) throw std::invalid_argument("build_features: dataset has no samples");

  // Shape probe on the first sample fixes (f, t, fr) per modality; every
  // later sample must agree (segmentation guarantees equal window lengths).
  Spectrogram probe = compute_stft(ds.sessions[0].samples[0], ds.modality_spec, cfg);
  const size_t nm = ds.modality_spec.size();
  fs.per_modality.reserve(nm);
  for (size_t m = 0; m < nm; ++m) {
    const auto& sp = probe.per_modality[m];
    fs.modality_names.push_back(ds.modality_spec[m].name);
    fs.per_modality.emplace_back(
        std::vector<int64_t>{n, sp.f(), sp.t(), sp.fr()}, 0.0f);
    fs.seconds_per_frame.push_back(sp.seconds_per_frame);
    fs.hz_per_bin.push_back(sp.hz_per_bin);
  }
  fs.labels.resize(static_cast<size_t>(n));
  fs.session_index.resize(static_cast<size_t>(n));
  fs.conditions.resize(static_cast<size_t>(n));

  int64_t row = 0;
  for (size_t si = 0; si < ds.sessions.size(); ++si) {
    const auto& sess = ds.sessions[si];
    fs.sessions.push_back(sess.session_id);
    const int64_t label = ds.schema.value_index(
        class_attr, sess.condition.values[static_cast<size_t>(class_attr)]);
    for (const auto& sample : sess.samples) {
      Spectrogram sp = compute_stft(sample, ds.modality_spec, cfg);
      for (size_t m = 0; m < nm; ++m) {
        auto& dst = fs.per_modality[m];
        const auto& src = sp.per_modality[m].data;
        const int64_t per = src.numel();
        if (per != dst.numel() / n)
          throw std::invalid_argument(
              "build_features: inconsistent spectrogram shape in session " +
              sess.session_id);
        std::copy(src.data.begin(), src.data.end(),
                  dst.data.begin() + static_cast<size_t>(row * per));
      }
      fs.labels[static_cast<size_t>(row)] = label;
      fs.session_index[static_cast<size_t>(row)] = static_cast<int64_t>(si);
      fs.conditions[static_cast<size_t>(row)] = sess.condition;
      ++row;
    }
  }
  return fs;
}

// Row subset; session list and schema are carried over unchanged so
// session_index stays valid.
inline FeatureSet select(const FeatureSet& fs, const std::vector<int64_t>& idx) {
  FeatureSet out;
  out.modality_names = fs.modality_names;
  out.seconds_per_frame = fs.seconds_per_frame;
  out.hz_per_bin = fs.hz_per_bin;
  out.sessions = fs.sessions;
  out.schema = fs.schema;
  out.class_attribute = fs.class_attribute;

  const int64_t n = static_cast<int64_t>(idx.size());
  for (const auto& t : fs.per_modality) {
    const int64_t per = t.numel() / t.shape[0];
    std::vector<int64_t> shape = t.shape;
    shape[0] = n;
    Tensor<float> sub(shape, 0.0f);
    for (int64_t r = 0; r < n; ++r) {
      const int64_t src = idx[static_cast<size_t>(r)];
      if (src < 0 || src >= t.shape[0])
        throw std::out_of_range("select: sample index out of range");
      std::copy(t.data.begin() + static_cast<size_t>(src * per),
                t.data.begin() + static_cast<size_t>((src + 1) * per),
                sub.data.begin() + static_cast<size_t>(r * per));
    }
    out.per_modality.push_back(std::move(sub));
  }
  for (int64_t src : idx) {
    out.labels.push_back(fs.labels[static_cast<size_t>(src)]);
    out.session_index.push_back(fs.session_index[static_cast<size_t>(src)]);
    out.conditions.push_back(fs.conditions[static_cast<size_t>(src)]);
  }
  return out;
}

// Concatenates along the sample axis. Session id lists are merged; the
// second set's session indices are offset into the merged list.
inline FeatureSet concat(const FeatureSet& a, const FeatureSet& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  if (a.modality_names != b.modality_names)
    throw std::invalid_argument("concat: modality mismatch");

  FeatureSet out;
  out.modality_names = a.modality_names;
  out.seconds_per_frame = a.seconds_per_frame;
  out.hz_per_bin = a.hz_per_bin;
  out.schema = a.schema;
  out.class_attribute = a.class_attribute;
  out.sessions = a.sessions;
  const int64_t sess_off = static_cast<int64_t>(a.sessions.size());
  out.sessions.insert(out.sessions.end(), b.sessions.begin(), b.sessions.end());

  for (size_t m = 0; m < a.per_modality.size(); ++m) {
    const auto& ta = a.per_modality[m];
    const auto& tb = b.per_modality[m];
    std::vector<int64_t> sa(ta.shape.begin() + 1, ta.shape.end());
    std::vector<int64_t> sb(tb.shape.begin() + 1, tb.shape.end());
    if (sa != sb)
      throw std::invalid_argument("concat: feature shape mismatch for modality " +
                                  a.modality_names[m]);
    std::vector<int64_t> shape = ta.shape;
    shape[0] = ta.shape[0] + tb.shape[0];
    Tensor<float> merged(shape, 0.0f);
    std::copy(ta.data.begin(), ta.data.end(), merged.data.begin());
    std::copy(tb.data.begin(), tb.data.end(),
              merged.data.begin() + static_cast<size_t>(ta.numel()));
    out.per_modality.push_back(std::move(merged));
  }
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.session_index = a.session_index;
  for (int64_t si : b.session_index) out.session_index.push_back(si + sess_off);
  out.conditions = a.conditions;
  out.conditions.insert(out.conditions.end(), b.conditions.begin(),
                        b.conditions.end());
  return out;
}

} // namespace sudoku
