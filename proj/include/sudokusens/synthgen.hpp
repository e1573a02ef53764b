#pragma once

// Deterministic synthetic benchmark: class signatures are harmonic sets,
// intrinsic attributes act as multiplicative spectral filters, and dynamic
// disturbances are per-session amplitude/speed modulation plus colored
// noise. Compositional by construction, so unseen (class x attribute) cells
// are genuinely inferable from seen ones.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sudokusens/datamodel.hpp"
#include "sudokusens/features.hpp"

namespace sudoku {

struct GeneratorConfig {
  int64_t n_classes = 4;
  // one entry per non-class attribute ("env0", "env1", ...)
  std::vector<int64_t> attribute_value_counts = {3};
  int64_t sessions_per_cell = 2;
  double session_length_s = 60.0;
  std::vector<ModalitySpec> modalities = {{"imu", 1024.0}, {"mic", 256.0}};
  double disturbance_strength = 0.5; // in [0, 1]
  int64_t harmonics_per_class = 3;
  uint64_t rng_seed = 1;

  void validate() const;

  nlohmann::json to_json() const {
    nlohmann::json mods = nlohmann::json::array();
    for (const auto& m : modalities)
      mods.push_back({{"name", m.name}, {"sample_rate_hz", m.sample_rate_hz}});
    return {{"n_classes", n_classes},
            {"attribute_value_counts", attribute_value_counts},
            {"sessions_per_cell", sessions_per_cell},
            {"session_length_s", session_length_s},
            {"modalities", mods},
            {"disturbance_strength", disturbance_strength},
            {"harmonics_per_class", harmonics_per_class},
            {"rng_seed", rng_seed}};
  }
  static GeneratorConfig from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.n_classes = j.at("n_classes").get<int64_t>();
    c.attribute_value_counts =
        j.at("attribute_value_counts").get<std::vector<int64_t>>();
    c.sessions_per_cell = j.at("sessions_per_cell").get<int64_t>();
    c.session_length_s = j.at("session_length_s").get<double>();
    c.modalities.clear();
    for (const auto& m : j.at("modalities"))
      c.modalities.push_back({m.at("name").get<std::string>(),
                              m.at("sample_rate_hz").get<double>()});
    c.disturbance_strength = j.at("disturbance_strength").get<double>();
    c.harmonics_per_class = j.at("harmonics_per_class").get<int64_t>();
    c.rng_seed = j.at("rng_seed").get<uint64_t>();
    return c;
  }
};

struct Harmonic {
  double freq_hz = 0;
  double amplitude = 0;
};

// Log-domain Gaussian bump; the value's gain at frequency f is
// exp(log_amp * exp(-(f - center)^2 / (2 width^2))), strictly positive.
struct GainBump {
  double center_hz = 0;
  double width_hz = 1;
  double log_amp = 0;

  double log_gain(double f) const;
};

// Everything that makes one session's realization unique. Rendering is a
// pure function of these values, so identical disturbances reproduce the
// identical signal.
struct SessionDisturbance {
  double phase = 0;         // shared harmonic phase offset
  double am_freq_hz = 0;    // low-frequency amplitude modulation
  double am_phase = 0;
  double speed_base = 0;    // constant tempo offset, in [-1, 1]
  double speed_freq_hz = 0; // slow tempo wobble
  double speed_phase = 0;
  double noise_rho = 0;     // AR(1) pole of the additive noise
  uint64_t noise_seed = 0;
};

struct GroundTruthFactors {
  std::vector<std::vector<Harmonic>> class_harmonics;   // [class][partial]
  std::vector<std::vector<GainBump>> attribute_gains;   // [attr][value]
  std::vector<SessionDisturbance> session_disturbances; // dataset order

  // product over attributes of the value's gain at frequency f
  double gain(const std::vector<int64_t>& value_indices, double f) const;
};

// Renders one session's raw per-modality signals. value_indices holds one
// value index per non-class attribute, in config order.
std::vector<std::vector<float>> render_session(
    const GeneratorConfig& cfg, const GroundTruthFactors& gt,
    int64_t class_idx, const std::vector<int64_t>& value_indices,
    const SessionDisturbance& d);

// One session per (class, environment combination, repeat); each session is
// a single full-length sample, to be windowed by segment_sessions. Throws
// when any class harmonic reaches Nyquist for some modality.
std::pair<Dataset, GroundTruthFactors> generate_dataset(
    const GeneratorConfig& cfg);

// Mean pairwise L2 distance between per-session average log-magnitude
// spectra of two cells, each cell keyed by its full condition. A cell
// compared against itself is split into disjoint session halves. Throws on
// empty cells or a self-comparison with fewer than two sessions.
double cross_cell_distance(const Dataset& ds, const ConditionVector& a,
                           const ConditionVector& b,
                           const StftConfig& cfg = {});

} // namespace sudoku
