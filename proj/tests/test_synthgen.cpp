#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "sudokusens/features.hpp"
#include "sudokusens/synthgen.hpp"

using namespace sudoku;

namespace {

GeneratorConfig quick_config() {
  GeneratorConfig cfg;
  cfg.session_length_s = 8.0; // keep unit tests fast
  return cfg;
}

ConditionVector cond(int cls, int env) {
  return ConditionVector{{"class" + std::to_string(cls), "v" + std::to_string(env)}};
}

// average magnitude spectrum of a cell's sessions, one modality
std::vector<double> cell_spectrum(const Dataset& ds, const ConditionVector& c,
                                  size_t modality) {
  StftConfig sc;
  sc.representation = StftConfig::Repr::magnitude;
  std::vector<double> acc;
  int64_t frames = 0;
  for (const auto& s : ds.sessions) {
    if (!(s.condition == c)) continue;
    for (const auto& smp : s.samples) {
      auto sp = compute_stft(smp, ds.modality_spec, sc);
      const auto& m = sp.per_modality[modality];
      if (acc.empty()) acc.assign(static_cast<size_t>(m.fr()), 0.0);
      for (int64_t t = 0; t < m.t(); ++t)
        for (int64_t k = 0; k < m.fr(); ++k)
          acc[static_cast<size_t>(k)] += m.data.at3(0, t, k);
      frames += m.t();
    }
  }
  REQUIRE(frames > 0);
  for (auto& v : acc) v /= static_cast<double>(frames);
  return acc;
}

int64_t dominant_bin(const std::vector<double>& spec) {
  int64_t best = 1;
  for (size_t k = 1; k < spec.size(); ++k) // skip DC
    if (spec[k] > spec[static_cast<size_t>(best)])
      best = static_cast<int64_t>(k);
  return best;
}

} // namespace

TEST_CASE("config validation") {
  GeneratorConfig cfg = quick_config();
  CHECK_NOTHROW(cfg.validate());
  GeneratorConfig bad = cfg;
  bad.n_classes = 0;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.disturbance_strength = 1.5;
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.attribute_value_counts = {};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("default layout: sessions, schema, lengths, ground truth") {
  auto [ds, gt] = generate_dataset(quick_config());
  CHECK(ds.sessions.size() == 4 * 3 * 2);
  CHECK(ds.class_attribute == "class");
  REQUIRE(ds.schema.attributes.size() == 2);
  CHECK(ds.schema.attributes[0].first == "class");
  CHECK(ds.schema.attributes[0].second.size() == 4);
  CHECK(ds.schema.attributes[1].first == "env0");
  CHECK(ds.schema.attributes[1].second.size() == 3);
  CHECK_NOTHROW(ds.validate());
  for (const auto& s : ds.sessions) {
    REQUIRE(s.samples.size() == 1);
    CHECK(s.samples[0].per_modality[0].size() == 8 * 1024);
    CHECK(s.samples[0].per_modality[1].size() == 8 * 256);
  }
  // harmonic sets pairwise distinct
  std::set<double> fundamentals;
  for (const auto& set : gt.class_harmonics) {
    REQUIRE(set.size() == 3);
    fundamentals.insert(set[0].freq_hz);
  }
  CHECK(fundamentals.size() == 4);
  // filters strictly positive over the band
  for (const auto& attr : gt.attribute_gains)
    for (const auto& bump : attr)
      for (double f = 0; f <= 128; f += 1)
        CHECK(std::exp(bump.log_gain(f)) > 0);
  CHECK(gt.session_disturbances.size() == ds.sessions.size());
}

TEST_CASE("same seed reproduces the dataset bit for bit") {
  auto [d1, g1] = generate_dataset(quick_config());
  auto [d2, g2] = generate_dataset(quick_config());
  REQUIRE(d1.sessions.size() == d2.sessions.size());
  for (size_t i = 0; i < d1.sessions.size(); ++i) {
    CHECK(d1.sessions[i].session_id == d2.sessions[i].session_id);
    CHECK(d1.sessions[i].samples[0].per_modality ==
          d2.sessions[i].samples[0].per_modality);
  }
  GeneratorConfig other = quick_config();
  other.rng_seed = 99;
  auto [d3, g3] = generate_dataset(other);
  CHECK(d1.sessions[0].samples[0].per_modality[0] !=
        d3.sessions[0].samples[0].per_modality[0]);
}

TEST_CASE("identical disturbances render identical signals") {
  GeneratorConfig cfg = quick_config();
  cfg.disturbance_strength = 0.0;
  auto [ds, gt] = generate_dataset(cfg);
  SessionDisturbance d = gt.session_disturbances[0];
  auto x1 = render_session(cfg, gt, 0, {0}, d);
  auto x2 = render_session(cfg, gt, 0, {0}, d);
  CHECK(x1 == x2);
  // a different phase changes the waveform
  d.phase += 1.0;
  auto x3 = render_session(cfg, gt, 0, {0}, d);
  CHECK(x1[0] != x3[0]);
}

TEST_CASE("disturbance trajectories differ across sessions of a cell") {
  auto [ds, gt] = generate_dataset(quick_config());
  // sessions 0 and 1 are the two repeats of the first cell
  CHECK(ds.sessions[0].condition == ds.sessions[1].condition);
  const auto& a = gt.session_disturbances[0];
  const auto& b = gt.session_disturbances[1];
  CHECK(a.am_freq_hz != b.am_freq_hz);
  CHECK(a.phase != b.phase);
}

TEST_CASE("harmonic above Nyquist raises") {
  GeneratorConfig cfg = quick_config();
  cfg.n_classes = 5; // 5th class fundamental 44 Hz -> 132 Hz >= 128
  CHECK_THROWS_WITH_AS(static_cast<void>(generate_dataset(cfg)),
                       doctest::Contains("Nyquist"), std::invalid_argument);
}

TEST_CASE("classes have distinct dominant spectral peaks in both modalities") {
  auto [ds, gt] = generate_dataset(quick_config());
  for (size_t modality = 0; modality < 2; ++modality) {
    std::set<int64_t> peaks;
    for (int cls = 0; cls < 4; ++cls) {
      auto spec = cell_spectrum(ds, cond(cls, 0), modality);
      const int64_t peak = dominant_bin(spec);
      // fundamental 12 + 8*cls Hz on the 4 Hz grid
      CHECK(peak == 3 + 2 * cls);
      peaks.insert(peak);
    }
    CHECK(peaks.size() == 4);
  }
}

TEST_CASE("attribute filters tilt the spectrum compositionally") {
  // log-spectrum(class, attr) - log-spectrum(class, attr') at the fundamental
  // approximates log-gain(attr) - log-gain(attr')
  GeneratorConfig cfg = quick_config();
  cfg.session_length_s = 16.0;
  cfg.disturbance_strength = 0.3;
  cfg.sessions_per_cell = 3;
  auto [ds, gt] = generate_dataset(cfg);
  const double f0 = gt.class_harmonics[0][0].freq_hz;
  const auto bin = static_cast<size_t>(std::llround(f0 / 4.0));
  auto s0 = cell_spectrum(ds, cond(0, 0), 0);
  auto s1 = cell_spectrum(ds, cond(0, 1), 0);
  const double measured = std::log(s0[bin]) - std::log(s1[bin]);
  const double expected = gt.attribute_gains[0][0].log_gain(f0) -
                          gt.attribute_gains[0][1].log_gain(f0);
  CHECK(measured == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("cross_cell_distance: self is tiny without disturbance") {
  GeneratorConfig cfg = quick_config();
  cfg.disturbance_strength = 0.0;
  auto [ds, gt] = generate_dataset(cfg);
  // on-bin tones leak nowhere, so phase does not move the spectra
  CHECK(cross_cell_distance(ds, cond(0, 0), cond(0, 0)) < 1e-6);
}

TEST_CASE("cross_cell_distance: symmetric, and attribute shift dominates") {
  auto [ds, gt] = generate_dataset(quick_config());
  const double self = cross_cell_distance(ds, cond(0, 0), cond(0, 0));
  const double cross = cross_cell_distance(ds, cond(0, 0), cond(0, 1));
  CHECK(cross > self);
  CHECK(cross_cell_distance(ds, cond(0, 0), cond(0, 1)) ==
        doctest::Approx(cross_cell_distance(ds, cond(0, 1), cond(0, 0))));
  ConditionVector missing{{"class0", "nope"}};
  CHECK_THROWS(static_cast<void>(cross_cell_distance(ds, cond(0, 0), missing)));
}
