#include "sudokusens/synthgen.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "sudokusens/parallel.hpp"
#include "sudokusens/rng.hpp"

namespace sudoku {

namespace {

constexpr double kNoiseScale = 0.25; // additive noise std at strength 1
constexpr double kAmDepth = 0.5;     // amplitude swing at strength 1
constexpr double kSpeedBase = 0.02;  // constant tempo offset at strength 1
constexpr double kSpeedWobble = 0.01;

// Class fundamentals sit on the default 4 Hz bin grid so on-bin tones leak
// nowhere and spectra are phase-independent under the default StftConfig.
double class_fundamental(int64_t class_idx) {
  return 12.0 + 8.0 * static_cast<double>(class_idx);
}

std::string join_indices(const std::vector<int64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += '-';
    s += std::to_string(v[i]);
  }
  return s;
}

} // namespace

void GeneratorConfig::validate() const {
  if (n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");
  if (attribute_value_counts.empty())
    throw std::invalid_argument("need at least one non-class attribute");
  for (int64_t c : attribute_value_counts)
    if (c < 1) throw std::invalid_argument("attribute value count must be >= 1");
  if (sessions_per_cell < 1)
    throw std::invalid_argument("sessions_per_cell must be >= 1");
  if (!(session_length_s > 0))
    throw std::invalid_argument("session_length_s must be positive");
  if (harmonics_per_class < 1)
    throw std::invalid_argument("harmonics_per_class must be >= 1");
  if (!(disturbance_strength >= 0 && disturbance_strength <= 1))
    throw std::invalid_argument("disturbance_strength must be in [0, 1]");
  if (modalities.empty())
    throw std::invalid_argument("need at least one modality");
  for (const auto& m : modalities)
    if (!(m.sample_rate_hz > 0))
      throw std::invalid_argument("modality sample rate must be positive");
}

double GainBump::log_gain(double f) const {
  const double z = (f - center_hz) / width_hz;
  return log_amp * std::exp(-0.5 * z * z);
}

double GroundTruthFactors::gain(const std::vector<int64_t>& value_indices,
                                double f) const {
  double lg = 0;
  for (size_t a = 0; a < attribute_gains.size(); ++a)
    lg += attribute_gains[a][static_cast<size_t>(value_indices[a])].log_gain(f);
  return std::exp(lg);
}

std::vector<std::vector<float>> render_session(
    const GeneratorConfig& cfg, const GroundTruthFactors& gt,
    int64_t class_idx, const std::vector<int64_t>& value_indices,
    const SessionDisturbance& d) {
  const double ds = cfg.disturbance_strength;
  const auto& harmonics = gt.class_harmonics[static_cast<size_t>(class_idx)];

  // per-harmonic effective amplitude after the attribute filter
  std::vector<double> amp(harmonics.size());
  for (size_t h = 0; h < harmonics.size(); ++h)
    amp[h] = harmonics[h].amplitude * gt.gain(value_indices, harmonics[h].freq_hz);

  std::vector<std::vector<float>> out(cfg.modalities.size());
  for (size_t m = 0; m < cfg.modalities.size(); ++m) {
    const double rate = cfg.modalities[m].sample_rate_hz;
    const auto n = static_cast<int64_t>(std::llround(cfg.session_length_s * rate));
    auto& x = out[m];
    x.resize(static_cast<size_t>(n));

    const double ws = 2.0 * M_PI * d.speed_freq_hz;
    for (int64_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(i) / rate;
      // closed-form integral of the instantaneous tempo
      // v(u) = 1 + ds*(kSpeedBase*speed_base + kSpeedWobble*sin(ws u + phi))
      double warped = t;
      if (ds > 0) {
        warped += ds * kSpeedBase * d.speed_base * t;
        if (d.speed_freq_hz > 0)
          warped += ds * kSpeedWobble *
                    (std::cos(d.speed_phase) - std::cos(ws * t + d.speed_phase)) /
                    ws;
      }
      const double am =
          1.0 + kAmDepth * ds * std::sin(2.0 * M_PI * d.am_freq_hz * t + d.am_phase);
      double sum = 0;
      for (size_t h = 0; h < harmonics.size(); ++h)
        sum += amp[h] *
               std::sin(2.0 * M_PI * harmonics[h].freq_hz * warped + d.phase);
      x[static_cast<size_t>(i)] = static_cast<float>(am * sum);
    }

    if (ds > 0) {
      Rng nrng(Rng::derive(d.noise_seed, cfg.modalities[m].name));
      const double rho = d.noise_rho;
      const double innov = std::sqrt(1.0 - rho * rho);
      double e = nrng.normal();
      for (int64_t i = 0; i < n; ++i) {
        x[static_cast<size_t>(i)] += static_cast<float>(ds * kNoiseScale * e);
        e = rho * e + innov * nrng.normal();
      }
    }
  }
  return out;
}

std::pair<Dataset, GroundTruthFactors> generate_dataset(
    const GeneratorConfig& cfg) {
  cfg.validate();

  GroundTruthFactors gt;
  gt.class_harmonics.resize(static_cast<size_t>(cfg.n_classes));
  for (int64_t c = 0; c < cfg.n_classes; ++c) {
    const double base = class_fundamental(c);
    auto& set = gt.class_harmonics[static_cast<size_t>(c)];
    for (int64_t h = 1; h <= cfg.harmonics_per_class; ++h) {
      const double f = base * static_cast<double>(h);
      for (const auto& mod : cfg.modalities)
        if (f >= 0.5 * mod.sample_rate_hz)
          throw std::invalid_argument(
              "class " + std::to_string(c) + " harmonic at " +
              std::to_string(f) + " Hz reaches Nyquist of modality '" +
              mod.name + "' (" + std::to_string(mod.sample_rate_hz) + " Hz)");
      set.push_back({f, 1.0 / static_cast<double>(h * h)});
    }
  }

  gt.attribute_gains.resize(cfg.attribute_value_counts.size());
  for (size_t a = 0; a < cfg.attribute_value_counts.size(); ++a) {
    const int64_t nv = cfg.attribute_value_counts[a];
    for (int64_t v = 0; v < nv; ++v) {
      GainBump b;
      b.center_hz = nv == 1 ? 62.5
                            : 15.0 + 95.0 * static_cast<double>(v) /
                                         static_cast<double>(nv - 1);
      b.width_hz = 16.0;
      b.log_amp = v % 2 == 0 ? 0.35 : -0.35;
      gt.attribute_gains[a].push_back(b);
    }
  }

  Dataset ds;
  ds.class_attribute = "class";
  {
    std::vector<std::string> class_values;
    for (int64_t c = 0; c < cfg.n_classes; ++c)
      class_values.push_back("class" + std::to_string(c));
    ds.schema.attributes.emplace_back("class", std::move(class_values));
    for (size_t a = 0; a < cfg.attribute_value_counts.size(); ++a) {
      std::vector<std::string> vals;
      for (int64_t v = 0; v < cfg.attribute_value_counts[a]; ++v)
        vals.push_back("v" + std::to_string(v));
      ds.schema.attributes.emplace_back("env" + std::to_string(a),
                                        std::move(vals));
    }
  }
  ds.modality_spec = cfg.modalities;

  // enumerate (class, env combination, repeat) in fixed order
  int64_t n_env = 1;
  for (int64_t c : cfg.attribute_value_counts) n_env *= c;
  const int64_t n_sessions = cfg.n_classes * n_env * cfg.sessions_per_cell;
  ds.sessions.resize(static_cast<size_t>(n_sessions));
  gt.session_disturbances.resize(static_cast<size_t>(n_sessions));

  struct Slot {
    int64_t class_idx;
    std::vector<int64_t> value_indices;
  };
  std::vector<Slot> slots(static_cast<size_t>(n_sessions));
  {
    int64_t idx = 0;
    for (int64_t c = 0; c < cfg.n_classes; ++c)
      for (int64_t e = 0; e < n_env; ++e) {
        std::vector<int64_t> vals(cfg.attribute_value_counts.size());
        int64_t rem = e;
        for (size_t a = cfg.attribute_value_counts.size(); a-- > 0;) {
          vals[a] = rem % cfg.attribute_value_counts[a];
          rem /= cfg.attribute_value_counts[a];
        }
        for (int64_t r = 0; r < cfg.sessions_per_cell; ++r)
          slots[static_cast<size_t>(idx++)] = {c, vals};
      }
  }

  // per-session derived seeds make generation order-independent
  apply_thread_cap();
#pragma omp parallel for schedule(dynamic)
  for (int64_t idx = 0; idx < n_sessions; ++idx) {
    const auto& slot = slots[static_cast<size_t>(idx)];
    Rng srng(Rng::derive(cfg.rng_seed, "session/" + std::to_string(idx)));
    SessionDisturbance d;
    d.phase = srng.uniform(0, 2.0 * M_PI);
    d.am_freq_hz = srng.uniform(0.1, 0.5);
    d.am_phase = srng.uniform(0, 2.0 * M_PI);
    d.speed_base = srng.uniform(-1.0, 1.0);
    d.speed_freq_hz = srng.uniform(0.05, 0.2);
    d.speed_phase = srng.uniform(0, 2.0 * M_PI);
    d.noise_rho = srng.uniform(0.5, 0.95);
    d.noise_seed = srng.u64();
    gt.session_disturbances[static_cast<size_t>(idx)] = d;

    Session s;
    const int64_t rep = idx % cfg.sessions_per_cell;
    s.session_id = "c" + std::to_string(slot.class_idx) + "_e" +
                   join_indices(slot.value_indices) + "_r" + std::to_string(rep);
    s.class_label = ds.schema.attributes[0].second[static_cast<size_t>(slot.class_idx)];
    s.condition.values.push_back(s.class_label);
    for (size_t a = 0; a < slot.value_indices.size(); ++a)
      s.condition.values.push_back(
          ds.schema.attributes[a + 1].second[static_cast<size_t>(slot.value_indices[a])]);
    Sample smp;
    smp.per_modality = render_session(cfg, gt, slot.class_idx, slot.value_indices, d);
    smp.timestamp_index = 0;
    s.samples.push_back(std::move(smp));
    ds.sessions[static_cast<size_t>(idx)] = std::move(s);
  }

  ds.validate();
  return {std::move(ds), std::move(gt)};
}

namespace {

// Session's average log-magnitude spectrum, modalities concatenated.
// Magnitudes are calibrated by the window gain (a unit-amplitude on-bin
// sine reads as 1) so the result is window-size independent.
std::vector<double> session_spectrum(const Dataset& ds, size_t session,
                                     const StftConfig& cfg) {
  StftConfig lc = cfg;
  lc.representation = StftConfig::Repr::magnitude;
  std::vector<double> acc;
  int64_t frames = 0;
  for (const auto& sample : ds.sessions[session].samples) {
    auto sp = compute_stft(sample, ds.modality_spec, lc);
    size_t off = 0;
    if (acc.empty()) {
      size_t total = 0;
      for (const auto& m : sp.per_modality)
        total += static_cast<size_t>(m.fr());
      acc.assign(total, 0.0);
    }
    for (size_t mi = 0; mi < sp.per_modality.size(); ++mi) {
      const auto& m = sp.per_modality[mi];
      // periodic Hann sums to win/2; rectangular to win
      const auto [win, hop] = scaled_window(lc, ds.modality_spec, mi);
      const double gain =
          lc.window == StftConfig::Window::hann ? 0.5 * win : 1.0 * win;
      for (int64_t t = 0; t < m.t(); ++t)
        for (int64_t k = 0; k < m.fr(); ++k)
          acc[off + static_cast<size_t>(k)] +=
              std::log1p(m.data.at3(0, t, k) * 2.0 / gain);
      off += static_cast<size_t>(m.fr());
    }
    frames += sp.per_modality[0].t();
  }
  if (frames == 0) throw std::invalid_argument("session has no frames");
  for (auto& v : acc) v /= static_cast<double>(frames);
  return acc;
}

double pair_distance(const std::vector<double>& a,
                     const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

} // namespace

double cross_cell_distance(const Dataset& ds, const ConditionVector& a,
                           const ConditionVector& b, const StftConfig& cfg) {
  std::vector<size_t> ia, ib;
  for (size_t i = 0; i < ds.sessions.size(); ++i) {
    if (ds.sessions[i].condition == a) ia.push_back(i);
    if (ds.sessions[i].condition == b) ib.push_back(i);
  }
  if (ia.empty() || ib.empty())
    throw std::invalid_argument("cross_cell_distance: empty cell");

  std::map<size_t, std::vector<double>> spectra;
  auto spec = [&](size_t i) -> const std::vector<double>& {
    auto it = spectra.find(i);
    if (it == spectra.end())
      it = spectra.emplace(i, session_spectrum(ds, i, cfg)).first;
    return it->second;
  };

  double total = 0;
  int64_t pairs = 0;
  if (a == b) {
    if (ia.size() < 2)
      throw std::invalid_argument(
          "cross_cell_distance: self-comparison needs >= 2 sessions");
    const size_t half = ia.size() / 2;
    for (size_t i = 0; i < half; ++i)
      for (size_t j = half; j < ia.size(); ++j) {
        total += pair_distance(spec(ia[i]), spec(ia[j]));
        ++pairs;
      }
  } else {
    for (size_t i : ia)
      for (size_t j : ib) {
        total += pair_distance(spec(i), spec(j));
        ++pairs;
      }
  }
  return total / static_cast<double>(pairs);
}

} // namespace sudoku
