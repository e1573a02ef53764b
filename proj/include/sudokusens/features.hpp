#pragma once

// STFT preprocessing to (feature, time, frequency) tensors and the
// conventional-augmentation baseline.
//
// DFT convention, fixed for test comparability: forward unnormalized
// one-sided transform X_k = sum_t w_t x_t exp(-2*pi*i*k*t/n), bins 0..n/2.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sudokusens/datamodel.hpp"
#include "sudokusens/rng.hpp"
#include "sudokusens/tensor.hpp"

namespace sudoku {

struct StftConfig {
  // window/hop are sample counts at the highest modality rate; slower
  // modalities use proportionally shorter windows so frame times align
  // across modalities
  int64_t window_length = 256;
  int64_t hop_length = 128;
  enum class Window { hann, rectangular };
  enum class Repr { magnitude, log_magnitude };
  Window window = Window::hann;
  Repr representation = Repr::log_magnitude;

  void validate() const;
  // stable content hash for cache keys and checkpoint headers
  uint64_t hash() const;
  std::string to_string() const;

  nlohmann::json to_json() const {
    return {{"window_length", window_length},
            {"hop_length", hop_length},
            {"window", window == Window::hann ? "hann" : "rectangular"},
            {"representation", representation == Repr::magnitude
                                   ? "magnitude"
                                   : "log_magnitude"}};
  }
  static StftConfig from_json(const nlohmann::json& j) {
    StftConfig c;
    c.window_length = j.at("window_length").get<int64_t>();
    c.hop_length = j.at("hop_length").get<int64_t>();
    const auto w = j.at("window").get<std::string>();
    if (w == "hann") c.window = Window::hann;
    else if (w == "rectangular") c.window = Window::rectangular;
    else throw std::invalid_argument("stft: unknown window " + w);
    const auto r = j.at("representation").get<std::string>();
    if (r == "magnitude") c.representation = Repr::magnitude;
    else if (r == "log_magnitude") c.representation = Repr::log_magnitude;
    else throw std::invalid_argument("stft: unknown representation " + r);
    return c;
  }
};

struct ModalitySpectrogram {
  Tensor<float> data; // (f, t, fr); f = 1 for raw single-channel modalities
  double seconds_per_frame = 0;
  double hz_per_bin = 0;
  int64_t f() const { return data.dim(0); }
  int64_t t() const { return data.dim(1); }
  int64_t fr() const { return data.dim(2); }
};

struct Spectrogram {
  std::vector<ModalitySpectrogram> per_modality;
};

// Effective window/hop for one modality under the duration-preserving
// scaling rule; throws when the rate ratio does not divide them integrally.
std::pair<int64_t, int64_t> scaled_window(const StftConfig& cfg,
                                          const std::vector<ModalitySpec>& mods,
                                          size_t modality);

Spectrogram compute_stft(const Sample& sample,
                         const std::vector<ModalitySpec>& mods,
                         const StftConfig& cfg);

struct AugmentConfig {
  int copies = 10;
  double jitter_rel = 0.05;  // sigma = jitter_rel * per-modality signal std
  double scale_lo = 0.8;
  double scale_hi = 1.2;
  double max_band_frac = 0.2; // zeroed band width <= this fraction of bins

  nlohmann::json to_json() const {
    return {{"copies", copies},
            {"jitter_rel", jitter_rel},
            {"scale_lo", scale_lo},
            {"scale_hi", scale_hi},
            {"max_band_frac", max_band_frac}};
  }
  static AugmentConfig from_json(const nlohmann::json& j) {
    AugmentConfig c;
    c.copies = j.at("copies").get<int>();
    c.jitter_rel = j.at("jitter_rel").get<double>();
    c.scale_lo = j.at("scale_lo").get<double>();
    c.scale_hi = j.at("scale_hi").get<double>();
    c.max_band_frac = j.at("max_band_frac").get<double>();
    return c;
  }
};

// Produces cfg.copies augmented variants: per copy one time-domain transform
// (jitter or amplitude scaling, equal odds) plus one frequency-domain
// transform (random contiguous band zeroing via full-signal DFT filter).
// Session metadata and timestamps are preserved by the caller keeping the
// samples in place.
std::vector<Sample> conventional_augment(const Sample& sample,
                                         const AugmentConfig& cfg, Rng& rng);

} // namespace sudoku
