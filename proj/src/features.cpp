#include "sudokusens/features.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "sudokusens/fft.hpp"

namespace sudoku {

void StftConfig::validate() const {
  if (!(hop_length > 0 && hop_length <= window_length))
    throw std::invalid_argument("stft: need 0 < hop <= window, got hop " +
                                std::to_string(hop_length) + " window " +
                                std::to_string(window_length));
}

std::string StftConfig::to_string() const {
  std::ostringstream os;
  os << "stft{win=" << window_length << ",hop=" << hop_length << ",fn="
     << (window == Window::hann ? "hann" : "rect") << ",repr="
     << (representation == Repr::log_magnitude ? "logmag" : "mag") << "}";
  return os.str();
}

uint64_t StftConfig::hash() const { return detail::fnv1a(to_string()); }

std::pair<int64_t, int64_t> scaled_window(const StftConfig& cfg,
                                          const std::vector<ModalitySpec>& mods,
                                          size_t modality) {
  cfg.validate();
  double max_rate = 0;
  for (const auto& m : mods) max_rate = std::max(max_rate, m.sample_rate_hz);
  const double rate = mods.at(modality).sample_rate_hz;
  const double ratio = max_rate / rate;
  const double w = static_cast<double>(cfg.window_length) / ratio;
  const double h = static_cast<double>(cfg.hop_length) / ratio;
  if (w != std::floor(w) || h != std::floor(h) || w < 1 || h < 1)
    throw std::invalid_argument(
        "stft: window/hop of " + std::to_string(cfg.window_length) + "/" +
        std::to_string(cfg.hop_length) + " do not scale integrally to " +
        mods[modality].name + " at rate ratio " + std::to_string(ratio));
  return {static_cast<int64_t>(w), static_cast<int64_t>(h)};
}

namespace {

std::vector<double> make_window(StftConfig::Window kind, int64_t n) {
  std::vector<double> w(static_cast<size_t>(n), 1.0);
  if (kind == StftConfig::Window::hann) {
    for (int64_t i = 0; i < n; ++i)
      w[static_cast<size_t>(i)] =
          0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                               static_cast<double>(n));
  }
  return w;
}

} // namespace

Spectrogram compute_stft(const Sample& sample,
                         const std::vector<ModalitySpec>& mods,
                         const StftConfig& cfg) {
  cfg.validate();
  if (sample.per_modality.size() != mods.size())
    throw std::invalid_argument("stft: sample has " +
                                std::to_string(sample.per_modality.size()) +
                                " modalities, spec has " +
                                std::to_string(mods.size()));
  Spectrogram out;
  for (size_t m = 0; m < mods.size(); ++m) {
    const auto [win, hop] = scaled_window(cfg, mods, m);
    const auto& sig = sample.per_modality[m];
    const int64_t len = static_cast<int64_t>(sig.size());
    if (len < win)
      throw std::invalid_argument(
          "stft: modality '" + mods[m].name + "' signal of " +
          std::to_string(len) + " samples is shorter than window " +
          std::to_string(win));
    const int64_t frames = 1 + (len - win) / hop;
    const int64_t fr = win / 2 + 1;
    const auto w = make_window(cfg.window, win);

    ModalitySpectrogram ms;
    ms.data = Tensor<float>({1, frames, fr});
    ms.seconds_per_frame = static_cast<double>(hop) / mods[m].sample_rate_hz;
    ms.hz_per_bin = mods[m].sample_rate_hz / static_cast<double>(win);

    std::vector<double> frame(static_cast<size_t>(win));
    for (int64_t t = 0; t < frames; ++t) {
      const int64_t start = t * hop;
      for (int64_t i = 0; i < win; ++i)
        frame[static_cast<size_t>(i)] =
            static_cast<double>(sig[static_cast<size_t>(start + i)]) *
            w[static_cast<size_t>(i)];
      auto spec = fft::real_dft_onesided(frame.data(), win);
      for (int64_t k = 0; k < fr; ++k) {
        double mag = std::abs(spec[static_cast<size_t>(k)]);
        if (cfg.representation == StftConfig::Repr::log_magnitude)
          mag = std::log1p(mag);
        ms.data.at3(0, t, k) = static_cast<float>(mag);
      }
    }
    out.per_modality.push_back(std::move(ms));
  }
  return out;
}

std::vector<Sample> conventional_augment(const Sample& sample,
                                         const AugmentConfig& cfg, Rng& rng) {
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(cfg.copies));
  for (int copy = 0; copy < cfg.copies; ++copy) {
    Sample aug;
    aug.timestamp_index = sample.timestamp_index;
    aug.per_modality.resize(sample.per_modality.size());

    const bool use_jitter = rng.index(2) == 0;
    const double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);

    for (size_t m = 0; m < sample.per_modality.size(); ++m) {
      const auto& sig = sample.per_modality[m];
      std::vector<double> buf(sig.begin(), sig.end());
      const int64_t n = static_cast<int64_t>(buf.size());

      if (use_jitter) {
        double mean = 0, ss = 0;
        for (double v : buf) mean += v;
        mean /= static_cast<double>(n);
        for (double v : buf) ss += (v - mean) * (v - mean);
        const double sigma =
            cfg.jitter_rel * std::sqrt(ss / static_cast<double>(n));
        for (auto& v : buf) v += sigma * rng.normal();
      } else {
        for (auto& v : buf) v *= s;
      }

      // frequency-domain: zero a random contiguous band of the full-signal
      // spectrum; width 0 is the identity
      const int64_t nbins = n / 2 + 1;
      const int64_t max_width = static_cast<int64_t>(
          cfg.max_band_frac * static_cast<double>(nbins));
      const int64_t width =
          max_width > 0 ? rng.index(max_width + 1) : 0;
      if (width > 0) {
        const int64_t lo = rng.index(nbins - width + 1);
        buf = fft::zero_band_filter(buf, lo, lo + width);
      }

      aug.per_modality[m].assign(buf.begin(), buf.end());
    }
    out.push_back(std::move(aug));
  }
  return out;
}

} // namespace sudoku
