#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sudoku::fft {

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT (forward, unnormalized). n must be a power
// of two.
template <typename T>
void fft_pow2(std::vector<std::complex<T>>& a) {
  const int64_t n = static_cast<int64_t>(a.size());
  if (!is_pow2(n)) throw std::invalid_argument("fft_pow2: length not 2^k");
  // bit-reversal permutation
  for (int64_t i = 1, j = 0; i < n; ++i) {
    int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int64_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<T> wl(static_cast<T>(std::cos(ang)),
                             static_cast<T>(std::sin(ang)));
    for (int64_t i = 0; i < n; i += len) {
      std::complex<T> w(1);
      for (int64_t k = 0; k < len / 2; ++k) {
        std::complex<T> u = a[i + k];
        std::complex<T> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Direct O(n^2) DFT (forward, unnormalized). Works for any length; this is
// the reference path and the fallback for non-power-of-two frames.
template <typename T>
std::vector<std::complex<T>> dft_direct(const std::vector<std::complex<T>>& x) {
  const int64_t n = static_cast<int64_t>(x.size());
  std::vector<std::complex<T>> out(static_cast<size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    std::complex<double> acc(0, 0);
    for (int64_t t = 0; t < n; ++t) {
      double ang = -2.0 * M_PI * static_cast<double>(k) *
                   static_cast<double>(t) / static_cast<double>(n);
      std::complex<double> tw(std::cos(ang), std::sin(ang));
      acc += std::complex<double>(x[static_cast<size_t>(t)]) * tw;
    }
    out[static_cast<size_t>(k)] = std::complex<T>(static_cast<T>(acc.real()),
                                                  static_cast<T>(acc.imag()));
  }
  return out;
}

// Forward DFT of a real frame, one-sided spectrum (bins 0 .. n/2).
// Unnormalized convention: X_k = sum_t x_t exp(-2*pi*i*k*t/n).
template <typename T>
std::vector<std::complex<T>> real_dft_onesided(const T* x, int64_t n) {
  std::vector<std::complex<T>> buf(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t) buf[static_cast<size_t>(t)] = {x[t], T(0)};
  std::vector<std::complex<T>> full;
  if (is_pow2(n)) {
    fft_pow2(buf);
    full = std::move(buf);
  } else {
    full = dft_direct(buf);
  }
  full.resize(static_cast<size_t>(n / 2 + 1));
  return full;
}

// Zeroes DFT bins [lo, hi) (and the mirrored bins) of a real signal, then
// transforms back. Used for frequency-band masking of raw waveforms.
template <typename T>
std::vector<T> zero_band_filter(const std::vector<T>& x, int64_t lo,
                                int64_t hi) {
  const int64_t n = static_cast<int64_t>(x.size());
  if (lo >= hi) return x;
  std::vector<std::complex<double>> buf(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t)
    buf[static_cast<size_t>(t)] = {static_cast<double>(x[static_cast<size_t>(t)]), 0.0};
  const bool p2 = is_pow2(n);
  if (p2)
    fft_pow2(buf);
  else
    buf = dft_direct(buf);
  for (int64_t k = lo; k < hi && k <= n / 2; ++k) {
    if (k < 0) continue;
    buf[static_cast<size_t>(k)] = {0.0, 0.0};
    if (k != 0 && n - k < n) buf[static_cast<size_t>(n - k)] = {0.0, 0.0};
  }
  // inverse transform via conjugation trick
  for (auto& c : buf) c = std::conj(c);
  if (p2)
    fft_pow2(buf);
  else
    buf = dft_direct(buf);
  std::vector<T> out(static_cast<size_t>(n));
  for (int64_t t = 0; t < n; ++t)
    out[static_cast<size_t>(t)] =
        static_cast<T>(buf[static_cast<size_t>(t)].real() / static_cast<double>(n));
  return out;
}

} // namespace sudoku::fft
