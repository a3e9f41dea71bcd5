#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <vector>

#include "nsbg/dsp/audio.hpp"
#include "nsbg/dsp/fft.hpp"
#include "nsbg/error.hpp"

namespace nsbg::dsp {

// Time-frequency grid stored frequency-major: values[bin * frames + frame].
template <class V>
struct SpectrogramOf {
  std::size_t bins = 0;
  std::size_t frames = 0;
  double bin_hz = 0.0;
  std::size_t hop = 0;
  std::vector<V> values;

  V& at(std::size_t bin, std::size_t frame) { return values[bin * frames + frame]; }
  const V& at(std::size_t bin, std::size_t frame) const { return values[bin * frames + frame]; }
};

using ComplexSpectrogram = SpectrogramOf<std::complex<double>>;
using Spectrogram = SpectrogramOf<double>;

inline std::vector<double> periodic_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

// Causal framing: frame t covers samples [(t+1)*hop - window, (t+1)*hop).
// Samples before 0 are zeros; a trailing partial hop is zero-padded on the right.
struct StftGeometry {
  std::size_t window;
  std::size_t hop;

  StftGeometry(std::size_t window_len, std::size_t hop_len) : window(window_len), hop(hop_len) {
    if (window == 0 || window % 2 != 0) throw UsageError("STFT window length must be even and positive");
    if (hop == 0 || hop > window) throw UsageError("STFT hop must satisfy 0 < hop <= window");
  }

  std::size_t bins() const { return window / 2 + 1; }
  std::size_t frames(std::size_t length) const { return (length + hop - 1) / hop; }
  long frame_start(std::size_t t) const { return long((t + 1) * hop) - long(window); }
};

inline ComplexSpectrogram stft(const AudioBuffer& x, std::size_t window_len, std::size_t hop) {
  StftGeometry g(window_len, hop);
  if (x.empty()) throw UsageError("STFT of empty signal");
  const auto win = periodic_hann(window_len);
  ComplexSpectrogram s;
  s.bins = g.bins();
  s.frames = g.frames(x.size());
  s.hop = hop;
  s.bin_hz = double(x.sample_rate) / double(window_len);
  s.values.assign(s.bins * s.frames, {});
  std::vector<double> frame(window_len);
  std::vector<std::complex<double>> spec(s.bins);
  for (std::size_t t = 0; t < s.frames; ++t) {
    const long start = g.frame_start(t);
    for (std::size_t i = 0; i < window_len; ++i) {
      const long n = start + long(i);
      frame[i] = (n >= 0 && n < long(x.size())) ? x.samples[std::size_t(n)] * win[i] : 0.0;
    }
    Fft::forward_real(frame.data(), window_len, spec.data());
    for (std::size_t k = 0; k < s.bins; ++k) s.at(k, t) = spec[k];
  }
  return s;
}

inline constexpr double kLogPowerEps = 1e-10;

// log10(|X|^2 + eps), elementwise.
inline Spectrogram log_power(const ComplexSpectrogram& spec, double eps = kLogPowerEps) {
  if (!(eps > 0.0)) throw UsageError("log_power eps must be positive");
  Spectrogram out;
  out.bins = spec.bins;
  out.frames = spec.frames;
  out.bin_hz = spec.bin_hz;
  out.hop = spec.hop;
  out.values.resize(spec.values.size());
  for (std::size_t i = 0; i < spec.values.size(); ++i) out.values[i] = std::log10(std::norm(spec.values[i]) + eps);
  return out;
}

}  // namespace nsbg::dsp
