#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "nsbg/dsp/stft.hpp"
#include "nsbg/error.hpp"

namespace nsbg::dsp {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Resolution i of the multi-scale mel loss: window 2^(4+i), hop 2^(2+i), 5*2^i bands.
struct MelScale {
  std::size_t window;
  std::size_t hop;
  std::size_t mels;

  static MelScale at(int i) {
    if (i < 1 || i > 7) throw UsageError("mel scale index must be in 1..7");
    return {std::size_t(1) << (4 + i), std::size_t(1) << (2 + i), std::size_t(5) << i};
  }
};

inline constexpr int kMelScales = 7;

// Row-major [mels x (window/2+1)] triangular HTK filters spanning 0..fs/2,
// unnormalized. A filter too narrow to contain any FFT bin gets unit weight
// on the bin nearest its centre, so every row is non-zero.
inline std::vector<double> mel_filterbank(std::size_t mels, std::size_t window, double sample_rate) {
  const std::size_t bins = window / 2 + 1;
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(mels + 2);
  for (std::size_t m = 0; m < mels + 2; ++m) edges[m] = mel_to_hz(mel_max * double(m) / double(mels + 1));
  const double bin_hz = sample_rate / double(window);
  std::vector<double> fb(mels * bins, 0.0);
  for (std::size_t m = 0; m < mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = double(k) * bin_hz;
      double w = 0.0;
      if (f > lo && f < mid) w = (f - lo) / (mid - lo);
      else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
      if (w > 0.0) {
        fb[m * bins + k] = w;
        any = true;
      }
    }
    if (!any) {
      std::size_t k = std::size_t(std::lround(mid / bin_hz));
      fb[m * bins + std::min(k, bins - 1)] = 1.0;
    }
  }
  return fb;
}

// Magnitude mel spectrogram [mels x frames] at resolution i.
inline Spectrogram mel_spectrogram(const AudioBuffer& x, int scale_index) {
  const auto sc = MelScale::at(scale_index);
  const auto spec = stft(x, sc.window, sc.hop);
  const auto fb = mel_filterbank(sc.mels, sc.window, x.sample_rate);
  Spectrogram out;
  out.bins = sc.mels;
  out.frames = spec.frames;
  out.hop = sc.hop;
  out.bin_hz = 0.0;
  out.values.assign(sc.mels * spec.frames, 0.0);
  for (std::size_t m = 0; m < sc.mels; ++m)
    for (std::size_t k = 0; k < spec.bins; ++k) {
      const double w = fb[m * spec.bins + k];
      if (w == 0.0) continue;
      for (std::size_t t = 0; t < spec.frames; ++t) out.at(m, t) += w * std::abs(spec.at(k, t));
    }
  return out;
}

}  // namespace nsbg::dsp
