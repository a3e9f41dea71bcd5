#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "nsbg/dsp/audio.hpp"
#include "nsbg/dsp/fft.hpp"
#include "nsbg/error.hpp"

namespace nsbg::dsp {

// Cosine-modulated pseudo-QMF bank built from a linear-phase Kaiser-windowed
// sinc prototype of length num_bands * taps_per_band.
struct PqmfBank {
  std::size_t num_bands = 0;
  std::size_t taps_per_band = 0;
  std::vector<double> prototype;
  // Row-major [num_bands x length]; synthesis rows include the num_bands gain.
  std::vector<double> analysis;
  std::vector<double> synthesis;
  double cutoff = 0.0;  // radians per sample
  double kaiser_beta = 0.0;
  double stopband_atten_db = 0.0;  // achieved, energy-averaged over the non-adjacent region
  double reconstruction_snr_db = 0.0;

  std::size_t length() const { return prototype.size(); }
  // Total analysis + synthesis delay in samples.
  std::size_t delay() const { return prototype.size() - 1; }
  double band_width_hz(double fs) const { return fs / (2.0 * double(num_bands)); }
  const double* analysis_row(std::size_t k) const { return analysis.data() + k * length(); }
  const double* synthesis_row(std::size_t k) const { return synthesis.data() + k * length(); }
};

// N-channel critically sampled subband signals, band-major.
struct SubbandFrameSet {
  std::size_t bands = 0;
  std::size_t length = 0;  // samples per band
  std::size_t original_length = 0;
  double band_width_hz = 0.0;
  std::vector<double> data;

  SubbandFrameSet() = default;
  SubbandFrameSet(std::size_t nb, std::size_t len, double width = 0.0)
      : bands(nb), length(len), original_length(nb * len), band_width_hz(width), data(nb * len, 0.0) {}

  double& at(std::size_t b, std::size_t n) { return data[b * length + n]; }
  double at(std::size_t b, std::size_t n) const { return data[b * length + n]; }
  double* band(std::size_t b) { return data.data() + b * length; }
  const double* band(std::size_t b) const { return data.data() + b * length; }
};

namespace pqmf_detail {

inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 200; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

inline std::vector<double> kaiser_sinc(std::size_t len, double cutoff, double beta) {
  std::vector<double> h(len);
  const double mid = (double(len) - 1.0) / 2.0;
  const double i0b = bessel_i0(beta);
  for (std::size_t i = 0; i < len; ++i) {
    const double n = double(i) - mid;
    const double sinc = std::abs(n) < 1e-12 ? cutoff / std::numbers::pi : std::sin(cutoff * n) / (std::numbers::pi * n);
    const double r = 2.0 * double(i) / (double(len) - 1.0) - 1.0;
    h[i] = sinc * bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
  }
  return h;
}

inline void modulate(PqmfBank& b) {
  const std::size_t M = b.num_bands, L = b.length();
  const double mid = (double(L) - 1.0) / 2.0;
  b.analysis.assign(M * L, 0.0);
  b.synthesis.assign(M * L, 0.0);
  for (std::size_t k = 0; k < M; ++k) {
    const double phase = (k % 2 == 0 ? 1.0 : -1.0) * std::numbers::pi / 4.0;
    const double w = (2.0 * double(k) + 1.0) * std::numbers::pi / (2.0 * double(M));
    for (std::size_t i = 0; i < L; ++i) {
      const double arg = w * (double(i) - mid);
      b.analysis[k * L + i] = 2.0 * b.prototype[i] * std::cos(arg + phase);
      b.synthesis[k * L + i] = 2.0 * double(M) * b.prototype[i] * std::cos(arg - phase);
    }
  }
}

// Expected error energy per unit-variance white-noise sample after
// analysis + synthesis, relative to the delayed input. Exact: the chain is
// M-periodically time varying, so M impulse responses characterise it.
inline double reconstruction_error(const PqmfBank& b) {
  const std::size_t M = b.num_bands, L = b.length();
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> A(b.analysis.data(), Eigen::Index(M), Eigen::Index(L));
  Eigen::Map<const Mat> S(b.synthesis.data(), Eigen::Index(M), Eigen::Index(L));
  const Mat P = A.transpose() * S;  // P(j, i): impulse seen at analysis tap j, emitted at synthesis tap i
  double total = 0.0;
  std::vector<double> out(4 * L + M);
  for (std::size_t p = 0; p < M; ++p) {
    const std::size_t n0 = L + p;
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t m = 0; M * m < n0 + L; ++m) {
      const long j = long(M * m) - long(n0);
      if (j < 0 || j >= long(L)) continue;
      for (std::size_t i = 0; i < L; ++i) out[M * m + i] += P(j, Eigen::Index(i));
    }
    out[n0 + L - 1] -= 1.0;
    for (double v : out) total += v * v;
  }
  return total / double(M);
}

// Energy-averaged prototype attenuation (dB, relative to DC) over
// [3*pi/(2M), pi]: the region that leaks into non-adjacent bands, where the
// cosine modulation provides no alias cancellation.
inline double stopband_attenuation(const std::vector<double>& h, std::size_t M) {
  const std::size_t n = 16384;
  std::vector<double> padded(n, 0.0);
  std::copy(h.begin(), h.end(), padded.begin());
  std::vector<std::complex<double>> spec(n / 2 + 1);
  Fft::forward_real(padded.data(), n, spec.data());
  const double dc = std::norm(spec[0]);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    const double w = 2.0 * std::numbers::pi * double(k) / double(n);
    if (w < 1.5 * std::numbers::pi / double(M)) continue;
    acc += std::norm(spec[k]) / dc;
    ++count;
  }
  return -10.0 * std::log10(acc / double(count));
}

inline PqmfBank build(std::size_t M, std::size_t taps, double cutoff, double beta) {
  PqmfBank b;
  b.num_bands = M;
  b.taps_per_band = taps;
  b.cutoff = cutoff;
  b.kaiser_beta = beta;
  b.prototype = kaiser_sinc(M * taps, cutoff, beta);
  modulate(b);
  return b;
}

// Golden-section search of the cutoff minimising reconstruction error.
inline PqmfBank best_cutoff(std::size_t M, std::size_t taps, double beta) {
  const double base = std::numbers::pi / (2.0 * double(M));
  double lo = 0.5 * base, hi = 2.0 * base;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  auto f = [&](double wc) { return reconstruction_error(build(M, taps, wc, beta)); };
  double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 40; ++it) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - g * (hi - lo);
      fc = f(c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + g * (hi - lo);
      fd = f(d);
    }
  }
  auto b = build(M, taps, (lo + hi) / 2.0, beta);
  b.reconstruction_snr_db = -10.0 * std::log10(reconstruction_error(b));
  return b;
}

inline PqmfBank design_uncached(std::size_t M, std::size_t taps, double atten_db) {
  PqmfBank best;
  bool found = false;
  double max_atten = -1e300;
  auto consider = [&](double beta) {
    auto b = best_cutoff(M, taps, beta);
    b.stopband_atten_db = stopband_attenuation(b.prototype, M);
    max_atten = std::max(max_atten, b.stopband_atten_db);
    if (b.stopband_atten_db < atten_db) return;
    if (!found || b.reconstruction_snr_db > best.reconstruction_snr_db) {
      best = std::move(b);
      found = true;
    }
  };
  // Coarse sweep of the Kaiser shape, then a finer pass around the winner.
  for (double beta = 1.0; beta <= 16.0 + 1e-9; beta += 0.5) consider(beta);
  if (found) {
    const double centre = best.kaiser_beta;
    for (double beta = centre - 0.375; beta <= centre + 0.375 + 1e-9; beta += 0.125)
      if (beta > 0.0 && std::abs(beta - centre) > 1e-9) consider(beta);
  }
  if (!found) {
    std::ostringstream os;
    os << "PQMF design infeasible: requested " << atten_db << " dB stopband attenuation with " << taps
       << " taps per band; best achievable is " << max_atten << " dB";
    throw UsageError(os.str());
  }
  return best;
}

}  // namespace pqmf_detail

// Designs an M-band bank. Among Kaiser shapes meeting the requested stopband
// attenuation, picks the one whose optimised cutoff gives the most accurate
// reconstruction. Results are memoised per argument tuple.
inline PqmfBank design_pqmf(std::size_t num_bands, std::size_t taps_per_band = 8, double stopband_atten_db = 100.0) {
  if (num_bands < 2) throw UsageError("PQMF bank needs at least 2 bands");
  if (taps_per_band < 4) throw UsageError("PQMF prototype needs at least 4 taps per band");
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, double>, std::shared_ptr<const PqmfBank>> cache;
  const auto key = std::make_tuple(num_bands, taps_per_band, stopband_atten_db);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return *it->second;
  }
  auto bank = std::make_shared<const PqmfBank>(pqmf_detail::design_uncached(num_bands, taps_per_band, stopband_atten_db));
  std::lock_guard lock(mu);
  cache.emplace(key, bank);
  return *bank;
}

// Causal analysis: band k sample m = sum_i h_k[i] x[M*m - i]. Input is
// right-padded with zeros to a multiple of num_bands.
inline SubbandFrameSet pqmf_analysis(const AudioBuffer& x, const PqmfBank& bank) {
  const std::size_t M = bank.num_bands, L = bank.length();
  const std::size_t len = (x.size() + M - 1) / M;
  SubbandFrameSet out(M, len, bank.band_width_hz(x.sample_rate));
  out.original_length = x.size();
  for (std::size_t k = 0; k < M; ++k) {
    const double* h = bank.analysis_row(k);
    double* dst = out.band(k);
    for (std::size_t m = 0; m < len; ++m) {
      const long n = long(M * m);
      double acc = 0.0;
      const std::size_t imax = std::min<std::size_t>(L, std::size_t(n) + 1);
      for (std::size_t i = 0; i < imax; ++i) {
        const std::size_t idx = std::size_t(n) - i;
        if (idx < x.size()) acc += h[i] * x.samples[idx];
      }
      dst[m] = acc;
    }
  }
  return out;
}

// Synthesis: y[n] = sum_k sum_m b_k[m] g_k[n - M*m], for n < M * length.
// The output lags the analysed input by bank.delay() samples.
inline AudioBuffer pqmf_synthesis(const SubbandFrameSet& bands, const PqmfBank& bank) {
  if (bands.bands != bank.num_bands)
    throw ShapeError("synthesis expects " + std::to_string(bank.num_bands) + " bands, got " + std::to_string(bands.bands));
  if (bands.data.size() != bands.bands * bands.length) throw ShapeError("subband lengths differ across channels");
  const std::size_t M = bank.num_bands, L = bank.length();
  const std::size_t n_out = M * bands.length;
  AudioBuffer y(std::vector<double>(n_out, 0.0));
  for (std::size_t k = 0; k < M; ++k) {
    const double* g = bank.synthesis_row(k);
    const double* b = bands.band(k);
    for (std::size_t m = 0; m < bands.length; ++m) {
      const double v = b[m];
      if (v == 0.0) continue;
      const std::size_t base = M * m;
      const std::size_t imax = std::min(L, n_out - base);
      for (std::size_t i = 0; i < imax; ++i) y.samples[base + i] += v * g[i];
    }
  }
  return y;
}

// Analysis followed by synthesis with the delay removed: output[n] ~ x[n].
// Bands at or above `keep_bands` are zeroed when keep_bands < num_bands.
inline AudioBuffer pqmf_roundtrip_aligned(const AudioBuffer& x, const PqmfBank& bank, std::size_t keep_bands) {
  std::vector<double> padded = pad_to_multiple(x.samples, bank.num_bands, x.size() + bank.delay());
  auto sb = pqmf_analysis(AudioBuffer(std::move(padded), x.sample_rate), bank);
  for (std::size_t k = keep_bands; k < sb.bands; ++k) std::fill(sb.band(k), sb.band(k) + sb.length, 0.0);
  auto y = pqmf_synthesis(sb, bank);
  AudioBuffer out(std::vector<double>(y.samples.begin() + long(bank.delay()),
                                      y.samples.begin() + long(bank.delay() + x.size())),
                  x.sample_rate);
  return out;
}

}  // namespace nsbg::dsp
