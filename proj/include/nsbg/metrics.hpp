#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nsbg/config.hpp"
#include "nsbg/dsp/audio.hpp"
#include "nsbg/dsp/pqmf.hpp"
#include "nsbg/dsp/stft.hpp"
#include "nsbg/error.hpp"
#include "nsbg/model/encoder.hpp"

namespace nsbg::metrics {

inline constexpr double kSnrCapDb = 120.0;
inline constexpr std::size_t kLsdHop = 512;

struct BitrateReport {
  double measured = 0.0;
  double formula = 0.0;
};

struct MetricReport {
  double lsd = 0.0;               // dB
  std::vector<double> band_snr;   // dB, capped
  std::optional<BitrateReport> side_info_bps;
};

// Test signal advanced by `delay` samples; after alignment the lengths must agree.
inline dsp::AudioBuffer align(const dsp::AudioBuffer& ref, const dsp::AudioBuffer& test, std::size_t delay) {
  if (ref.sample_rate != test.sample_rate) throw FormatError("reference and test sample rates differ");
  if (test.size() < delay || test.size() - delay != ref.size())
    throw FormatError("length mismatch: reference " + std::to_string(ref.size()) + ", test " + std::to_string(test.size()) +
                      " with delay " + std::to_string(delay));
  return dsp::AudioBuffer(std::vector<double>(test.samples.begin() + long(delay), test.samples.end()), test.sample_rate);
}

// Mean over frames of the RMS (in dB) of the log-power difference over the
// generation-range bins.
inline double lsd(const dsp::AudioBuffer& ref, const dsp::AudioBuffer& test, const SbgConfig& cfg) {
  if (ref.size() != test.size()) throw FormatError("lsd length mismatch");
  const auto a = model::select_hf_bins(dsp::log_power(dsp::stft(ref, cfg.window, kLsdHop)), cfg);
  const auto b = model::select_hf_bins(dsp::log_power(dsp::stft(test, cfg.window, kLsdHop)), cfg);
  double total = 0.0;
  for (std::size_t t = 0; t < a.frames; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < a.bins; ++k) {
      const double d = 10.0 * (a.at(k, t) - b.at(k, t));
      acc += d * d;
    }
    total += std::sqrt(acc / double(a.bins));
  }
  return total / double(a.frames);
}

inline double snr_db(double signal, double error) {
  if (error <= 0.0) return kSnrCapDb;
  if (signal <= 0.0) return -kSnrCapDb;
  return std::min(kSnrCapDb, 10.0 * std::log10(signal / error));
}

// 10 log10(E_ref / E_(ref - test)) per PQMF band.
inline std::vector<double> band_snr(const dsp::AudioBuffer& ref, const dsp::AudioBuffer& test, const dsp::PqmfBank& bank) {
  if (ref.size() != test.size()) throw FormatError("band_snr length mismatch");
  const auto r = dsp::pqmf_analysis(ref, bank);
  const auto t = dsp::pqmf_analysis(test, bank);
  std::vector<double> out(bank.num_bands);
  for (std::size_t k = 0; k < bank.num_bands; ++k) {
    double es = 0.0, ee = 0.0;
    for (std::size_t m = 0; m < r.length; ++m) {
      const double v = r.at(k, m);
      const double e = v - t.at(k, m);
      es += v * v;
      ee += e * e;
    }
    out[k] = snr_db(es, ee);
  }
  return out;
}

inline MetricReport evaluate(const dsp::AudioBuffer& ref, const dsp::AudioBuffer& test, const SbgConfig& cfg,
                             std::size_t delay = 0) {
  dsp::validate(ref);
  dsp::validate(test);
  const auto aligned = align(ref, test, delay);
  const auto bank = dsp::design_pqmf(cfg.pqmf_bands, cfg.pqmf_taps, cfg.pqmf_atten_db);
  MetricReport rep;
  rep.lsd = lsd(ref, aligned, cfg);
  rep.band_snr = band_snr(ref, aligned, bank);
  return rep;
}

}  // namespace nsbg::metrics
