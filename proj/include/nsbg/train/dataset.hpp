#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "nsbg/ad/nn.hpp"
#include "nsbg/codec/core_codec.hpp"
#include "nsbg/codec/pipeline.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/audio.hpp"
#include "nsbg/dsp/pqmf.hpp"
#include "nsbg/error.hpp"

namespace nsbg::train {

using ad::Tensor;

struct AudioFile {
  std::string name;
  dsp::AudioBuffer x;
  dsp::AudioBuffer x_core;  // core codec output, same length as x

  double duration() const { return double(x.size()) / double(x.sample_rate); }
};

struct SegmentRef {
  std::size_t file = 0;
  std::size_t offset = 0;
};

// Network-ready tensors for one training segment.
struct Example {
  Tensor<float> core_bands;  // [n_core, S/32]
  Tensor<float> slab;        // [1, F', S/H]
  Tensor<float> x_tgt;       // [1, S], carries the filterbank delay
};

// Files with their durations, the non-overlapping segment grid and a
// deterministic per-epoch order.
class DatasetIndex {
 public:
  DatasetIndex() = default;
  DatasetIndex(std::vector<AudioFile> files, std::size_t segment_len) : files_(std::move(files)), seg_(segment_len) {
    if (seg_ == 0) throw UsageError("segment length must be positive");
    for (std::size_t f = 0; f < files_.size(); ++f)
      for (std::size_t off = 0; off + seg_ <= files_[f].x.size(); off += seg_) segments_.push_back({f, off});
    if (segments_.empty()) throw UsageError("dataset is empty (no file holds a full segment)");
  }

  const std::vector<AudioFile>& files() const { return files_; }
  const std::vector<SegmentRef>& segments() const { return segments_; }
  std::size_t segment_length() const { return seg_; }
  std::vector<std::string>& rejected() { return rejected_; }
  const std::vector<std::string>& rejected() const { return rejected_; }

  double total_seconds() const {
    double s = 0.0;
    for (const auto& f : files_) s += f.duration();
    return s;
  }

  // Fisher-Yates over segment ids, seeded by (seed, epoch).
  std::vector<std::size_t> order(std::uint64_t seed, std::size_t epoch) const {
    std::vector<std::size_t> idx(segments_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    ad::Rng rng(seed * 0x9E3779B97F4A7C15ull + epoch + 1);
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    return idx;
  }

  std::pair<dsp::AudioBuffer, dsp::AudioBuffer> segment_audio(std::size_t i) const {
    const auto& s = segments_.at(i);
    const auto& f = files_[s.file];
    auto cut = [&](const dsp::AudioBuffer& a) {
      return dsp::AudioBuffer(std::vector<double>(a.samples.begin() + long(s.offset), a.samples.begin() + long(s.offset + seg_)),
                              a.sample_rate);
    };
    return {cut(f.x), cut(f.x_core)};
  }

 private:
  std::vector<AudioFile> files_;
  std::size_t seg_ = 0;
  std::vector<SegmentRef> segments_;
  std::vector<std::string> rejected_;
};

inline Example make_example(const dsp::AudioBuffer& x, const dsp::AudioBuffer& x_core, const SbgConfig& cfg,
                            const dsp::PqmfBank& bank) {
  Example e;
  auto in = codec::segment_inputs<float>(x, x_core, cfg, bank);
  e.core_bands = std::move(in.core_bands);
  e.slab = std::move(in.slab);
  const auto tgt = codec::build_target(x, x_core, cfg.n_core, cfg.n_hf, bank);
  e.x_tgt = Tensor<float>(ad::Shape{1, tgt.size()}, std::vector<float>(tgt.samples.begin(), tgt.samples.end()));
  return e;
}

inline AudioFile with_core(std::string name, dsp::AudioBuffer x, codec::CoreCodec& core) {
  AudioFile f;
  f.name = std::move(name);
  f.x_core = core.decode(core.encode(x));
  f.x = std::move(x);
  return f;
}

// Loads every .wav under `dir` (sorted by name). Files that are not 48 kHz
// mono are skipped and listed in rejected().
inline DatasetIndex load_directory(const std::string& dir, const SbgConfig& cfg, codec::CoreCodec& core) {
  if (!std::filesystem::is_directory(dir)) throw UsageError("dataset directory not found: " + dir);
  std::vector<std::filesystem::path> paths;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<AudioFile> files;
  std::vector<std::string> rejected;
  for (const auto& p : paths) {
    try {
      auto x = dsp::read_wav(p.string(), true);
      if (x.sample_rate != cfg.sample_rate) throw FormatError("sample rate " + std::to_string(x.sample_rate));
      files.push_back(with_core(p.filename().string(), std::move(x), core));
    } catch (const FormatError& e) {
      rejected.push_back(p.filename().string() + ": " + e.what());
    }
  }
  if (files.empty()) throw UsageError("dataset is empty: no usable 48 kHz mono WAV in " + dir);
  DatasetIndex idx(std::move(files), cfg.segment_len);
  idx.rejected() = std::move(rejected);
  return idx;
}

// Synthetic material: a few harmonic tones confined to the core range plus
// subband noise in the generation range whose per-band gains change at
// random every block. The high band is statistically independent of the
// low band, so only side information can describe it.
struct SyntheticSpec {
  std::size_t files = 6;
  double seconds = 10.0;
  std::size_t block = 4096;  // samples per gain block
  double tone_level = 0.25;
  double noise_level = 0.12;
  double gain_range_db = 30.0;
};

inline dsp::AudioBuffer synthetic_clip(const SbgConfig& cfg, const SyntheticSpec& spec, ad::Rng& rng) {
  const auto bank = dsp::design_pqmf(cfg.pqmf_bands, cfg.pqmf_taps, cfg.pqmf_atten_db);
  const std::size_t n = std::size_t(spec.seconds * cfg.sample_rate);
  const double fs = cfg.sample_rate;
  const double core_top = bank.band_width_hz(fs) * double(cfg.n_core);
  std::vector<double> y(n, 0.0);

  // Tones: note changes every 0.25-1 s; harmonics kept below the core edge.
  std::size_t pos = 0;
  double phase = 0.0;
  while (pos < n) {
    const std::size_t len = std::min(n - pos, std::size_t(rng.uniform(0.25, 1.0) * fs));
    const double f0 = 110.0 * std::pow(2.0, rng.uniform(0.0, 2.0));
    const double amp = spec.tone_level * rng.uniform(0.3, 1.0);
    for (std::size_t i = 0; i < len; ++i) {
      const double env = std::min(1.0, std::min(double(i), double(len - i)) / 480.0);
      double v = 0.0;
      for (int h = 1; h * f0 < core_top * 0.9; ++h) v += std::sin(double(h) * phase) / double(h);
      y[pos + i] = amp * env * v;
      phase += 2.0 * std::numbers::pi * f0 / fs;
    }
    phase = std::fmod(phase, 2.0 * std::numbers::pi);
    pos += len;
  }

  // High band: Gaussian subband samples with blockwise random gains.
  const std::size_t M = bank.num_bands;
  const std::size_t sub = (n + bank.delay() + M - 1) / M + 1;
  dsp::SubbandFrameSet sb(M, sub, bank.band_width_hz(fs));
  const std::size_t sub_block = std::max<std::size_t>(1, spec.block / M);
  for (std::size_t k = cfg.n_core; k < cfg.n_core + cfg.n_hf; ++k) {
    double g = 0.0;
    for (std::size_t m = 0; m < sub; ++m) {
      if (m % sub_block == 0) g = spec.noise_level * std::pow(10.0, -rng.uniform(0.0, spec.gain_range_db) / 20.0);
      sb.at(k, m) = g * rng.normal();
    }
  }
  const auto hf = dsp::pqmf_synthesis(sb, bank);
  for (std::size_t i = 0; i < n; ++i) y[i] += hf.samples[i + bank.delay()];
  for (double& v : y) v = std::clamp(v, -1.0, 1.0);
  return dsp::AudioBuffer(std::move(y), cfg.sample_rate);
}

inline DatasetIndex synthetic_dataset(const SbgConfig& cfg, codec::CoreCodec& core, std::uint64_t seed,
                                      const SyntheticSpec& spec = {}) {
  ad::Rng rng(seed);
  std::vector<AudioFile> files;
  for (std::size_t f = 0; f < spec.files; ++f) {
    auto r = rng.fork();
    files.push_back(with_core("synthetic_" + std::to_string(f), synthetic_clip(cfg, spec, r), core));
  }
  return DatasetIndex(std::move(files), cfg.segment_len);
}

}  // namespace nsbg::train
