#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nsbg/ad/tensor.hpp"
#include "nsbg/codec/bitstream.hpp"
#include "nsbg/codec/core_codec.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/pqmf.hpp"
#include "nsbg/dsp/stft.hpp"
#include "nsbg/model/encoder.hpp"
#include "nsbg/model/sbg.hpp"

namespace nsbg::codec {

using ad::Shape;
using ad::Tensor;

// Rows [first, first + count) of an analysed subband set as a tensor.
template <class T>
Tensor<T> band_rows(const dsp::SubbandFrameSet& sb, std::size_t first, std::size_t count) {
  if (first + count > sb.bands) throw ShapeError("band range exceeds the subband set");
  return Tensor<T>(Shape{count, sb.length},
                   std::vector<T>(sb.data.begin() + long(first * sb.length), sb.data.begin() + long((first + count) * sb.length)));
}

// Length the codec works at: a multiple of the hop with room for the filterbank delay.
inline std::size_t padded_length(std::size_t len, const SbgConfig& cfg, const dsp::PqmfBank& bank) {
  const std::size_t need = len + bank.delay();
  return (need + cfg.hop - 1) / cfg.hop * cfg.hop;
}

inline dsp::AudioBuffer pad_to(const dsp::AudioBuffer& x, std::size_t n) {
  if (x.size() > n) throw ShapeError("signal longer than padded length");
  std::vector<double> s(n, 0.0);
  std::copy(x.samples.begin(), x.samples.end(), s.begin());
  return dsp::AudioBuffer(std::move(s), x.sample_rate);
}

// PQMF synthesis of (core bands 0..n_core-1 from x_core, bands
// n_core..n_core+n_hf-1 from x, zeros above). Output keeps the raw
// filterbank delay, matching the generator's output.
inline dsp::AudioBuffer build_target(const dsp::AudioBuffer& x, const dsp::AudioBuffer& x_core, std::size_t n_core,
                                     std::size_t n_hf, const dsp::PqmfBank& bank) {
  if (x.size() != x_core.size())
    throw ShapeError("build_target length mismatch: " + std::to_string(x.size()) + " vs " + std::to_string(x_core.size()));
  if (n_core + n_hf > bank.num_bands) throw UsageError("band split exceeds the filterbank");
  const auto a = dsp::pqmf_analysis(x, bank);
  const auto c = dsp::pqmf_analysis(x_core, bank);
  dsp::SubbandFrameSet mix(bank.num_bands, a.length, a.band_width_hz);
  for (std::size_t k = 0; k < n_core; ++k) std::copy(c.band(k), c.band(k) + c.length, mix.band(k));
  for (std::size_t k = n_core; k < n_core + n_hf; ++k) std::copy(a.band(k), a.band(k) + a.length, mix.band(k));
  auto y = dsp::pqmf_synthesis(mix, bank);
  y.sample_rate = x.sample_rate;
  return y;
}

// Network inputs for one aligned (x, x_core) pair of hop-multiple length.
template <class T>
struct SegmentInputs {
  Tensor<T> core_bands;  // [n_core, len/32]
  Tensor<T> slab;        // [1, F', len/H]
};

template <class T>
SegmentInputs<T> segment_inputs(const dsp::AudioBuffer& x, const dsp::AudioBuffer& x_core, const SbgConfig& cfg,
                                const dsp::PqmfBank& bank) {
  if (x.size() != x_core.size()) throw ShapeError("input and core signal differ in length");
  if (x.size() % cfg.hop != 0) throw ShapeError("segment length must be a multiple of the hop");
  SegmentInputs<T> s;
  s.core_bands = band_rows<T>(dsp::pqmf_analysis(x_core, bank), 0, cfg.n_core);
  s.slab = model::hf_slab<T>(x, cfg);
  return s;
}

struct EncodeResult {
  std::string core_payload;
  SbgBitstream bitstream;
  Tensor<float> h;      // embedding seen by the encoder
  Tensor<float> z_hat;  // dequantized side information
  std::size_t padded_length = 0;
};

struct DecodeResult {
  dsp::AudioBuffer audio;
  Tensor<float> h;
  Tensor<float> z_hat;
};

inline SbgBitstream make_bitstream(const SbgConfig& cfg, std::size_t frames, const std::vector<std::vector<std::int32_t>>& idx) {
  SbgBitstream bs;
  bs.sample_rate = std::uint32_t(cfg.sample_rate);
  bs.n_core = std::uint8_t(cfg.n_core);
  bs.n_hf = std::uint8_t(cfg.n_hf);
  bs.n_q = std::uint8_t(idx.size());
  bs.codebook_size = std::uint16_t(cfg.codebook_size);
  bs.hop = std::uint16_t(cfg.hop);
  bs.frames = std::uint32_t(frames);
  bs.indices = idx;
  return bs;
}

// core.encode -> core.decode -> analysis -> embedding h; STFT slab ->
// feature encoder(., h) -> projection -> RVQ with n_active layers.
inline EncodeResult encode(const dsp::AudioBuffer& x, CoreCodec& core, const model::SbgModel<float>& m, std::size_t n_active) {
  dsp::validate(x);
  if (x.empty()) throw UsageError("cannot encode an empty signal");
  const auto& cfg = m.config();
  if (x.sample_rate != cfg.sample_rate) throw FormatError("input sample rate does not match the model");
  if (n_active > cfg.n_q) throw UsageError("requested " + std::to_string(n_active) + " VQ layers, model has " + std::to_string(cfg.n_q));
  ad::NoGradGuard ng;
  EncodeResult r;
  r.core_payload = core.encode(x);
  const auto x_core = core.decode(r.core_payload);
  if (x_core.size() != x.size()) throw FormatError("core codec changed the signal length");
  r.padded_length = padded_length(x.size(), cfg, m.bank());
  const auto in = segment_inputs<float>(pad_to(x, r.padded_length), pad_to(x_core, r.padded_length), cfg, m.bank());
  const auto emb = m.decoder().extract_embedding(in.core_bands);
  const auto z = m.encode_features(in.slab, emb);
  const auto q = m.rvq().quantize(z, n_active);
  r.bitstream = make_bitstream(cfg, q.frames, q.indices);
  r.h = emb.h;
  r.z_hat = q.z_q;
  return r;
}

inline void check_header(const SbgBitstream& bs, const SbgConfig& cfg) {
  auto mismatch = [](const std::string& what, std::size_t got, std::size_t want) {
    throw FormatError("config mismatch: stream " + what + " = " + std::to_string(got) + ", model expects " + std::to_string(want));
  };
  if (bs.sample_rate != std::uint32_t(cfg.sample_rate)) mismatch("sample_rate", bs.sample_rate, std::size_t(cfg.sample_rate));
  if (bs.n_core != cfg.n_core) mismatch("N_core", bs.n_core, cfg.n_core);
  if (bs.n_hf != cfg.n_hf) mismatch("N_HF", bs.n_hf, cfg.n_hf);
  if (bs.codebook_size != cfg.codebook_size) mismatch("M", bs.codebook_size, cfg.codebook_size);
  if (bs.hop != cfg.hop) mismatch("H", bs.hop, cfg.hop);
  if (bs.n_q > cfg.n_q) mismatch("N_q", bs.n_q, cfg.n_q);
}

// Decoder side given the decoded core signal: analysis -> embedding h;
// dequantize -> band generator -> full-band synthesis, trimmed to the core
// signal's length.
inline DecodeResult decode_with_core(const dsp::AudioBuffer& x_core, const SbgBitstream& bs, const model::SbgModel<float>& m) {
  const auto& cfg = m.config();
  check_header(bs, cfg);
  check_indices(bs);
  dsp::validate(x_core);
  if (x_core.sample_rate != cfg.sample_rate) throw FormatError("core signal sample rate does not match the model");
  ad::NoGradGuard ng;
  const std::size_t len = x_core.size();
  const std::size_t padded = padded_length(len, cfg, m.bank());
  if (bs.frames != padded / cfg.hop)
    throw FormatError("stream has " + std::to_string(bs.frames) + " frames, core signal needs " + std::to_string(padded / cfg.hop));
  const auto core_bands = band_rows<float>(dsp::pqmf_analysis(pad_to(x_core, padded), m.bank()), 0, cfg.n_core);
  DecodeResult r;
  const auto emb = m.decoder().extract_embedding(core_bands);
  r.h = emb.h;
  r.z_hat = m.rvq().dequantize(bs.indices, bs.frames);
  const auto gen = m.decoder().generate_bands(emb, r.z_hat);
  const auto y = m.synthesize(core_bands, gen);
  const std::size_t d = m.bank().delay();
  r.audio = dsp::AudioBuffer(std::vector<double>(y.values().begin() + long(d), y.values().begin() + long(d + len)), x_core.sample_rate);
  return r;
}

inline DecodeResult decode(const std::string& core_payload, const SbgBitstream& bs, CoreCodec& core,
                           const model::SbgModel<float>& m) {
  check_header(bs, m.config());
  return decode_with_core(core.decode(core_payload), bs, m);
}

}  // namespace nsbg::codec
