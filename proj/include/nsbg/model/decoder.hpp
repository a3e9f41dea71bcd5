#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "nsbg/ad/conv.hpp"
#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/ops.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/pqmf.hpp"

namespace nsbg::model {

using ad::Shape;
using ad::Tensor;

// x + conv1x1(lrelu(conv_k3,dil(lrelu(x)))), hidden width ch/2.
template <class T>
struct ResidualUnit {
  ad::Conv1d<T> conv1, conv2;

  ResidualUnit() = default;
  ResidualUnit(ad::ParameterSet<T>& ps, const std::string& name, std::size_t ch, std::size_t dilation, ad::Rng& rng)
      : conv1(ps, name + ".conv1", ch, ch / 2, 3, rng, 1, dilation), conv2(ps, name + ".conv2", ch / 2, ch, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    return ad::add(x, conv2(ad::leaky_relu(conv1(ad::leaky_relu(x)))));
  }
};

inline constexpr std::array<std::size_t, 3> kUnitDilations{1, 3, 9};

// Residual units at `ch`, then a strided conv (kernel 2*stride) to 2*ch.
template <class T>
struct EncoderBlock {
  std::array<ResidualUnit<T>, 3> units;
  ad::Conv1d<T> down;

  EncoderBlock() = default;
  EncoderBlock(ad::ParameterSet<T>& ps, const std::string& name, std::size_t ch, std::size_t stride, ad::Rng& rng) {
    for (std::size_t i = 0; i < 3; ++i)
      units[i] = ResidualUnit<T>(ps, name + ".unit" + std::to_string(i + 1), ch, kUnitDilations[i], rng);
    down = ad::Conv1d<T>(ps, name + ".down", ch, 2 * ch, 2 * stride, rng, stride);
  }

  // Returns (output, pre-downsample activation).
  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& x) const {
    auto y = x;
    for (const auto& u : units) y = u(y);
    return {down(ad::leaky_relu(y)), y};
  }
};

// Transposed conv 2*ch -> ch, additive skip, residual units, TFiLM on z_hat.
template <class T>
struct DecoderBlock {
  ad::ConvTranspose1d<T> up;
  std::array<ResidualUnit<T>, 3> units;
  ad::Tfilm<T> film;

  DecoderBlock() = default;
  DecoderBlock(ad::ParameterSet<T>& ps, const std::string& name, std::size_t ch, std::size_t stride,
               std::size_t cond_channels, ad::Rng& rng) {
    up = ad::ConvTranspose1d<T>(ps, name + ".up", 2 * ch, ch, stride, rng);
    for (std::size_t i = 0; i < 3; ++i)
      units[i] = ResidualUnit<T>(ps, name + ".unit" + std::to_string(i + 1), ch, kUnitDilations[i], rng);
    film = ad::Tfilm<T>(ps, name + ".tfilm", cond_channels, ch, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>* skip, const Tensor<T>& z_hat) const {
    auto y = up(ad::leaky_relu(x));
    if (skip) y = ad::add(y, *skip);
    for (const auto& u : units) y = u(y);
    return film(y, z_hat);
  }
};

template <class T>
struct Embedding {
  Tensor<T> h;                     // [4C, T'/256]
  std::array<Tensor<T>, 4> skips;  // pre-downsample activations of encoder blocks 1..4
};

// SEANet-style subband generator. The embedding extractor (initial conv,
// four encoder blocks, first bottleneck conv) is shared with the encoder
// side; the band generator consumes its output and z_hat.
template <class T>
class SubbandDecoder {
 public:
  SubbandDecoder() = default;
  SubbandDecoder(ad::ParameterSet<T>& ps, const SbgConfig& cfg, ad::Rng& rng, const std::string& prefix = "decoder")
      : cfg_(cfg) {
    const std::size_t C = cfg.dec_channels;
    const std::size_t F = cfg.slab_bins();
    init_ = ad::Conv1d<T>(ps, prefix + ".extractor.init", cfg.n_core, C, 7, rng);
    for (std::size_t i = 0; i < 4; ++i)
      enc_[i] = EncoderBlock<T>(ps, prefix + ".extractor.block" + std::to_string(i + 1), C << i, cfg.strides[i], rng);
    bottleneck_in_ = ad::Conv1d<T>(ps, prefix + ".extractor.bottleneck", 16 * C, 4 * C, 3, rng);
    bottleneck_out_ = ad::Conv1d<T>(ps, prefix + ".generator.bottleneck", 4 * C, 16 * C, 3, rng);
    bottleneck_film_ = ad::Tfilm<T>(ps, prefix + ".generator.bottleneck.tfilm", F, 16 * C, rng);
    for (std::size_t k = 0; k < 4; ++k) {
      // Decoder block k+1 mirrors encoder block 4-k.
      const std::size_t e = 3 - k;
      dec_[k] = DecoderBlock<T>(ps, prefix + ".generator.block" + std::to_string(k + 1), C << e, cfg.strides[e], F, rng);
    }
    final_ = ad::Conv1d<T>(ps, prefix + ".generator.out", C, cfg.n_hf, 7, rng);
  }

  // core [N_core, T'/32] -> h [4C, T'/256] and skips.
  Embedding<T> extract_embedding(const Tensor<T>& core) const {
    if (core.rank() != 2 || core.dim(0) != cfg_.n_core)
      throw ShapeError("embedding extractor expects " + std::to_string(cfg_.n_core) + " core bands, got " +
                       ad::to_string(core.shape()));
    std::size_t factor = 1;
    for (auto s : cfg_.strides) factor *= s;
    if (core.dim(1) % factor != 0)
      throw ShapeError("subband length " + std::to_string(core.dim(1)) + " not divisible by " + std::to_string(factor));
    Embedding<T> out;
    auto x = init_(core);
    for (std::size_t i = 0; i < 4; ++i) {
      auto [y, skip] = enc_[i](x);
      out.skips[i] = skip;
      x = y;
    }
    out.h = bottleneck_in_(ad::leaky_relu(x));
    return out;
  }

  // -> generated bands [N_HF, T'/32].
  Tensor<T> generate_bands(const Embedding<T>& emb, const Tensor<T>& z_hat, bool use_skips = true) const {
    if (z_hat.rank() != 2 || z_hat.dim(0) != cfg_.slab_bins())
      throw ShapeError("z_hat must be [" + std::to_string(cfg_.slab_bins()) + ", T], got " + ad::to_string(z_hat.shape()));
    auto x = bottleneck_film_(bottleneck_out_(ad::leaky_relu(emb.h)), z_hat);
    for (std::size_t k = 0; k < 4; ++k) x = dec_[k](x, use_skips ? &emb.skips[3 - k] : nullptr, z_hat);
    return final_(ad::leaky_relu(x));
  }

  std::vector<const ad::Tfilm<T>*> films() const {
    std::vector<const ad::Tfilm<T>*> f{&bottleneck_film_};
    for (const auto& b : dec_) f.push_back(&b.film);
    return f;
  }

 private:
  SbgConfig cfg_;
  ad::Conv1d<T> init_;
  std::array<EncoderBlock<T>, 4> enc_;
  ad::Conv1d<T> bottleneck_in_, bottleneck_out_;
  ad::Tfilm<T> bottleneck_film_;
  std::array<DecoderBlock<T>, 4> dec_;
  ad::Conv1d<T> final_;
};

// Differentiable 32-band synthesis of [num_bands, len] subbands -> [1, num_bands * len].
template <class T>
Tensor<T> synthesis_filters(const dsp::PqmfBank& bank) {
  const std::size_t M = bank.num_bands, L = bank.length();
  return Tensor<T>(Shape{M, 1, L}, std::vector<T>(bank.synthesis.begin(), bank.synthesis.end()));
}

template <class T>
Tensor<T> pqmf_synthesis(const Tensor<T>& bands, const Tensor<T>& filters) {
  const std::size_t M = filters.dim(0);
  if (bands.rank() != 2 || bands.dim(0) != M) throw ShapeError("synthesis expects " + std::to_string(M) + " bands");
  return ad::conv_transpose1d(bands, filters, Tensor<T>(), M, M * bands.dim(1));
}

// Stacks core bands 0..N_core-1, generated bands N_core..N_core+N_HF-1 and
// zeros above into a full filterbank input.
template <class T>
Tensor<T> stack_bands(const Tensor<T>& core, const Tensor<T>& gen, std::size_t num_bands) {
  if (core.rank() != 2 || gen.rank() != 2 || core.dim(1) != gen.dim(1))
    throw ShapeError("core and generated bands differ in length: " + ad::to_string(core.shape()) + " vs " +
                     ad::to_string(gen.shape()));
  const std::size_t used = core.dim(0) + gen.dim(0);
  if (used > num_bands) throw ShapeError("more bands than the filterbank has");
  std::vector<Tensor<T>> parts{core, gen};
  if (used < num_bands) parts.push_back(Tensor<T>(Shape{num_bands - used, core.dim(1)}));
  return ad::concat(parts, 0);
}

// Full-band output (raw synthesis, delayed by bank.delay()).
template <class T>
Tensor<T> assemble_fullband(const Tensor<T>& core, const Tensor<T>& gen, const dsp::PqmfBank& bank) {
  return pqmf_synthesis(stack_bands(core, gen, bank.num_bands), synthesis_filters<T>(bank));
}

// Band-domain variant on plain subband sets.
inline dsp::AudioBuffer assemble_fullband(const dsp::SubbandFrameSet& core, const dsp::SubbandFrameSet& gen,
                                          const dsp::PqmfBank& bank) {
  if (core.length != gen.length) throw ShapeError("core and generated subbands differ in length");
  if (core.bands + gen.bands > bank.num_bands) throw ShapeError("more bands than the filterbank has");
  dsp::SubbandFrameSet all(bank.num_bands, core.length, bank.band_width_hz(dsp::kSampleRate));
  std::copy(core.data.begin(), core.data.end(), all.data.begin());
  std::copy(gen.data.begin(), gen.data.end(), all.data.begin() + long(core.bands * core.length));
  return dsp::pqmf_synthesis(all, bank);
}

}  // namespace nsbg::model
