#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nsbg/ad/conv.hpp"
#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/ops.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/stft.hpp"

namespace nsbg::model {

using ad::Shape;
using ad::Tensor;

// Log-power bins of the generated range: [n_core, n_core + n_hf) bands,
// bins_per_band bins each. Returns an F' x T slab.
inline dsp::Spectrogram select_hf_bins(const dsp::Spectrogram& spec, const SbgConfig& cfg) {
  if (cfg.n_hf == 0) throw UsageError("empty generation range (n_hf = 0)");
  const std::size_t per = cfg.bins_per_band();
  const std::size_t lo = cfg.n_core * per, hi = (cfg.n_core + cfg.n_hf) * per;
  if (cfg.n_core + cfg.n_hf > cfg.pqmf_bands || hi > spec.bins)
    throw UsageError("generation range exceeds Nyquist");
  dsp::Spectrogram out;
  out.bins = hi - lo;
  out.frames = spec.frames;
  out.bin_hz = spec.bin_hz;
  out.hop = spec.hop;
  out.values.assign(spec.values.begin() + long(lo * spec.frames), spec.values.begin() + long(hi * spec.frames));
  return out;
}

// Slab as a [1, F', T] tensor.
template <class T>
Tensor<T> slab_tensor(const dsp::Spectrogram& slab) {
  return Tensor<T>(Shape{1, slab.bins, slab.frames}, std::vector<T>(slab.values.begin(), slab.values.end()));
}

// Log-power slab of the generation range for a padded input.
template <class T>
Tensor<T> hf_slab(const dsp::AudioBuffer& x, const SbgConfig& cfg) {
  return slab_tensor<T>(select_hf_bins(dsp::log_power(dsp::stft(x, cfg.window, cfg.hop)), cfg));
}

// Two 3x3 convolutions with ReLU and an additive skip (1x1 conv when the
// shape changes). Frequency stride sits on the first convolution.
template <class T>
struct BasicBlock {
  ad::Conv2d<T> conv1, conv2, skip;
  bool has_skip = false;

  BasicBlock() = default;
  BasicBlock(ad::ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride_f,
             ad::Rng& rng)
      : conv1(ps, name + ".conv1", cin, cout, 3, 3, rng, stride_f),
        conv2(ps, name + ".conv2", cout, cout, 3, 3, rng),
        has_skip(cin != cout || stride_f != 1) {
    if (has_skip) skip = ad::Conv2d<T>(ps, name + ".skip", cin, cout, 1, 1, rng, stride_f);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = conv2(ad::relu(conv1(x)));
    return ad::relu(ad::add(y, has_skip ? skip(x) : x));
  }
};

// Feature encoder: stem conv (7,7)/(2,1) -> max pool (3,3)/(2,1) -> four
// residual stages, each followed by TFiLM conditioning on h.
template <class T>
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(ad::ParameterSet<T>& ps, const SbgConfig& cfg, ad::Rng& rng, const std::string& prefix = "encoder")
      : cfg_(cfg) {
    const std::size_t D = cfg.enc_channels;
    const std::size_t ch[4] = {D / 8, D / 4, D / 2, D};
    stem_ = ad::Conv2d<T>(ps, prefix + ".stem", 1, ch[0], 7, 7, rng, 2, 1);
    const std::size_t down = cfg.hop / cfg.temporal_factor();
    std::size_t cin = ch[0];
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string n = prefix + ".stage" + std::to_string(s + 1);
      const std::size_t stride = s == 0 ? 1 : 2;
      stages_[s][0] = BasicBlock<T>(ps, n + ".block1", cin, ch[s], stride, rng);
      stages_[s][1] = BasicBlock<T>(ps, n + ".block2", ch[s], ch[s], 1, rng);
      films_[s] = ad::Tfilm<T>(ps, n + ".tfilm", cfg.cond_channels(), ch[s], rng, down);
      cin = ch[s];
    }
    proj_ = ad::Linear<T>(ps, prefix + ".proj", D, cfg.freq_reduction, rng);
  }

  // slab [1, F', T], h [4C, T * H / 256] -> z [D, F'/32, T].
  Tensor<T> operator()(const Tensor<T>& slab, const Tensor<T>& h) const {
    if (slab.rank() != 3 || slab.dim(0) != 1) throw ShapeError("feature encoder expects a [1,F',T] slab");
    if (slab.dim(1) % cfg_.freq_reduction != 0)
      throw ShapeError("slab height " + std::to_string(slab.dim(1)) + " not divisible by " +
                       std::to_string(cfg_.freq_reduction));
    auto x = ad::relu(stem_(slab));
    x = ad::max_pool2d(x, 3, 3, 2, 1, 1, 1, 2, 0);
    for (std::size_t s = 0; s < 4; ++s) {
      x = stages_[s][1](stages_[s][0](x));
      x = films_[s](x, h);
    }
    return x;
  }

  // Pointwise D -> S_f projection, then chunk-major merge: row = chunk * S_f + s.
  Tensor<T> project_reshape(const Tensor<T>& z) const {
    if (z.rank() != 3 || z.dim(0) != cfg_.enc_channels) throw ShapeError("project_reshape expects [D,F/S_f,T]");
    auto p = ad::swap01(proj_(z));  // [F/S_f, S_f, T]
    return ad::reshape(p, {p.dim(0) * p.dim(1), p.dim(2)});
  }

  const std::array<ad::Tfilm<T>, 4>& films() const { return films_; }
  std::array<ad::Tfilm<T>, 4>& films() { return films_; }

 private:
  SbgConfig cfg_;
  ad::Conv2d<T> stem_;
  std::array<std::array<BasicBlock<T>, 2>, 4> stages_;
  std::array<ad::Tfilm<T>, 4> films_;
  ad::Linear<T> proj_;
};

}  // namespace nsbg::model
