#pragma once

#include <cstddef>
#include <cstdint>

#include "nsbg/ad/nn.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/pqmf.hpp"
#include "nsbg/model/decoder.hpp"
#include "nsbg/model/encoder.hpp"
#include "nsbg/model/rvq.hpp"

namespace nsbg::model {

template <class T>
struct SbgForward {
  Embedding<T> emb;
  Tensor<T> z;       // [D, F'/32, T]
  Tensor<T> z_proj;  // [F', T]
  QuantizeResult<T> q;
  Tensor<T> gen;    // [N_HF, T'/32]
  Tensor<T> x_hat;  // raw synthesis [1, T'], delayed by the filterbank delay
};

// Generator side of the codec: feature encoder, quantizer and subband decoder.
template <class T>
class SbgModel {
 public:
  SbgModel(const SbgConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    ad::Rng rng(seed);
    auto r_enc = rng.fork(), r_rvq = rng.fork(), r_dec = rng.fork();
    encoder_ = FeatureEncoder<T>(params_, cfg_, r_enc);
    rvq_ = ResidualVq<T>(params_, cfg_, r_rvq);
    decoder_ = SubbandDecoder<T>(params_, cfg_, r_dec);
    bank_ = dsp::design_pqmf(cfg_.pqmf_bands, cfg_.pqmf_taps, cfg_.pqmf_atten_db);
    synth_ = synthesis_filters<T>(bank_);
  }

  SbgModel(const SbgModel&) = delete;
  SbgModel& operator=(const SbgModel&) = delete;

  const SbgConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& params() { return params_; }
  const ad::ParameterSet<T>& params() const { return params_; }
  const FeatureEncoder<T>& encoder() const { return encoder_; }
  const ResidualVq<T>& rvq() const { return rvq_; }
  ResidualVq<T>& rvq() { return rvq_; }
  const SubbandDecoder<T>& decoder() const { return decoder_; }
  const dsp::PqmfBank& bank() const { return bank_; }

  // Side information for a slab given the extracted embedding.
  Tensor<T> encode_features(const Tensor<T>& slab, const Embedding<T>& emb) const {
    return encoder_.project_reshape(encoder_(slab, emb.h));
  }

  SbgForward<T> forward(const Tensor<T>& core_bands, const Tensor<T>& slab, std::size_t n_active) const {
    SbgForward<T> f;
    f.emb = decoder_.extract_embedding(core_bands);
    f.z = encoder_(slab, f.emb.h);
    f.z_proj = encoder_.project_reshape(f.z);
    f.q = rvq_.quantize(f.z_proj, n_active);
    f.gen = decoder_.generate_bands(f.emb, f.q.z_q);
    f.x_hat = synthesize(core_bands, f.gen);
    return f;
  }

  Tensor<T> synthesize(const Tensor<T>& core_bands, const Tensor<T>& gen) const {
    return pqmf_synthesis(stack_bands(core_bands, gen, bank_.num_bands), synth_);
  }

  // Zeroes every TFiLM projection on z_hat, making generation independent of the side information.
  void make_blind() {
    for (const auto* f : decoder_.films()) {
      auto w = f->proj.weight;
      auto b = f->proj.bias;
      std::fill(w.values().begin(), w.values().end(), T(0));
      if (b.defined()) std::fill(b.values().begin(), b.values().end(), T(0));
    }
  }

 private:
  SbgConfig cfg_;
  ad::ParameterSet<T> params_;
  FeatureEncoder<T> encoder_;
  ResidualVq<T> rvq_;
  SubbandDecoder<T> decoder_;
  dsp::PqmfBank bank_;
  Tensor<T> synth_;
};

}  // namespace nsbg::model
