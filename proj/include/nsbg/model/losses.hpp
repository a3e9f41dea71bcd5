#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "nsbg/ad/ops.hpp"
#include "nsbg/ad/spectral.hpp"
#include "nsbg/config.hpp"
#include "nsbg/dsp/mel.hpp"
#include "nsbg/model/discriminator.hpp"

namespace nsbg::model {

using ad::Tensor;

inline constexpr double kMelClamp = 1e-5;
inline constexpr double kFeatureNormFloor = 1e-8;

// Sum over the seven resolutions of the mean |log10 mel(x_hat) - log10 mel(x_tgt)|.
template <class T>
Tensor<T> mel_loss(const Tensor<T>& x_hat, const Tensor<T>& x_tgt, int sample_rate = 48000) {
  if (x_hat.numel() != x_tgt.numel())
    throw ShapeError("mel_loss length mismatch: " + std::to_string(x_hat.numel()) + " vs " + std::to_string(x_tgt.numel()));
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (int i = 1; i <= dsp::kMelScales; ++i) {
    auto a = ad::log10_clamped(ad::mel_magnitude(x_hat, i, sample_rate), T(kMelClamp));
    auto b = ad::log10_clamped(ad::mel_magnitude(x_tgt, i, sample_rate), T(kMelClamp));
    total = ad::add(total, ad::mean_abs_diff(a, b));
  }
  return total;
}

template <class T>
struct HingeLosses {
  Tensor<T> d;  // discriminator objective
  Tensor<T> g;  // generator adversarial term
};

// L_D = mean(relu(1 - D(x))) + mean(relu(1 + D(x_hat))), L_G = -mean(D(x_hat)),
// each averaged over discriminators. `real` may be empty when only L_G is needed.
template <class T>
HingeLosses<T> hinge_losses(const std::vector<Tensor<T>>& real, const std::vector<Tensor<T>>& fake) {
  if (fake.empty()) throw UsageError("hinge loss over an empty score set");
  if (!real.empty() && real.size() != fake.size()) throw ShapeError("real and fake score sets differ in size");
  const T inv = T(1) / T(fake.size());
  Tensor<T> ld = Tensor<T>::scalar(T(0)), lg = Tensor<T>::scalar(T(0));
  for (std::size_t i = 0; i < fake.size(); ++i) {
    if (!real.empty()) {
      auto r = ad::mean(ad::relu(ad::add_scalar(ad::scale(real[i], T(-1)), T(1))));
      auto f = ad::mean(ad::relu(ad::add_scalar(fake[i], T(1))));
      ld = ad::add(ld, ad::add(r, f));
    }
    lg = ad::add(lg, ad::scale(ad::mean(fake[i]), T(-1)));
  }
  return {ad::scale(ld, inv), ad::scale(lg, inv)};
}

// Mean over layers of mean|fake - real| / max(mean|real|, 1e-8).
template <class T>
Tensor<T> feature_matching(const std::vector<std::vector<Tensor<T>>>& real, const std::vector<std::vector<Tensor<T>>>& fake) {
  if (real.size() != fake.size()) throw ShapeError("feature lists differ in discriminator count");
  Tensor<T> total = Tensor<T>::scalar(T(0));
  std::size_t layers = 0;
  for (std::size_t d = 0; d < real.size(); ++d) {
    if (real[d].size() != fake[d].size()) throw ShapeError("feature lists differ in layer count");
    for (std::size_t l = 0; l < real[d].size(); ++l) {
      const auto& r = real[d][l];
      double m = 0.0;
      for (T v : r.values()) m += std::abs(double(v));
      m /= double(std::max<std::size_t>(1, r.numel()));
      const T norm = T(std::max(m, kFeatureNormFloor));
      total = ad::add(total, ad::scale(ad::mean_abs_diff(fake[d][l], r.detach()), T(1) / norm));
      ++layers;
    }
  }
  if (layers == 0) throw UsageError("feature matching over no layers");
  return ad::scale(total, T(1) / T(layers));
}

template <class T>
struct GeneratorLossTerms {
  Tensor<T> mel, adv, fm, cb, cm;
};

// 15 mel + 3 adv + 6 fm + 1 cb + 0.5 cm with the default weights.
template <class T>
Tensor<T> total_generator_loss(const GeneratorLossTerms<T>& c, const LossWeights& w = {}) {
  if (!c.mel.defined() || !c.adv.defined() || !c.fm.defined() || !c.cb.defined() || !c.cm.defined())
    throw UsageError("all five generator loss components are required");
  auto t = ad::scale(c.mel, T(w.mel));
  t = ad::add(t, ad::scale(c.adv, T(w.adv)));
  t = ad::add(t, ad::scale(c.fm, T(w.fm)));
  t = ad::add(t, ad::scale(c.cb, T(w.cb)));
  return ad::add(t, ad::scale(c.cm, T(w.cm)));
}

}  // namespace nsbg::model
