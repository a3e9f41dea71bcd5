#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "nsbg/ad/conv.hpp"
#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/ops.hpp"
#include "nsbg/ad/spectral.hpp"
#include "nsbg/config.hpp"

namespace nsbg::model {

using ad::Shape;
using ad::Tensor;

template <class T>
struct DiscOutput {
  std::vector<Tensor<T>> scores;                 // one score map per discriminator
  std::vector<std::vector<Tensor<T>>> features;  // per discriminator, ordered by layer
};

// Plain 2-D conv layer with explicit padding (discriminators need not be causal).
template <class T>
struct PaddedConv2d {
  Tensor<T> weight, bias;
  std::size_t sf = 1, st = 1, pf = 0, pt = 0;

  PaddedConv2d() = default;
  PaddedConv2d(ad::ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kf,
               std::size_t kt, std::size_t sf_, std::size_t st_, std::size_t pf_, std::size_t pt_, ad::Rng& rng)
      : sf(sf_), st(st_), pf(pf_), pt(pt_) {
    const double bound = 1.0 / std::sqrt(double(cin * kf * kt));
    weight = ps.add(name + ".weight", {cout, cin, kf, kt}, ad::init::uniform<T>(rng, cout * cin * kf * kt, bound));
    bias = ps.add(name + ".bias", {cout}, ad::init::uniform<T>(rng, cout, bound));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return ad::conv2d(x, weight, bias, sf, st, pf, pf, pt, pt); }
};

inline constexpr double kDiscSlope = 0.1;

// Signal folded into [1, L/p, p]; (5,1) convolutions with stride 3 along the folded time axis.
template <class T>
class PeriodDiscriminator {
 public:
  PeriodDiscriminator() = default;
  PeriodDiscriminator(ad::ParameterSet<T>& ps, const std::string& name, std::size_t period, std::size_t width, ad::Rng& rng)
      : period_(period) {
    std::size_t cin = 1;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t cout = width << i;
      layers_.emplace_back(ps, name + ".conv" + std::to_string(i + 1), cin, cout, 5, 1, 3, 1, 2, 0, rng);
      cin = cout;
    }
    layers_.emplace_back(ps, name + ".conv5", cin, cin, 5, 1, 1, 1, 2, 0, rng);
    post_ = PaddedConv2d<T>(ps, name + ".post", cin, 1, 3, 1, 1, 1, 1, 0, rng);
  }

  std::size_t period() const { return period_; }

  Tensor<T> operator()(const Tensor<T>& x, std::vector<Tensor<T>>& feats) const {
    const std::size_t n = x.numel();
    const std::size_t padded = (n + period_ - 1) / period_ * period_;
    auto y = ad::reshape(ad::resize_last(ad::reshape(x, {1, n}), padded), {1, padded / period_, period_});
    for (const auto& l : layers_) {
      y = ad::leaky_relu(l(y), T(kDiscSlope));
      feats.push_back(y);
    }
    y = post_(y);
    feats.push_back(y);
    return y;
  }

 private:
  std::size_t period_ = 2;
  std::vector<PaddedConv2d<T>> layers_;
  PaddedConv2d<T> post_;
};

// Complex STFT (re/im channels) split into frequency bands, a strided conv
// stack per band, bands concatenated along frequency, then a score conv.
template <class T>
class StftDiscriminator {
 public:
  static constexpr double kBandEdges[4] = {0.0, 0.15, 0.5, 1.0};

  StftDiscriminator() = default;
  StftDiscriminator(ad::ParameterSet<T>& ps, const std::string& name, std::size_t window, std::size_t width, ad::Rng& rng)
      : window_(window) {
    for (std::size_t b = 0; b < 3; ++b) {
      std::vector<PaddedConv2d<T>> stack;
      const std::string bn = name + ".band" + std::to_string(b + 1);
      stack.emplace_back(ps, bn + ".conv1", 2, width, 9, 3, 2, 1, 4, 1, rng);
      stack.emplace_back(ps, bn + ".conv2", width, width, 9, 3, 2, 1, 4, 1, rng);
      stack.emplace_back(ps, bn + ".conv3", width, width, 9, 3, 2, 1, 4, 1, rng);
      stack.emplace_back(ps, bn + ".conv4", width, width, 3, 3, 1, 1, 1, 1, rng);
      bands_.push_back(std::move(stack));
    }
    post_ = PaddedConv2d<T>(ps, name + ".post", width, 1, 3, 3, 1, 1, 1, 1, rng);
  }

  std::size_t window() const { return window_; }

  Tensor<T> operator()(const Tensor<T>& x, std::vector<Tensor<T>>& feats) const {
    auto spec = ad::stft(x, window_, window_ / 4);  // [2, F, frames]
    const std::size_t F = spec.dim(1);
    std::vector<Tensor<T>> outs;
    for (std::size_t b = 0; b < 3; ++b) {
      const auto lo = std::size_t(kBandEdges[b] * double(F));
      const auto hi = b == 2 ? F : std::size_t(kBandEdges[b + 1] * double(F));
      auto y = ad::slice(spec, 1, lo, hi - lo);
      for (const auto& l : bands_[b]) {
        y = ad::leaky_relu(l(y), T(kDiscSlope));
        feats.push_back(y);
      }
      outs.push_back(y);
    }
    auto y = post_(ad::concat(outs, 1));
    feats.push_back(y);
    return y;
  }

 private:
  std::size_t window_ = 2048;
  std::vector<std::vector<PaddedConv2d<T>>> bands_;
  PaddedConv2d<T> post_;
};

template <class T>
class DiscriminatorSet {
 public:
  DiscriminatorSet() = default;
  DiscriminatorSet(ad::ParameterSet<T>& ps, const SbgConfig& cfg, ad::Rng& rng, const std::string& prefix = "disc") {
    for (auto p : cfg.mpd_periods) mpd_.emplace_back(ps, prefix + ".mpd" + std::to_string(p), p, cfg.mpd_channels, rng);
    for (auto w : cfg.stft_windows) stft_.emplace_back(ps, prefix + ".stft" + std::to_string(w), w, cfg.stft_disc_channels, rng);
  }

  std::size_t size() const { return mpd_.size() + stft_.size(); }

  std::size_t min_length() const {
    std::size_t m = 1;
    for (const auto& d : stft_) m = std::max(m, d.window());
    return m;
  }

  DiscOutput<T> operator()(const Tensor<T>& x) const {
    if (x.numel() < min_length())
      throw UsageError("segment of " + std::to_string(x.numel()) + " samples is shorter than the largest STFT window");
    DiscOutput<T> out;
    for (const auto& d : mpd_) {
      out.features.emplace_back();
      out.scores.push_back(d(x, out.features.back()));
    }
    for (const auto& d : stft_) {
      out.features.emplace_back();
      out.scores.push_back(d(x, out.features.back()));
    }
    return out;
  }

 private:
  std::vector<PeriodDiscriminator<T>> mpd_;
  std::vector<StftDiscriminator<T>> stft_;
};

}  // namespace nsbg::model
