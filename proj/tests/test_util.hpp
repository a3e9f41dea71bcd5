#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <vector>

#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/tensor.hpp"
#include "nsbg/dsp/audio.hpp"

namespace testutil {

using nsbg::ad::Rng;
using nsbg::ad::Shape;
using nsbg::ad::Tensor;

inline nsbg::dsp::AudioBuffer white_noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  Rng r(seed);
  std::vector<double> s(n);
  for (auto& v : s) v = amp * r.uniform(-1.0, 1.0);
  return nsbg::dsp::AudioBuffer(std::move(s));
}

inline nsbg::dsp::AudioBuffer sine(std::size_t n, double hz, double amp = 0.5, double fs = 48000.0) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * std::numbers::pi * hz * double(i) / fs);
  return nsbg::dsp::AudioBuffer(std::move(s));
}

inline double snr_db(const std::vector<double>& ref, const std::vector<double>& test, std::size_t from = 0,
                     std::size_t to = std::size_t(-1)) {
  to = std::min({to, ref.size(), test.size()});
  double es = 0.0, ee = 0.0;
  for (std::size_t i = from; i < to; ++i) {
    es += ref[i] * ref[i];
    ee += (ref[i] - test[i]) * (ref[i] - test[i]);
  }
  return 10.0 * std::log10(es / ee);
}

// Energy of x above `hz`, by direct DFT at every bin (oracle, O(N^2) on short signals).
inline double energy_above(const std::vector<double>& x, double hz, double fs = 48000.0) {
  const std::size_t n = x.size();
  double e = 0.0;
  for (std::size_t k = 0; k <= n / 2; ++k) {
    if (double(k) * fs / double(n) < hz) continue;
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * i % n) / double(n));
    e += std::norm(acc);
  }
  return e;
}

// 4-term Blackman-Harris taper, so spectral leakage of a cut segment stays
// below about -92 dB.
inline std::vector<double> tapered(std::vector<double> x) {
  const double n = double(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = 2.0 * std::numbers::pi * double(i) / n;
    x[i] *= 0.35875 - 0.48829 * std::cos(a) + 0.14128 * std::cos(2 * a) - 0.01168 * std::cos(3 * a);
  }
  return x;
}

template <class T>
Tensor<T> random_tensor(Shape s, Rng& r, double scale = 1.0, bool grad = false) {
  std::vector<T> v(nsbg::ad::numel(s));
  for (auto& x : v) x = T(scale * r.uniform(-1.0, 1.0));
  return grad ? Tensor<T>::parameter(std::move(s), std::move(v)) : Tensor<T>(std::move(s), std::move(v));
}

// Maximum relative error between analytic and central-difference gradients
// of `loss` w.r.t. `x`. Relative to max(|analytic|, |numeric|, floor).
inline double grad_check(const std::function<Tensor<double>()>& loss, Tensor<double> x, double h = 1e-5,
                         double floor = 1e-6, std::size_t max_probes = 64, std::uint64_t seed = 99) {
  x.zero_grad();
  auto l = loss();
  nsbg::ad::backward(l);
  const std::vector<double> g(x.grad().begin(), x.grad().end());
  Rng r(seed);
  const std::size_t n = x.numel();
  std::vector<std::size_t> probes;
  if (n <= max_probes)
    for (std::size_t i = 0; i < n; ++i) probes.push_back(i);
  else
    for (std::size_t i = 0; i < max_probes; ++i) probes.push_back(r.below(n));
  double worst = 0.0;
  auto& vals = x.values();
  for (auto i : probes) {
    const double orig = vals[i];
    double lp, lm;
    {
      nsbg::ad::NoGradGuard ng;
      vals[i] = orig + h;
      lp = loss().item();
      vals[i] = orig - h;
      lm = loss().item();
    }
    vals[i] = orig;
    const double num = (lp - lm) / (2.0 * h);
    const double err = std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

// Random linear functional sum(w * y), so every output element contributes to the check.
inline Tensor<double> probe_loss(const Tensor<double>& y, std::uint64_t seed) {
  Rng r(seed);
  std::vector<double> w(y.numel());
  for (auto& v : w) v = r.uniform(-1.0, 1.0);
  return nsbg::ad::sum(nsbg::ad::mul(y, Tensor<double>(y.shape(), std::move(w))));
}

}  // namespace testutil
