#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <tuple>
#include <vector>

#include "nsbg/ad/ops.hpp"
#include "nsbg/ad/tensor.hpp"
#include "nsbg/dsp/fft.hpp"
#include "nsbg/dsp/mel.hpp"
#include "nsbg/dsp/stft.hpp"

namespace nsbg::ad {

// Differentiable causal STFT of a signal tensor (any shape, read as 1-D).
// Output [2, window/2+1, frames]: real parts then imaginary parts.
template <class T>
Tensor<T> stft(const Tensor<T>& x, std::size_t window, std::size_t hop) {
  const dsp::StftGeometry g(window, hop);
  const std::size_t n = x.numel();
  if (n == 0) throw UsageError("STFT of empty signal");
  const std::size_t F = g.bins(), frames = g.frames(n);
  const auto win = dsp::periodic_hann(window);
  std::vector<T> out(2 * F * frames);
  std::vector<double> buf(window);
  std::vector<std::complex<double>> spec(F);
  const auto& xv = x.values();
  for (std::size_t t = 0; t < frames; ++t) {
    const long start = g.frame_start(t);
    for (std::size_t i = 0; i < window; ++i) {
      const long s = start + long(i);
      buf[i] = (s >= 0 && s < long(n)) ? double(xv[std::size_t(s)]) * win[i] : 0.0;
    }
    dsp::Fft::forward_real(buf.data(), window, spec.data());
    for (std::size_t k = 0; k < F; ++k) {
      out[k * frames + t] = T(spec[k].real());
      out[(F + k) * frames + t] = T(spec[k].imag());
    }
  }
  return make_result(Shape{2, F, frames}, std::move(out), {x}, [=](Node<T>& self) {
    T* gx = parent_grad(self, 0);
    if (!gx) return;
    // dL/dx[start+i] = w[i] * Re(sum_k G_k exp(+2 pi j k i / N)), G_k = dRe + j dIm.
    std::vector<std::complex<double>> G(window), r(window);
    for (std::size_t t = 0; t < frames; ++t) {
      std::fill(G.begin(), G.end(), std::complex<double>{});
      for (std::size_t k = 0; k < F; ++k)
        G[k] = {double(self.grad[k * frames + t]), double(self.grad[(F + k) * frames + t])};
      dsp::Fft::inverse_complex(G.data(), window, r.data());
      const long start = g.frame_start(t);
      for (std::size_t i = 0; i < window; ++i) {
        const long s = start + long(i);
        if (s >= 0 && s < long(n)) gx[std::size_t(s)] += T(win[i] * r[i].real());
      }
    }
  });
}

// |X| from a [2, F, T] STFT tensor. The gradient at |X| = 0 is taken as 0.
template <class T>
Tensor<T> magnitude(const Tensor<T>& spec) {
  if (spec.rank() != 3 || spec.dim(0) != 2) throw ShapeError("magnitude expects [2,F,T], got " + to_string(spec.shape()));
  const std::size_t half = spec.numel() / 2;
  std::vector<T> out(half);
  const auto& v = spec.values();
  for (std::size_t i = 0; i < half; ++i) out[i] = std::sqrt(v[i] * v[i] + v[half + i] * v[half + i]);
  return make_result(Shape{spec.dim(1), spec.dim(2)}, std::move(out), {spec}, [half](Node<T>& self) {
    T* g = parent_grad(self, 0);
    if (!g) return;
    const auto& v = self.parents[0]->value;
    for (std::size_t i = 0; i < half; ++i) {
      const T m = self.value[i];
      if (m == T(0)) continue;
      g[i] += self.grad[i] * v[i] / m;
      g[half + i] += self.grad[i] * v[half + i] / m;
    }
  });
}

namespace detail {

template <class T>
const Tensor<T>& cached_mel_filterbank(std::size_t mels, std::size_t window, int sample_rate) {
  static std::mutex mu;
  static std::map<std::tuple<std::size_t, std::size_t, int>, Tensor<T>> cache;
  std::lock_guard lock(mu);
  const auto key = std::make_tuple(mels, window, sample_rate);
  auto it = cache.find(key);
  if (it == cache.end()) {
    const auto fb = dsp::mel_filterbank(mels, window, double(sample_rate));
    it = cache.emplace(key, Tensor<T>(Shape{mels, window / 2 + 1}, std::vector<T>(fb.begin(), fb.end()))).first;
  }
  return it->second;
}

}  // namespace detail

// Magnitude mel spectrogram [mels, frames] at multi-scale resolution i.
template <class T>
Tensor<T> mel_magnitude(const Tensor<T>& x, int scale_index, int sample_rate = 48000) {
  const auto sc = dsp::MelScale::at(scale_index);
  const auto& fb = detail::cached_mel_filterbank<T>(sc.mels, sc.window, sample_rate);
  return matmul(fb, magnitude(stft(x, sc.window, sc.hop)));
}

}  // namespace nsbg::ad
