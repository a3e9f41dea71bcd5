#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "nsbg/ad/conv.hpp"
#include "nsbg/ad/ops.hpp"
#include "nsbg/ad/tensor.hpp"

namespace nsbg::ad {

// Seeded generator. Uniform and normal draws are derived from raw 64-bit
// words here rather than through <random> distributions, whose algorithms
// are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return std::size_t(uniform() * double(n)) % n; }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  // Normal(0, std) resampled until within two standard deviations.
  double truncated_normal(double std) {
    for (;;) {
      const double v = normal();
      if (std::abs(v) <= 2.0) return v * std;
    }
  }
  Rng fork() { return Rng(eng_()); }

 private:
  std::mt19937_64 eng_;
};

// Named, ordered parameter collection. Names double as checkpoint keys.
template <class T>
class ParameterSet {
 public:
  Tensor<T> add(const std::string& name, Shape shape, std::vector<T> values) {
    for (const auto& [n, _] : items_)
      if (n == name) throw UsageError("duplicate parameter name " + name);
    auto t = Tensor<T>::parameter(std::move(shape), std::move(values));
    items_.emplace_back(name, t);
    return t;
  }

  std::optional<Tensor<T>> find(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    return std::nullopt;
  }

  void zero_grad() {
    for (auto& [_, t] : items_) t.zero_grad();
  }

  std::size_t count() const {
    std::size_t c = 0;
    for (const auto& [_, t] : items_) c += t.numel();
    return c;
  }

  void append(const ParameterSet& other) {
    for (const auto& [n, t] : other.items_) items_.emplace_back(n, t);
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> items_;
};

namespace init {

template <class T>
std::vector<T> uniform(Rng& rng, std::size_t n, double bound) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.uniform(-bound, bound));
  return v;
}

template <class T>
std::vector<T> truncated_normal(Rng& rng, std::size_t n, double std) {
  std::vector<T> v(n);
  for (auto& x : v) x = T(rng.truncated_normal(std));
  return v;
}

}  // namespace init

// Causal 1-D convolution with bias. Weight [Cout, Cin, K].
template <class T>
struct Conv1d {
  Tensor<T> weight, bias;
  std::size_t stride = 1, dilation = 1;

  Conv1d() = default;
  Conv1d(ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel, Rng& rng,
         std::size_t stride_ = 1, std::size_t dilation_ = 1)
      : stride(stride_), dilation(dilation_) {
    const double bound = 1.0 / std::sqrt(double(cin * kernel));
    weight = ps.add(name + ".weight", {cout, cin, kernel}, init::uniform<T>(rng, cout * cin * kernel, bound));
    bias = ps.add(name + ".bias", {cout}, init::uniform<T>(rng, cout, bound));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return causal_conv1d(x, weight, bias, stride, dilation); }
};

// Causal transposed convolution: kernel 2*stride, output length T*stride.
template <class T>
struct ConvTranspose1d {
  Tensor<T> weight, bias;
  std::size_t stride = 1;

  ConvTranspose1d() = default;
  ConvTranspose1d(ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride_,
                  Rng& rng)
      : stride(stride_) {
    const std::size_t k = 2 * stride;
    const double bound = 1.0 / std::sqrt(double(cout * k));
    weight = ps.add(name + ".weight", {cin, cout, k}, init::uniform<T>(rng, cin * cout * k, bound));
    bias = ps.add(name + ".bias", {cout}, init::uniform<T>(rng, cout, bound));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose1d(x, weight, bias, stride, x.dim(1) * stride); }
};

// 2-D convolution over [C, F, T]: "same" along F (with stride), causal along T.
template <class T>
struct Conv2d {
  Tensor<T> weight, bias;
  std::size_t stride_f = 1, stride_t = 1;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kf, std::size_t kt,
         Rng& rng, std::size_t sf = 1, std::size_t st = 1, bool with_bias = true)
      : stride_f(sf), stride_t(st) {
    const double bound = 1.0 / std::sqrt(double(cin * kf * kt));
    weight = ps.add(name + ".weight", {cout, cin, kf, kt}, init::uniform<T>(rng, cout * cin * kf * kt, bound));
    if (with_bias) bias = ps.add(name + ".bias", {cout}, init::uniform<T>(rng, cout, bound));
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return causal_conv2d(x, weight, bias, stride_f, stride_t); }
};

// Pointwise linear map over the leading (channel) axis: [Cin, ...] -> [Cout, ...].
template <class T>
struct Linear {
  Tensor<T> weight, bias;

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) {
    weight = ps.add(name + ".weight", {out, in}, init::truncated_normal<T>(rng, out * in, 0.02));
    if (with_bias) bias = ps.add(name + ".bias", {out}, std::vector<T>(out, T(0)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const std::size_t in = weight.dim(1);
    if (x.dim(0) != in) throw ShapeError("linear: expected " + std::to_string(in) + " input channels, got " + to_string(x.shape()));
    Shape out_shape = x.shape();
    out_shape[0] = weight.dim(0);
    auto y = conv1d(reshape(x, {in, x.numel() / in}), reshape(weight, {weight.dim(0), in, 1}), bias, 1, 1, 0, 0);
    return reshape(y, std::move(out_shape));
  }
};

// Temporal FiLM. The conditioning b [Cb, Tb] is brought to the activation's
// rate (strided conv when Tb > Ta, step replication when Tb < Ta) and then
// projected to (gamma - 1, beta), so zero projection weights are an identity.
template <class T>
struct Tfilm {
  std::size_t channels = 0, down = 1;
  Conv1d<T> resample;
  Linear<T> proj;

  Tfilm() = default;
  // `down` > 1 enables the strided-conv branch with that fixed ratio.
  Tfilm(ParameterSet<T>& ps, const std::string& name, std::size_t cond_channels, std::size_t act_channels, Rng& rng,
        std::size_t down_ = 1)
      : channels(act_channels), down(down_) {
    if (down > 1) resample = Conv1d<T>(ps, name + ".resample", cond_channels, cond_channels, down, rng, down);
    proj = Linear<T>(ps, name + ".proj", cond_channels, 2 * act_channels, rng);
  }

  // Conditioning resampled to `ta` steps, before projection.
  Tensor<T> align(const Tensor<T>& b, std::size_t ta) const {
    const std::size_t tb = b.dim(1);
    if (tb == ta) return b;
    if (tb > ta) {
      if (tb % ta != 0 || tb / ta != down || down == 1)
        throw ShapeError("TFiLM: conditioning length " + std::to_string(tb) + " does not reduce to " + std::to_string(ta));
      return conv1d(b, resample.weight, resample.bias, down, 1, 0, 0);
    }
    if (ta % tb != 0)
      throw ShapeError("TFiLM: activation length " + std::to_string(ta) + " is not a multiple of " + std::to_string(tb));
    return repeat_last(b, ta / tb);
  }

  // Returns (gamma, beta), each [Ca, Ta].
  std::pair<Tensor<T>, Tensor<T>> params(const Tensor<T>& b, std::size_t ta) const {
    auto gb = proj(align(b, ta));
    return {add_scalar(slice(gb, 0, 0, channels), T(1)), slice(gb, 0, channels, channels)};
  }

  Tensor<T> operator()(const Tensor<T>& a, const Tensor<T>& b) const {
    if (a.dim(0) != channels) throw ShapeError("TFiLM: activation has " + std::to_string(a.dim(0)) + " channels");
    auto [gamma, beta] = params(b, a.shape().back());
    return modulate(a, gamma, beta);
  }
};

}  // namespace nsbg::ad
