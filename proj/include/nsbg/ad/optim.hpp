#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/tensor.hpp"
#include "nsbg/error.hpp"

namespace nsbg::ad {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  double decay = 0.999996;  // per-step exponential learning-rate decay
};

// Global L2 norm of all parameter gradients.
template <class T>
double grad_norm(ParameterSet<T>& params) {
  double s = 0.0;
  for (auto& [_, p] : params)
    if (p.has_grad())
      for (T g : p.grad()) s += double(g) * double(g);
  return std::sqrt(s);
}

// Rescales gradients so their global norm is at most `max_norm`. Returns the norm before clipping.
template <class T>
double clip_grad_norm(ParameterSet<T>& params, double max_norm) {
  const double n = grad_norm(params);
  if (!std::isfinite(n)) throw NumericError("non-finite gradient norm");
  if (n > max_norm) {
    const T s = T(max_norm / (n + 1e-12));
    for (auto& [_, p] : params)
      if (p.has_grad())
        for (T& g : p.grad()) g *= s;
  }
  return n;
}

// Bias-corrected Adam. Moments are kept in double regardless of T.
template <class T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, AdamConfig cfg = {}) : params_(params), cfg_(cfg) {
    for (auto& [_, p] : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  std::size_t step_count() const { return step_; }
  // Rate used by the next step: lr0 * decay^step.
  double learning_rate() const { return cfg_.lr * std::pow(cfg_.decay, double(step_)); }
  const AdamConfig& config() const { return cfg_; }

  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }

  void step() {
    if (m_.size() != params_.size()) throw ShapeError("optimizer state does not match parameter count");
    const double lr = learning_rate();
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    std::size_t i = 0;
    for (auto& [name, p] : params_) {
      auto& m = m_[i];
      auto& v = v_[i];
      ++i;
      if (m.size() != p.numel()) throw ShapeError("optimizer moment shape mismatch for " + name);
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto w = p.data();
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double gj = double(g[j]);
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        const double mh = m[j] / bc1, vh = v[j] / bc2;
        w[j] = T(double(w[j]) - lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

 private:
  ParameterSet<T>& params_;
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace nsbg::ad
