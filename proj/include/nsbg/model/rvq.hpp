#pragma once

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "nsbg/ad/nn.hpp"
#include "nsbg/ad/ops.hpp"
#include "nsbg/config.hpp"

namespace nsbg::model {

using ad::Shape;
using ad::Tensor;

// Exact rational bits/second: f_s / H * N_q * ceil(log2 M).
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational make(std::int64_t n, std::int64_t d) {
    if (d == 0) throw UsageError("zero denominator");
    if (d < 0) n = -n, d = -d;
    const auto g = std::gcd(n < 0 ? -n : n, d);
    return {n / (g ? g : 1), d / (g ? g : 1)};
  }
  double value() const { return double(num) / double(den); }
  bool operator==(const Rational&) const = default;
};

inline std::size_t bits_per_code(std::size_t codebook_size) {
  return std::size_t(std::bit_width(codebook_size - 1));
}

inline Rational side_info_bitrate(std::int64_t sample_rate, std::int64_t hop, std::size_t n_q, std::size_t codebook_size) {
  if (hop <= 0) throw UsageError("hop must be positive");
  return Rational::make(sample_rate * std::int64_t(n_q) * std::int64_t(bits_per_code(codebook_size)), hop);
}

// Code indices [n_active][T] and their decoded sum [F', T].
struct SbgCodes {
  std::size_t frames = 0;
  std::vector<std::vector<std::int32_t>> indices;
  Tensor<float> dequantized;

  std::size_t n_active() const { return indices.size(); }
};

template <class T>
struct QuantizeResult {
  std::size_t frames = 0;
  std::vector<std::vector<std::int32_t>> indices;
  Tensor<T> z_q;              // forward value equals dequantize(indices)
  Tensor<T> codebook_loss;    // sum over stages
  Tensor<T> commitment_loss;  // sum over stages
};

// Squared L2 norm of a - b, accumulated in double.
template <class T>
double residual_sq_norm(const T* a, const T* b, std::size_t n, std::size_t stride = 1) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(a[i * stride]) - double(b[i * stride]);
    s += d * d;
  }
  return s;
}

template <class T>
double residual_norm(const Tensor<T>& z, const Tensor<T>& zq) {
  if (z.numel() != zq.numel()) throw ShapeError("residual_norm shape mismatch");
  return std::sqrt(residual_sq_norm(z.values().data(), zq.values().data(), z.numel()));
}

// Residual VQ with factorized codes: per stage, an in-projection F' -> N,
// nearest neighbour in an M x N codebook, and an out-projection N -> F'.
// Row 0 of every codebook is held at zero and doubles as the "no update"
// code: a stage only commits a code when that does not increase the
// frame's residual, so the residual norm never grows with depth.
template <class T>
class ResidualVq {
 public:
  enum class Mode { Hard, Identity };  // Identity: codes replaced by the projections (gradient probing)

  ResidualVq() = default;
  ResidualVq(ad::ParameterSet<T>& ps, const SbgConfig& cfg, ad::Rng& rng, const std::string& prefix = "rvq")
      : n_q_(cfg.n_q), M_(cfg.codebook_size), N_(cfg.codebook_dim), F_(cfg.slab_bins()) {
    for (std::size_t s = 0; s < n_q_; ++s) {
      const std::string n = prefix + ".stage" + std::to_string(s);
      Stage st;
      st.in_proj = ad::Linear<T>(ps, n + ".in_proj", F_, N_, rng, true);
      auto cb = ad::init::uniform<T>(rng, M_ * N_, 1.0 / double(M_));
      std::fill_n(cb.begin(), N_, T(0));
      st.codebook = ps.add(n + ".codebook", {M_, N_}, std::move(cb));
      st.out_proj = ad::Linear<T>(ps, n + ".out_proj", N_, F_, rng, false);
      stages_.push_back(std::move(st));
    }
  }

  std::size_t n_q() const { return n_q_; }
  std::size_t codebook_size() const { return M_; }
  std::size_t dim() const { return N_; }
  std::size_t input_dim() const { return F_; }

  // Re-pins the escape rows after an optimizer update.
  void enforce_escape_code() {
    for (auto& st : stages_) std::fill_n(st.codebook.values().begin(), N_, T(0));
  }

  // Nearest codebook row to each column of e [N, T]; ties go to the lowest index.
  std::vector<std::int32_t> nearest(std::size_t stage, const Tensor<T>& e) const {
    const auto& cb = stages_.at(stage).codebook.values();
    const std::size_t Tn = e.dim(1);
    std::vector<std::int32_t> idx(Tn, 0);
    const auto& ev = e.values();
    for (std::size_t t = 0; t < Tn; ++t) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < M_; ++k) {
        double d = 0.0;
        for (std::size_t j = 0; j < N_; ++j) {
          const double diff = double(ev[j * Tn + t]) - double(cb[k * N_ + j]);
          d += diff * diff;
        }
        if (d < best) {
          best = d;
          idx[t] = std::int32_t(k);
        }
      }
    }
    return idx;
  }

  QuantizeResult<T> quantize(const Tensor<T>& z, std::size_t n_active, Mode mode = Mode::Hard) const {
    check_input(z);
    if (n_active > n_q_) throw UsageError("n_active " + std::to_string(n_active) + " exceeds N_q " + std::to_string(n_q_));
    const std::size_t Tn = z.dim(1);
    QuantizeResult<T> r;
    r.frames = Tn;
    r.z_q = Tensor<T>(Shape{F_, Tn});
    r.codebook_loss = Tensor<T>::scalar(T(0));
    r.commitment_loss = Tensor<T>::scalar(T(0));
    Tensor<T> residual = z;
    for (std::size_t s = 0; s < n_active; ++s) {
      const auto& st = stages_[s];
      auto e = st.in_proj(residual);
      Tensor<T> code;
      std::vector<std::int32_t> idx;
      if (mode == Mode::Identity) {
        code = e;
        idx.assign(Tn, 0);
      } else {
        idx = nearest(s, e);
        Tensor<T> cand_out;
        {
          ad::NoGradGuard ng;
          cand_out = st.out_proj(ad::gather_columns(st.codebook, idx));
        }
        // Keep a code only where it does not grow the residual.
        const auto& zv = z.values();
        const auto& acc = r.z_q.values();
        const auto& ov = cand_out.values();
        for (std::size_t t = 0; t < Tn; ++t) {
          if (idx[t] == 0) continue;
          // Both sums in one loop with the same expression shape, so a code
          // that leaves the residual unchanged compares equal at any
          // optimization level.
          double before = 0.0, after = 0.0;
          for (std::size_t f = 0; f < F_; ++f) {
            const T nxt = T(acc[f * Tn + t] + ov[f * Tn + t]);
            const double db = double(zv[f * Tn + t]) - double(acc[f * Tn + t]);
            const double da = double(zv[f * Tn + t]) - double(nxt);
            before += db * db;
            after += da * da;
          }
          if (after > before) idx[t] = 0;
        }
        code = ad::gather_columns(st.codebook, idx);
        r.codebook_loss = ad::add(r.codebook_loss, ad::mean_sq_diff(e.detach(), code));
        r.commitment_loss = ad::add(r.commitment_loss, ad::mean_sq_diff(e, code.detach()));
        code = ad::straight_through(e, code.detach());
      }
      auto out = st.out_proj(code);
      r.z_q = ad::add(r.z_q, out);
      residual = ad::sub(residual, out);
      r.indices.push_back(std::move(idx));
    }
    return r;
  }

  // Sum of out-projected codes; bit-identical to quantize(...).z_q.
  Tensor<T> dequantize(const std::vector<std::vector<std::int32_t>>& indices, std::size_t frames) const {
    if (indices.size() > n_q_) throw FormatError("more code layers than the model has");
    ad::NoGradGuard ng;
    Tensor<T> acc(Shape{F_, frames});
    for (std::size_t s = 0; s < indices.size(); ++s) {
      if (indices[s].size() != frames) throw FormatError("code layer length mismatch");
      for (auto i : indices[s])
        if (i < 0 || std::size_t(i) >= M_) throw FormatError("code index " + std::to_string(i) + " out of range");
      acc = ad::add(acc, stages_[s].out_proj(ad::gather_columns(stages_[s].codebook, indices[s])));
    }
    return acc;
  }

  const Tensor<T>& codebook(std::size_t s) const { return stages_.at(s).codebook; }
  const ad::Linear<T>& in_proj(std::size_t s) const { return stages_.at(s).in_proj; }
  const ad::Linear<T>& out_proj(std::size_t s) const { return stages_.at(s).out_proj; }

 private:
  struct Stage {
    ad::Linear<T> in_proj, out_proj;
    Tensor<T> codebook;
  };

  void check_input(const Tensor<T>& z) const {
    if (z.rank() != 2 || z.dim(0) != F_)
      throw ShapeError("quantizer expects [" + std::to_string(F_) + ", T], got " + ad::to_string(z.shape()));
  }

  std::size_t n_q_ = 0, M_ = 0, N_ = 0, F_ = 0;
  std::vector<Stage> stages_;
};

}  // namespace nsbg::model
