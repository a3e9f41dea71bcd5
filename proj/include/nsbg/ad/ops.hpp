#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "nsbg/ad/tensor.hpp"

namespace nsbg::ad {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using CMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

// Elementwise unary op with derivative d(x, y) evaluated from input and output.
template <class T, class F, class D>
Tensor<T> unary(const Tensor<T>& a, F f, D d) {
  std::vector<T> out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [d](Node<T>& self) {
    T* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (T* g = parent_grad(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (T* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (T* g = parent_grad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope = T(0.2)) {
  return detail::unary(
      a, [slope](T x) { return x > T(0) ? x : slope * x; }, [slope](T x, T) { return x > T(0) ? T(1) : slope; });
}

// log10(max(x, floor)); zero gradient where the clamp is active.
template <class T>
Tensor<T> log10_clamped(const Tensor<T>& a, T floor) {
  const T inv_ln10 = T(1) / std::log(T(10));
  return detail::unary(
      a, [floor](T x) { return std::log10(std::max(x, floor)); },
      [floor, inv_ln10](T x, T) { return x > floor ? inv_ln10 / x : T(0); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& a) {
  T acc = T(0);
  for (T v : a.values()) acc += v;
  return make_result(Shape{1}, std::vector<T>{acc}, {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / T(a.numel()));
}

// mean(|a - b|)
template <class T>
Tensor<T> mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mean_abs_diff");
  const std::size_t n = a.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a[i] - b[i]);
  return make_result(Shape{1}, std::vector<T>{acc / T(n)}, {a, b}, [n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T g = self.grad[0] / T(n);
    T* ga = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = av[i] - bv[i];
      const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
      if (ga) ga[i] += s;
      if (gb) gb[i] -= s;
    }
  });
}

// mean((a - b)^2)
template <class T>
Tensor<T> mean_sq_diff(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mean_sq_diff");
  const std::size_t n = a.numel();
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return make_result(Shape{1}, std::vector<T>{acc / T(n)}, {a, b}, [n](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    const T g = T(2) * self.grad[0] / T(n);
    T* ga = parent_grad(self, 0);
    T* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = g * (av[i] - bv[i]);
      if (ga) ga[i] += d;
      if (gb) gb[i] -= d;
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape) + " changes element count");
  return make_result(std::move(shape), a.values(), {a}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {
// Splits a shape around `axis` into (outer, extent, inner) strides.
inline void axis_split(const Shape& s, std::size_t axis, std::size_t& outer, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

// a[..., start:start+count, ...] along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t count) {
  if (axis >= a.rank() || start + count > a.dim(axis))
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + count) + ") out of range on axis " +
                     std::to_string(axis) + " of " + to_string(a.shape()));
  std::size_t outer, inner;
  detail::axis_split(a.shape(), axis, outer, inner);
  const std::size_t extent = a.dim(axis);
  Shape shape = a.shape();
  shape[axis] = count;
  std::vector<T> out(outer * count * inner);
  const auto& x = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.begin() + long((o * extent + start) * inner), count * inner, out.begin() + long(o * count * inner));
  return make_result(std::move(shape), std::move(out), {a}, [=](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < count * inner; ++i) g[(o * extent + start) * inner + i] += self.grad[o * count * inner + i];
  });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of empty list");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != ref.size()) throw ShapeError("concat rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (i != axis && p.dim(i) != ref[i]) throw ShapeError("concat shape mismatch " + to_string(p.shape()) + " vs " + to_string(ref));
    total += p.dim(axis);
  }
  std::size_t outer, inner;
  detail::axis_split(ref, axis, outer, inner);
  Shape shape = ref;
  shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t ext = p.dim(axis);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.values().begin() + long(o * ext * inner), ext * inner,
                  out.begin() + long((o * total + off) * inner));
    off += ext;
  }
  std::vector<std::size_t> extents;
  for (const auto& p : parts) extents.push_back(p.dim(axis));
  return make_result_n<T>(std::move(shape), std::move(out), parts, [=](Node<T>& self) {
    for (std::size_t k = 0; k < extents.size(); ++k) {
      T* g = parent_grad(self, k);
      if (!g) continue;
      const std::size_t ext = extents[k];
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < ext * inner; ++i) g[o * ext * inner + i] += self.grad[(o * total + offsets[k]) * inner + i];
    }
  });
}

// Swaps the first two axes of a rank-3 tensor.
template <class T>
Tensor<T> swap01(const Tensor<T>& a) {
  if (a.rank() != 3) throw ShapeError("swap01 expects rank 3");
  const std::size_t A = a.dim(0), B = a.dim(1), C = a.dim(2);
  std::vector<T> out(a.numel());
  const auto& x = a.values();
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j) std::copy_n(x.begin() + long((i * B + j) * C), C, out.begin() + long((j * A + i) * C));
  return make_result(Shape{B, A, C}, std::move(out), {a}, [=](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < A; ++i)
        for (std::size_t j = 0; j < B; ++j)
          for (std::size_t c = 0; c < C; ++c) g[(i * B + j) * C + c] += self.grad[(j * A + i) * C + c];
  });
}

// Zero-pads (or crops) the last axis to `len`.
template <class T>
Tensor<T> resize_last(const Tensor<T>& a, std::size_t len) {
  const std::size_t inner = a.shape().back();
  const std::size_t outer = a.numel() / inner;
  Shape shape = a.shape();
  shape.back() = len;
  std::vector<T> out(outer * len, T(0));
  const std::size_t keep = std::min(inner, len);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(a.values().begin() + long(o * inner), keep, out.begin() + long(o * len));
  return make_result(std::move(shape), std::move(out), {a}, [=](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < keep; ++i) g[o * inner + i] += self.grad[o * len + i];
  });
}

// Repeats each step of the last axis `factor` times: [C, T] -> [C, T * factor].
template <class T>
Tensor<T> repeat_last(const Tensor<T>& a, std::size_t factor) {
  const std::size_t inner = a.shape().back();
  const std::size_t outer = a.numel() / inner;
  Shape shape = a.shape();
  shape.back() = inner * factor;
  std::vector<T> out(a.numel() * factor);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t t = 0; t < inner; ++t)
      std::fill_n(out.begin() + long((o * inner + t) * factor), factor, a[o * inner + t]);
  return make_result(std::move(shape), std::move(out), {a}, [=](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < inner; ++t) {
          T acc = T(0);
          for (std::size_t r = 0; r < factor; ++r) acc += self.grad[(o * inner + t) * factor + r];
          g[o * inner + t] += acc;
        }
  });
}

// Per-timestep affine modulation: out[c, ..., t] = gamma[c, t] * a[c, ..., t] + beta[c, t].
template <class T>
Tensor<T> modulate(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta) {
  detail::require_same_shape(gamma, beta, "modulate");
  if (gamma.rank() != 2 || a.rank() < 2 || gamma.dim(0) != a.dim(0) || gamma.dim(1) != a.shape().back())
    throw ShapeError("modulate: parameters " + to_string(gamma.shape()) + " do not match activation " + to_string(a.shape()));
  const std::size_t C = a.dim(0), Tn = a.shape().back();
  const std::size_t mid = a.numel() / (C * Tn);
  std::vector<T> out(a.numel());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < mid; ++m)
      for (std::size_t t = 0; t < Tn; ++t) {
        const std::size_t i = (c * mid + m) * Tn + t;
        out[i] = gamma[c * Tn + t] * a[i] + beta[c * Tn + t];
      }
  return make_result(a.shape(), std::move(out), {a, gamma, beta}, [=](Node<T>& self) {
    const auto& av = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    T* ga = parent_grad(self, 0);
    T* gg = parent_grad(self, 1);
    T* gb = parent_grad(self, 2);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < mid; ++m)
        for (std::size_t t = 0; t < Tn; ++t) {
          const std::size_t i = (c * mid + m) * Tn + t;
          const T g = self.grad[i];
          if (ga) ga[i] += g * gv[c * Tn + t];
          if (gg) gg[c * Tn + t] += g * av[i];
          if (gb) gb[c * Tn + t] += g;
        }
  });
}

// Forward value of q, gradient routed to z unchanged (straight-through).
template <class T>
Tensor<T> straight_through(const Tensor<T>& z, const Tensor<T>& q) {
  detail::require_same_shape(z, q, "straight_through");
  return make_result(z.shape(), q.values(), {z}, [](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// [m, k] x [k, n] -> [m, n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto m = Eigen::Index(a.dim(0)), k = Eigen::Index(a.dim(1)), n = Eigen::Index(b.dim(1));
  std::vector<T> out(std::size_t(m * n));
  MatMap<T>(out.data(), m, n).noalias() = CMatMap<T>(a.data().data(), m, k) * CMatMap<T>(b.data().data(), k, n);
  return make_result(Shape{std::size_t(m), std::size_t(n)}, std::move(out), {a, b}, [=](Node<T>& self) {
    CMatMap<T> G(self.grad.data(), m, n);
    if (T* g = parent_grad(self, 0))
      MatMap<T>(g, m, k).noalias() += G * CMatMap<T>(self.parents[1]->value.data(), k, n).transpose();
    if (T* g = parent_grad(self, 1))
      MatMap<T>(g, k, n).noalias() += CMatMap<T>(self.parents[0]->value.data(), m, k).transpose() * G;
  });
}

// table [rows, dim], indices [n] -> [dim, n] (column j = table row indices[j]).
template <class T>
Tensor<T> gather_columns(const Tensor<T>& table, const std::vector<std::int32_t>& indices) {
  if (table.rank() != 2) throw ShapeError("gather_columns expects a rank-2 table");
  const std::size_t rows = table.dim(0), dim = table.dim(1), n = indices.size();
  std::vector<T> out(dim * n);
  for (std::size_t j = 0; j < n; ++j) {
    if (indices[j] < 0 || std::size_t(indices[j]) >= rows) throw FormatError("code index out of range");
    for (std::size_t d = 0; d < dim; ++d) out[d * n + j] = table[std::size_t(indices[j]) * dim + d];
  }
  return make_result(Shape{dim, n}, std::move(out), {table}, [=](Node<T>& self) {
    if (T* g = parent_grad(self, 0))
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t d = 0; d < dim; ++d) g[std::size_t(indices[j]) * dim + d] += self.grad[d * n + j];
  });
}

}  // namespace nsbg::ad
