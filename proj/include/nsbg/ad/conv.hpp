#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <vector>

#include "nsbg/ad/ops.hpp"
#include "nsbg/ad/tensor.hpp"

namespace nsbg::ad {

// Convolutions are cross-correlations over row-major activations ([C, T] or
// [C, F, T]), lowered to a single GEMM through an im2col buffer. The buffer
// is rebuilt in backward instead of being kept alive with the graph.

struct Conv1dGeometry {
  std::size_t cin, cout, kernel, stride, dilation, pad_left, pad_right, t_in, t_out;

  Conv1dGeometry(std::size_t cin_, std::size_t cout_, std::size_t k, std::size_t s, std::size_t d, std::size_t pl,
                 std::size_t pr, std::size_t t)
      : cin(cin_), cout(cout_), kernel(k), stride(s), dilation(d), pad_left(pl), pad_right(pr), t_in(t) {
    if (stride < 1) throw UsageError("convolution stride must be >= 1");
    if (dilation < 1) throw UsageError("convolution dilation must be >= 1");
    const std::size_t span = (kernel - 1) * dilation + 1;
    if (t_in + pad_left + pad_right < span) throw ShapeError("conv1d input shorter than kernel span");
    t_out = (t_in + pad_left + pad_right - span) / stride + 1;
  }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad_left == 0 && pad_right == 0; }
};

namespace detail {

template <class T>
void im2col_1d(const T* x, const Conv1dGeometry& g, T* cols) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t k = 0; k < g.kernel; ++k) {
      T* row = cols + (c * g.kernel + k) * g.t_out;
      const long off = long(k * g.dilation) - long(g.pad_left);
      for (std::size_t t = 0; t < g.t_out; ++t) {
        const long n = long(t * g.stride) + off;
        row[t] = (n >= 0 && n < long(g.t_in)) ? x[c * g.t_in + std::size_t(n)] : T(0);
      }
    }
}

template <class T>
void col2im_1d(const T* cols, const Conv1dGeometry& g, T* dx) {
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t k = 0; k < g.kernel; ++k) {
      const T* row = cols + (c * g.kernel + k) * g.t_out;
      const long off = long(k * g.dilation) - long(g.pad_left);
      for (std::size_t t = 0; t < g.t_out; ++t) {
        const long n = long(t * g.stride) + off;
        if (n >= 0 && n < long(g.t_in)) dx[c * g.t_in + std::size_t(n)] += row[t];
      }
    }
}

template <class T>
void add_bias_rows(T* out, const Tensor<T>& bias, std::size_t rows, std::size_t cols) {
  if (!bias.defined()) return;
  if (bias.numel() != rows) throw ShapeError("bias length mismatch");
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias[r];
}

template <class T>
void bias_grad(Node<T>& self, std::size_t parent, std::size_t rows, std::size_t cols) {
  if (self.parents.size() <= parent) return;
  T* gb = parent_grad(self, parent);
  if (!gb) return;
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = T(0);
    for (std::size_t c = 0; c < cols; ++c) acc += self.grad[r * cols + c];
    gb[r] += acc;
  }
}

}  // namespace detail

// x [Cin, T], w [Cout, Cin, K], optional bias [Cout].
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride, std::size_t dilation,
                 std::size_t pad_left, std::size_t pad_right) {
  if (x.rank() != 2 || w.rank() != 3 || w.dim(1) != x.dim(0))
    throw ShapeError("conv1d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  const Conv1dGeometry g(w.dim(1), w.dim(0), w.dim(2), stride, dilation, pad_left, pad_right, x.dim(1));
  const auto rows = Eigen::Index(g.cin * g.kernel), tout = Eigen::Index(g.t_out), cout = Eigen::Index(g.cout);
  std::vector<T> out(g.cout * g.t_out);
  if (g.is_pointwise()) {
    MatMap<T>(out.data(), cout, tout).noalias() =
        CMatMap<T>(w.data().data(), cout, rows) * CMatMap<T>(x.data().data(), rows, tout);
  } else {
    std::vector<T> cols(std::size_t(rows * tout));
    detail::im2col_1d(x.data().data(), g, cols.data());
    MatMap<T>(out.data(), cout, tout).noalias() = CMatMap<T>(w.data().data(), cout, rows) * CMatMap<T>(cols.data(), rows, tout);
  }
  detail::add_bias_rows(out.data(), bias, g.cout, g.t_out);
  return make_result(Shape{g.cout, g.t_out}, std::move(out), {x, w, bias}, [g](Node<T>& self) {
    const auto rows = Eigen::Index(g.cin * g.kernel), tout = Eigen::Index(g.t_out), cout = Eigen::Index(g.cout);
    CMatMap<T> G(self.grad.data(), cout, tout);
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    T* gx = parent_grad(self, 0);
    T* gw = parent_grad(self, 1);
    if (g.is_pointwise()) {
      if (gw) MatMap<T>(gw, cout, rows).noalias() += G * CMatMap<T>(xv.data(), rows, tout).transpose();
      if (gx) MatMap<T>(gx, rows, tout).noalias() += CMatMap<T>(wv.data(), cout, rows).transpose() * G;
    } else {
      std::vector<T> cols(std::size_t(rows * tout));
      if (gw) {
        detail::im2col_1d(xv.data(), g, cols.data());
        MatMap<T>(gw, cout, rows).noalias() += G * CMatMap<T>(cols.data(), rows, tout).transpose();
      }
      if (gx) {
        MatMap<T>(cols.data(), rows, tout).noalias() = CMatMap<T>(wv.data(), cout, rows).transpose() * G;
        detail::col2im_1d(cols.data(), g, gx);
      }
    }
    detail::bias_grad(self, 2, g.cout, g.t_out);
  });
}

// Causal 1D convolution: left padding (K-1)*dilation, output length ceil(T/stride).
// Output t depends only on inputs at indices <= t*stride.
template <class T>
Tensor<T> causal_conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride = 1,
                        std::size_t dilation = 1) {
  if (stride < 1) throw UsageError("convolution stride must be >= 1");
  if (w.rank() != 3) throw ShapeError("conv1d weight must be rank 3");
  return conv1d(x, w, bias, stride, dilation, (w.dim(2) - 1) * dilation, 0);
}

// Transposed convolution. x [Cin, Tin], w [Cin, Cout, K]; the full output
// ((Tin-1)*stride + K samples) is cropped to its first `out_len` samples, so
// output n depends only on inputs i with i*stride <= n.
template <class T>
Tensor<T> conv_transpose1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                           std::size_t out_len) {
  if (stride < 1) throw UsageError("convolution stride must be >= 1");
  if (x.rank() != 2 || w.rank() != 3 || w.dim(0) != x.dim(0))
    throw ShapeError("conv_transpose1d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  const std::size_t cin = w.dim(0), cout = w.dim(1), K = w.dim(2), tin = x.dim(1);
  const auto ci = Eigen::Index(cin), ck = Eigen::Index(cout * K), ti = Eigen::Index(tin);
  std::vector<T> cols(cout * K * tin);
  MatMap<T>(cols.data(), ck, ti).noalias() = CMatMap<T>(w.data().data(), ci, ck).transpose() * CMatMap<T>(x.data().data(), ci, ti);
  std::vector<T> out(cout * out_len, T(0));
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t k = 0; k < K; ++k) {
      const T* row = cols.data() + (co * K + k) * tin;
      for (std::size_t t = 0; t < tin; ++t) {
        const std::size_t n = t * stride + k;
        if (n < out_len) out[co * out_len + n] += row[t];
      }
    }
  detail::add_bias_rows(out.data(), bias, cout, out_len);
  return make_result(Shape{cout, out_len}, std::move(out), {x, w, bias}, [=](Node<T>& self) {
    std::vector<T> dcols(cout * K * tin, T(0));
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t k = 0; k < K; ++k) {
        T* row = dcols.data() + (co * K + k) * tin;
        for (std::size_t t = 0; t < tin; ++t) {
          const std::size_t n = t * stride + k;
          if (n < out_len) row[t] = self.grad[co * out_len + n];
        }
      }
    CMatMap<T> D(dcols.data(), ck, ti);
    if (T* gx = parent_grad(self, 0))
      MatMap<T>(gx, ci, ti).noalias() += CMatMap<T>(self.parents[1]->value.data(), ci, ck) * D;
    if (T* gw = parent_grad(self, 1))
      MatMap<T>(gw, ci, ck).noalias() += CMatMap<T>(self.parents[0]->value.data(), ci, ti) * D.transpose();
    detail::bias_grad(self, 2, cout, out_len);
  });
}

struct Conv2dGeometry {
  std::size_t cin, cout, kf, kt, sf, st, pf_lo, pf_hi, pt_lo, pt_hi, f_in, t_in, f_out, t_out;

  Conv2dGeometry(std::size_t cin_, std::size_t cout_, std::size_t kf_, std::size_t kt_, std::size_t sf_, std::size_t st_,
                 std::size_t pfl, std::size_t pfh, std::size_t ptl, std::size_t pth, std::size_t f, std::size_t t)
      : cin(cin_), cout(cout_), kf(kf_), kt(kt_), sf(sf_), st(st_), pf_lo(pfl), pf_hi(pfh), pt_lo(ptl), pt_hi(pth),
        f_in(f), t_in(t) {
    if (sf < 1 || st < 1) throw UsageError("convolution stride must be >= 1");
    if (f_in + pf_lo + pf_hi < kf || t_in + pt_lo + pt_hi < kt) throw ShapeError("conv2d input smaller than kernel");
    f_out = (f_in + pf_lo + pf_hi - kf) / sf + 1;
    t_out = (t_in + pt_lo + pt_hi - kt) / st + 1;
  }
  std::size_t rows() const { return cin * kf * kt; }
  std::size_t positions() const { return f_out * t_out; }
};

namespace detail {

template <class T, bool Scatter>
void im2col_2d(std::conditional_t<Scatter, T*, const T*> x, const Conv2dGeometry& g,
               std::conditional_t<Scatter, const T*, T*> cols) {
  const std::size_t P = g.positions();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t a = 0; a < g.kf; ++a)
      for (std::size_t b = 0; b < g.kt; ++b) {
        const std::size_t r = (c * g.kf + a) * g.kt + b;
        auto row = cols + r * P;
        for (std::size_t fo = 0; fo < g.f_out; ++fo) {
          const long f = long(fo * g.sf + a) - long(g.pf_lo);
          const bool fin = f >= 0 && f < long(g.f_in);
          for (std::size_t to = 0; to < g.t_out; ++to) {
            const long t = long(to * g.st + b) - long(g.pt_lo);
            const bool ok = fin && t >= 0 && t < long(g.t_in);
            const std::size_t p = fo * g.t_out + to;
            if constexpr (Scatter) {
              if (ok) x[(c * g.f_in + std::size_t(f)) * g.t_in + std::size_t(t)] += row[p];
            } else {
              row[p] = ok ? x[(c * g.f_in + std::size_t(f)) * g.t_in + std::size_t(t)] : T(0);
            }
          }
        }
      }
}

}  // namespace detail

// x [Cin, F, T], w [Cout, Cin, KF, KT], optional bias [Cout].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t sf, std::size_t st,
                 std::size_t pf_lo, std::size_t pf_hi, std::size_t pt_lo, std::size_t pt_hi) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with weight " + to_string(w.shape()));
  const Conv2dGeometry g(w.dim(1), w.dim(0), w.dim(2), w.dim(3), sf, st, pf_lo, pf_hi, pt_lo, pt_hi, x.dim(1), x.dim(2));
  const auto R = Eigen::Index(g.rows()), P = Eigen::Index(g.positions()), Co = Eigen::Index(g.cout);
  std::vector<T> out(g.cout * g.positions());
  const bool pointwise = g.kf == 1 && g.kt == 1 && g.sf == 1 && g.st == 1 && pf_lo + pf_hi + pt_lo + pt_hi == 0;
  if (pointwise) {
    MatMap<T>(out.data(), Co, P).noalias() = CMatMap<T>(w.data().data(), Co, R) * CMatMap<T>(x.data().data(), R, P);
  } else {
    std::vector<T> cols(std::size_t(R * P));
    detail::im2col_2d<T, false>(x.data().data(), g, cols.data());
    MatMap<T>(out.data(), Co, P).noalias() = CMatMap<T>(w.data().data(), Co, R) * CMatMap<T>(cols.data(), R, P);
  }
  detail::add_bias_rows(out.data(), bias, g.cout, g.positions());
  return make_result(Shape{g.cout, g.f_out, g.t_out}, std::move(out), {x, w, bias}, [g, pointwise](Node<T>& self) {
    const auto R = Eigen::Index(g.rows()), P = Eigen::Index(g.positions()), Co = Eigen::Index(g.cout);
    CMatMap<T> G(self.grad.data(), Co, P);
    const auto& xv = self.parents[0]->value;
    const auto& wv = self.parents[1]->value;
    T* gx = parent_grad(self, 0);
    T* gw = parent_grad(self, 1);
    if (pointwise) {
      if (gw) MatMap<T>(gw, Co, R).noalias() += G * CMatMap<T>(xv.data(), R, P).transpose();
      if (gx) MatMap<T>(gx, R, P).noalias() += CMatMap<T>(wv.data(), Co, R).transpose() * G;
    } else {
      std::vector<T> cols(std::size_t(R * P));
      if (gw) {
        detail::im2col_2d<T, false>(xv.data(), g, cols.data());
        MatMap<T>(gw, Co, R).noalias() += G * CMatMap<T>(cols.data(), R, P).transpose();
      }
      if (gx) {
        MatMap<T>(cols.data(), R, P).noalias() = CMatMap<T>(wv.data(), Co, R).transpose() * G;
        detail::im2col_2d<T, true>(gx, g, cols.data());
      }
    }
    detail::bias_grad(self, 2, g.cout, g.positions());
  });
}

// Encoder convolution: causal along T (left pad KT-1), symmetric "same"
// padding along F. Requires F divisible by the frequency stride.
template <class T>
Tensor<T> causal_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride_f,
                        std::size_t stride_t = 1) {
  if (stride_f < 1 || stride_t < 1) throw UsageError("convolution stride must be >= 1");
  if (x.rank() != 3 || w.rank() != 4) throw ShapeError("causal_conv2d expects [C,F,T] input and rank-4 weight");
  if (x.dim(1) % stride_f != 0)
    throw ShapeError("frequency extent " + std::to_string(x.dim(1)) + " not divisible by stride " + std::to_string(stride_f));
  const std::size_t kf = w.dim(2), kt = w.dim(3);
  const std::size_t pad_total = kf - 1;
  // For stride 2 and odd kernels this yields exactly F / stride_f rows.
  return conv2d(x, w, bias, stride_f, stride_t, pad_total / 2, pad_total - pad_total / 2, kt - 1, 0);
}

// Max pooling with -inf padding. x [C, F, T].
template <class T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t kf, std::size_t kt, std::size_t sf, std::size_t st, std::size_t pf_lo,
                     std::size_t pf_hi, std::size_t pt_lo, std::size_t pt_hi) {
  if (x.rank() != 3) throw ShapeError("max_pool2d expects [C,F,T]");
  const Conv2dGeometry g(x.dim(0), x.dim(0), kf, kt, sf, st, pf_lo, pf_hi, pt_lo, pt_hi, x.dim(1), x.dim(2));
  const std::size_t C = x.dim(0);
  std::vector<T> out(C * g.positions());
  std::vector<std::size_t> arg(out.size());
  const auto& xv = x.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t fo = 0; fo < g.f_out; ++fo)
      for (std::size_t to = 0; to < g.t_out; ++to) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = std::numeric_limits<std::size_t>::max();
        for (std::size_t a = 0; a < kf; ++a) {
          const long f = long(fo * sf + a) - long(pf_lo);
          if (f < 0 || f >= long(g.f_in)) continue;
          for (std::size_t b = 0; b < kt; ++b) {
            const long t = long(to * st + b) - long(pt_lo);
            if (t < 0 || t >= long(g.t_in)) continue;
            const std::size_t i = (c * g.f_in + std::size_t(f)) * g.t_in + std::size_t(t);
            if (xv[i] > best || best_i == std::numeric_limits<std::size_t>::max()) {
              best = xv[i];
              best_i = i;
            }
          }
        }
        const std::size_t o = (c * g.f_out + fo) * g.t_out + to;
        out[o] = best;
        arg[o] = best_i;
      }
  return make_result(Shape{C, g.f_out, g.t_out}, std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
    if (T* gx = parent_grad(self, 0))
      for (std::size_t o = 0; o < arg.size(); ++o)
        if (arg[o] != std::numeric_limits<std::size_t>::max()) gx[arg[o]] += self.grad[o];
  });
}

}  // namespace nsbg::ad
