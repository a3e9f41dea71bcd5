#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>

#include "nsbg/error.hpp"

namespace nsbg::dsp {

// Thin FFTW wrapper with per-size cached plans. Plans use FFTW_ESTIMATE so
// the chosen algorithm, and therefore every output bit, is reproducible.
class Fft {
 public:
  using cplx = std::complex<double>;

  // Real-to-complex forward transform; `out` receives n/2+1 bins.
  static void forward_real(const double* in, std::size_t n, cplx* out) {
    auto& f = instance();
    std::lock_guard lock(f.mu_);
    f.plan(n).r2c(in, out);
  }

  // Unnormalized complex inverse: out[t] = sum_k in[k] exp(+2 pi i k t / n).
  static void inverse_complex(const cplx* in, std::size_t n, cplx* out) {
    auto& f = instance();
    std::lock_guard lock(f.mu_);
    f.plan(n).c2c_inv(in, out);
  }

 private:
  struct Plan {
    std::size_t n;
    double* rbuf;
    fftw_complex* cbuf;
    fftw_complex* cbuf2;
    fftw_plan r2c_plan;
    fftw_plan inv_plan;

    explicit Plan(std::size_t size) : n(size) {
      rbuf = fftw_alloc_real(n);
      cbuf = fftw_alloc_complex(n);
      cbuf2 = fftw_alloc_complex(n);
      r2c_plan = fftw_plan_dft_r2c_1d(int(n), rbuf, cbuf, FFTW_ESTIMATE);
      inv_plan = fftw_plan_dft_1d(int(n), cbuf, cbuf2, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    ~Plan() {
      fftw_destroy_plan(r2c_plan);
      fftw_destroy_plan(inv_plan);
      fftw_free(rbuf);
      fftw_free(cbuf);
      fftw_free(cbuf2);
    }
    Plan(const Plan&) = delete;
    Plan& operator=(const Plan&) = delete;

    void r2c(const double* in, cplx* out) {
      std::copy(in, in + n, rbuf);
      fftw_execute(r2c_plan);
      for (std::size_t k = 0; k <= n / 2; ++k) out[k] = {cbuf[k][0], cbuf[k][1]};
    }
    void c2c_inv(const cplx* in, cplx* out) {
      for (std::size_t k = 0; k < n; ++k) {
        cbuf[k][0] = in[k].real();
        cbuf[k][1] = in[k].imag();
      }
      fftw_execute(inv_plan);
      for (std::size_t k = 0; k < n; ++k) out[k] = {cbuf2[k][0], cbuf2[k][1]};
    }
  };

  static Fft& instance() {
    static Fft f;
    return f;
  }

  // Caller holds mu_.
  Plan& plan(std::size_t n) {
    if (n == 0) throw UsageError("FFT size must be positive");
    auto it = plans_.find(n);
    if (it == plans_.end()) it = plans_.emplace(n, std::make_unique<Plan>(n)).first;
    return *it->second;
  }

  std::mutex mu_;
  std::map<std::size_t, std::unique_ptr<Plan>> plans_;
};

}  // namespace nsbg::dsp
