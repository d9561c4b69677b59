#pragma once

// Thin RAII layer over FFTW for the real transforms used by the DSP code.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace aimp {

namespace detail {
// FFTW's planner is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Forward/inverse real transform of a fixed size n with private buffers.
class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    if (n == 0) throw std::invalid_argument("RealFft size must be positive");
    real_ = static_cast<double*>(fftw_malloc(sizeof(double) * n));
    spec_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)));
    std::lock_guard lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), real_, spec_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(static_cast<int>(n), spec_, real_, FFTW_ESTIMATE);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  ~RealFft() {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(spec_);
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t bins() const noexcept { return n_ / 2 + 1; }

  /// Transform `input` zero-padded (or truncated) to n; writes n/2+1 bins.
  void forward(std::span<const double> input, std::span<std::complex<double>> out) {
    const std::size_t m = std::min(input.size(), n_);
    std::copy_n(input.begin(), m, real_);
    std::fill(real_ + m, real_ + n_, 0.0);
    fftw_execute(forward_);
    for (std::size_t k = 0; k < bins(); ++k) out[k] = {spec_[k][0], spec_[k][1]};
  }

  /// Squared magnitude of the forward transform.
  void power(std::span<const double> input, std::span<double> out) {
    const std::size_t m = std::min(input.size(), n_);
    std::copy_n(input.begin(), m, real_);
    std::fill(real_ + m, real_ + n_, 0.0);
    fftw_execute(forward_);
    for (std::size_t k = 0; k < bins(); ++k) out[k] = spec_[k][0] * spec_[k][0] + spec_[k][1] * spec_[k][1];
  }

  /// Unnormalized inverse: the result is n times the true inverse.
  void inverse(std::span<const std::complex<double>> in, std::span<double> out) {
    for (std::size_t k = 0; k < bins(); ++k) {
      spec_[k][0] = in[k].real();
      spec_[k][1] = in[k].imag();
    }
    fftw_execute(inverse_);
    std::copy_n(real_, n_, out.begin());
  }

 private:
  std::size_t n_;
  double* real_ = nullptr;
  fftw_complex* spec_ = nullptr;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

/// Per-thread cached transform of size n.
inline RealFft& cached_fft(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Full linear convolution (length a+b-1) computed through the FFT.
inline std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(out_len);
  RealFft fft(n);
  std::vector<std::complex<double>> fa(fft.bins()), fb(fft.bins());
  fft.forward(a, fa);
  fft.forward(b, fb);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  std::vector<double> full(n);
  fft.inverse(fa, full);
  full.resize(out_len);
  const double scale = 1.0 / static_cast<double>(n);
  for (double& x : full) x *= scale;
  return full;
}

}  // namespace aimp
