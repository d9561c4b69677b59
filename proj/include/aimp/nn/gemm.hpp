#pragma once

// Row-major matrix products. Every routine accumulates into C. The float and
// double paths call single-threaded CBLAS; the loops in `naive` are the
// reference they are tested against.

#include <cblas.h>

#include <cstddef>
#include <mutex>
#include <type_traits>

namespace aimp::nn {

namespace naive {

/// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < K; ++k) {
      const T a = A[i * K + k];
      for (std::size_t j = 0; j < N; ++j) C[i * N + j] += a * B[k * N + j];
    }
  }
}

/// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < M; ++i) {
      const T a = A[k * M + i];
      for (std::size_t j = 0; j < N; ++j) C[i * N + j] += a * B[k * N + j];
    }
  }
}

/// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      T acc = 0;
      for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[j * K + k];
      C[i * N + j] += acc;
    }
  }
}

}  // namespace naive

namespace detail {

// Results must not depend on how many threads the BLAS happens to start.
inline void pin_blas_threads() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

template <typename T>
void blas_gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, std::size_t M, std::size_t N, std::size_t K, const T* A,
               std::size_t lda, const T* B, std::size_t ldb, T* C) {
  if (M == 0 || N == 0 || K == 0) return;
  pin_blas_threads();
  const auto m = static_cast<blasint>(M), n = static_cast<blasint>(N), k = static_cast<blasint>(K);
  const auto la = static_cast<blasint>(lda), lb = static_cast<blasint>(ldb);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, 1.0f, A, la, B, lb, 1.0f, C, n);
  } else {
    static_assert(std::is_same_v<T, double>, "gemm supports float and double");
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, 1.0, A, la, B, lb, 1.0, C, n);
  }
}

}  // namespace detail

/// C[M x N] += A[M x K] * B[K x N]
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  detail::blas_gemm(CblasNoTrans, CblasNoTrans, M, N, K, A, K, B, N, C);
}

/// C[M x N] += A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  detail::blas_gemm(CblasTrans, CblasNoTrans, M, N, K, A, M, B, N, C);
}

/// C[M x N] += A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  detail::blas_gemm(CblasNoTrans, CblasTrans, M, N, K, A, K, B, K, C);
}

}  // namespace aimp::nn
