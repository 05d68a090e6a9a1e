#pragma once

#include <algorithm>
#include <cstdint>

// Inner matrix kernels. Loop orders are fixed, so summation order — and with
// it every last bit of the result — is reproducible run to run.

namespace mtl::detail {

// C[MxN] (+)= A[MxK] · B[KxN]
inline void gemm_nn(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
                    std::int64_t N, bool accumulate) {
  if (!accumulate) std::fill(C, C + M * N, 0.0);
  for (std::int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C[MxN] (+)= A[MxK] · B[NxK]^T
inline void gemm_nt(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
                    std::int64_t N, bool accumulate) {
  for (std::int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    double* c = C + i * N;
    for (std::int64_t j = 0; j < N; ++j) {
      const double* b = B + j * K;
      double s = 0.0;
      for (std::int64_t k = 0; k < K; ++k) s += a[k] * b[k];
      c[j] = accumulate ? c[j] + s : s;
    }
  }
}

// C[KxN] (+)= A[MxK]^T · B[MxN]
inline void gemm_tn(const double* A, const double* B, double* C, std::int64_t M, std::int64_t K,
                    std::int64_t N, bool accumulate) {
  if (!accumulate) std::fill(C, C + K * N, 0.0);
  for (std::int64_t i = 0; i < M; ++i) {
    const double* a = A + i * K;
    const double* b = B + i * N;
    for (std::int64_t k = 0; k < K; ++k) {
      const double av = a[k];
      double* c = C + k * N;
      for (std::int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace mtl::detail
