#pragma once

#include <cstdint>

namespace macu {

// Small row-major GEMM kernels backing the im2col convolution paths. All
// three accumulate into C. The n-loop is innermost and contiguous so the
// compiler vectorizes it; B is walked in row order. The nb blocking keeps the
// active B slice L2-resident for the large column counts produced by im2col.

inline constexpr int64_t kGemmBlockN = 2048;

// C[m,n] += sum_k A[m,k] * B[k,n]
template <typename T>
void gemm_nn(int64_t M, int64_t K, int64_t N, const T* A, const T* B, T* C) {
  for (int64_t n0 = 0; n0 < N; n0 += kGemmBlockN) {
    int64_t n1 = n0 + kGemmBlockN < N ? n0 + kGemmBlockN : N;
    for (int64_t m = 0; m < M; ++m) {
      T* c = C + m * N;
      const T* a = A + m * K;
      for (int64_t k = 0; k < K; ++k) {
        const T av = a[k];
        if (av == T(0)) continue;
        const T* b = B + k * N;
        for (int64_t n = n0; n < n1; ++n) c[n] += av * b[n];
      }
    }
  }
}

// C[m,j] += sum_k A[m,k] * B[j,k]   (B transposed; dot products over k)
template <typename T>
void gemm_nt(int64_t M, int64_t K, int64_t J, const T* A, const T* B, T* C) {
  for (int64_t m = 0; m < M; ++m) {
    const T* a = A + m * K;
    for (int64_t j = 0; j < J; ++j) {
      const T* b = B + j * K;
      T acc = T(0);
      for (int64_t k = 0; k < K; ++k) acc += a[k] * b[k];
      C[m * J + j] += acc;
    }
  }
}

// C[k,n] += sum_m A[m,k] * B[m,n]   (A transposed)
template <typename T>
void gemm_tn(int64_t M, int64_t K, int64_t N, const T* A, const T* B, T* C) {
  for (int64_t n0 = 0; n0 < N; n0 += kGemmBlockN) {
    int64_t n1 = n0 + kGemmBlockN < N ? n0 + kGemmBlockN : N;
    for (int64_t m = 0; m < M; ++m) {
      const T* a = A + m * K;
      const T* b = B + m * N;
      for (int64_t k = 0; k < K; ++k) {
        const T av = a[k];
        if (av == T(0)) continue;
        T* c = C + k * N;
        for (int64_t n = n0; n < n1; ++n) c[n] += av * b[n];
      }
    }
  }
}

}  // namespace macu
