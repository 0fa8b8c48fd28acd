#pragma once

#include <cstddef>
#include <vector>

namespace mcg::kernels {

// Row-major GEMM variants. All accumulate into C (C += op(A)·op(B)); callers
// zero C first when they want assignment. Inner loops run over contiguous
// columns so they vectorize without reassociating reductions.

/// C[M×N] += A[M×K] · B[K×N]
template <class T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t i = 0; i < M; ++i) {
    T* crow = C + i * N;
    const T* arow = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const T a = arow[k];
      if (a == T{0}) continue;
      const T* brow = B + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

/// C[M×N] += Aᵀ · B with A stored K×M, B stored K×N.
template <class T>
void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const T* arow = A + k * M;
    const T* brow = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const T a = arow[i];
      if (a == T{0}) continue;
      T* crow = C + i * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += a * brow[j];
    }
  }
}

/// C[M×N] += A · Bᵀ with A stored M×K, B stored N×K.
template <class T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  std::vector<T> bt(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_nn(M, N, K, A, bt.data(), C);
}

}  // namespace mcg::kernels
