// Copyright (c) 2026 retrans authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>

namespace retrans {

// Row-major double-precision matrix kernels. Loop orders are chosen so the
// inner loop vectorizes under -O3; these carry the bulk of training compute.

// C[M x N] (+)= A[M x K] * B[K x N]
inline void mm(double* C, const double* A, const double* B, size_t M, size_t K,
               size_t N, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, 0.0);
    for (size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (size_t k = 0; k < K; ++k) {
            double av = a[k];
            const double* b = B + k * N;
            for (size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[K x N] (+)= A[M x K]^T * B[M x N]
inline void mm_AtB(double* C, const double* A, const double* B, size_t M,
                   size_t K, size_t N, bool accumulate) {
    if (!accumulate) std::fill(C, C + K * N, 0.0);
    for (size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        const double* b = B + i * N;
        for (size_t k = 0; k < K; ++k) {
            double av = a[k];
            double* c = C + k * N;
            for (size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M x K] (+)= A[M x N] * B[K x N]^T
inline void mm_ABt(double* C, const double* A, const double* B, size_t M,
                   size_t N, size_t K, bool accumulate) {
    for (size_t i = 0; i < M; ++i) {
        const double* a = A + i * N;
        double* c = C + i * K;
        for (size_t k = 0; k < K; ++k) {
            const double* b = B + k * N;
            double acc = 0.0;
            for (size_t j = 0; j < N; ++j) acc += a[j] * b[j];
            c[k] = accumulate ? c[k] + acc : acc;
        }
    }
}

// X[i, :] += bias
inline void add_row_bias(double* X, const double* bias, size_t M, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        double* x = X + i * N;
        for (size_t j = 0; j < N; ++j) x[j] += bias[j];
    }
}

// db += column sums of dY
inline void bias_grad(double* db, const double* dY, size_t M, size_t N) {
    for (size_t i = 0; i < M; ++i) {
        const double* d = dY + i * N;
        for (size_t j = 0; j < N; ++j) db[j] += d[j];
    }
}

} // namespace retrans
