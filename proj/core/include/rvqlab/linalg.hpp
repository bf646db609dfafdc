#pragma once

#include <cstddef>
#include <vector>

namespace rvqlab {

// Row-major dense kernels shared by the autodiff ops, the DCT transform and
// k-means. Plain loops; the inner dimension is contiguous so the compiler
// vectorizes them.

// C[m x n] = A[m x k] * B[k x n], accumulating into C (caller zeroes C).
inline void gemm_nn_acc(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// Dot product with 32 interleaved accumulators. The summation order is fixed
// (results are deterministic) but unlike a single running sum it has no
// loop-carried dependency, so it vectorizes without -ffast-math.
inline double dot_fast(const double* a, const double* b, std::size_t n) {
    double acc[32] = {0.0};
    const std::size_t limit = n & ~static_cast<std::size_t>(31);
    std::size_t i = 0;
    for (; i < limit; i += 32)
        for (std::size_t j = 0; j < 32; ++j) acc[j] += a[i + j] * b[i + j];
    double rest = 0.0;
    for (; i < n; ++i) rest += a[i] * b[i];
    double total = 0.0;
    for (std::size_t j = 0; j < 32; ++j) total += acc[j];
    return total + rest;
}

inline double squared_distance_fast(const double* a, const double* b,
                                    std::size_t n) {
    double acc[32] = {0.0};
    const std::size_t limit = n & ~static_cast<std::size_t>(31);
    std::size_t i = 0;
    for (; i < limit; i += 32)
        for (std::size_t j = 0; j < 32; ++j) {
            const double d = a[i + j] - b[i + j];
            acc[j] += d * d;
        }
    double rest = 0.0;
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        rest += d * d;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < 32; ++j) total += acc[j];
    return total + rest;
}

// C[m x n] = A[m x k] * B[n x k]^T, accumulating into C.
inline void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += dot_fast(arow, b + j * k, k);
    }
}

// C[m x n] = A[k x m]^T * B[k x n], accumulating into C.
inline void gemm_tn_acc(std::size_t m, std::size_t n, std::size_t k,
                        const double* a, const double* b, double* c) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

inline double squared_norm(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * a[i];
    return acc;
}

inline double squared_distance(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

}  // namespace rvqlab
