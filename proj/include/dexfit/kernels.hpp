#pragma once

#include <cstdint>

#include "dexfit/common.hpp"

#if defined(DEXFIT_HAVE_OPENMP)
#include <omp.h>
#endif

namespace dexfit {

// Dense row-major kernels. Every parallel kernel accumulates each output
// element in a fixed index order, so results are bit-identical to the
// serial reference for any thread count.

/// C[m,n] = A[m,k] * B[k,n], or += when accumulate is set.
void matmul_nn(double* C, const double* A, const double* B, std::int64_t m,
               std::int64_t k, std::int64_t n, bool accumulate = false);

/// C[m,n] = A[m,k] * B[n,k]^T.
void matmul_nt(double* C, const double* A, const double* B, std::int64_t m,
               std::int64_t k, std::int64_t n, bool accumulate = false);

/// C[m,n] = A[k,m]^T * B[k,n].
void matmul_tn(double* C, const double* A, const double* B, std::int64_t m,
               std::int64_t k, std::int64_t n, bool accumulate = false);

/// Serial reference implementations with identical semantics.
void matmul_nn_serial(double* C, const double* A, const double* B,
                      std::int64_t m, std::int64_t k, std::int64_t n,
                      bool accumulate = false);
void matmul_nt_serial(double* C, const double* A, const double* B,
                      std::int64_t m, std::int64_t k, std::int64_t n,
                      bool accumulate = false);
void matmul_tn_serial(double* C, const double* A, const double* B,
                      std::int64_t m, std::int64_t k, std::int64_t n,
                      bool accumulate = false);

/// Sum of x[0..n), chunked so the result does not depend on thread count.
double det_sum(const double* x, std::int64_t n);
double det_sum_serial(const double* x, std::int64_t n);

/// Dot product with the same chunked scheme as det_sum.
double det_dot(const double* x, const double* y, std::int64_t n);
double det_dot_serial(const double* x, const double* y, std::int64_t n);

/// Runs f(i) for i in [0, n). Iterations must write disjoint outputs.
template <typename F>
void parallel_for(std::int64_t n, F&& f) {
#if defined(DEXFIT_HAVE_OPENMP)
  if (num_threads() > 1 && n > 1) {
#pragma omp parallel for schedule(static) num_threads(num_threads())
    for (std::int64_t i = 0; i < n; ++i) f(i);
    return;
  }
#endif
  for (std::int64_t i = 0; i < n; ++i) f(i);
}

}  // namespace dexfit
