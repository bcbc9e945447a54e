#include "dexfit/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <vector>

namespace dexfit {

namespace {

int g_thread_override = 0;

int env_threads() {
  const char* s = std::getenv("DEXFIT_THREADS");
  if (!s || !*s) return 0;
  int v = std::atoi(s);
  return v > 0 ? v : 0;
}

constexpr std::int64_t kSumChunk = 1024;

void zero_or_keep(double* C, std::int64_t count, bool accumulate) {
  if (!accumulate) std::memset(C, 0, sizeof(double) * static_cast<std::size_t>(count));
}

// Row block of a matmul_nn: rows [r0, r1) of C, ikj order.
inline void nn_rows(double* C, const double* A, const double* B,
                    std::int64_t r0, std::int64_t r1, std::int64_t k,
                    std::int64_t n) {
  for (std::int64_t i = r0; i < r1; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::int64_t l = 0; l < k; ++l) {
      const double al = a[l];
      const double* b = B + l * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += al * b[j];
    }
  }
}

inline void nt_rows(double* C, const double* A, const double* B,
                    std::int64_t r0, std::int64_t r1, std::int64_t k,
                    std::int64_t n) {
  for (std::int64_t i = r0; i < r1; ++i) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* b = B + j * k;
      double acc = 0.0;
      for (std::int64_t l = 0; l < k; ++l) acc += a[l] * b[l];
      c[j] += acc;
    }
  }
}

}  // namespace

int num_threads() {
  if (g_thread_override > 0) return g_thread_override;
  int e = env_threads();
  if (e > 0) return e;
#if defined(DEXFIT_HAVE_OPENMP)
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) { g_thread_override = n > 0 ? n : 0; }

bool has_parallel_backend() {
#if defined(DEXFIT_HAVE_OPENMP)
  return true;
#else
  return false;
#endif
}

void matmul_nn_serial(double* C, const double* A, const double* B,
                      std::int64_t m, std::int64_t k, std::int64_t n,
                      bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  nn_rows(C, A, B, 0, m, k, n);
}

void matmul_nn(double* C, const double* A, const double* B, std::int64_t m,
               std::int64_t k, std::int64_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  parallel_for(m, [&](std::int64_t i) { nn_rows(C, A, B, i, i + 1, k, n); });
}

void matmul_nt_serial(double* C, const double* A, const double* B,
                      std::int64_t m, std::int64_t k, std::int64_t n,
                      bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  nt_rows(C, A, B, 0, m, k, n);
}

void matmul_nt(double* C, const double* A, const double* B, std::int64_t m,
               std::int64_t k, std::int64_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  parallel_for(m, [&](std::int64_t i) { nt_rows(C, A, B, i, i + 1, k, n); });
}

void matmul_tn_serial(double* C, const double* A, const double* B,
                      std::int64_t m, std::int64_t k, std::int64_t n,
                      bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  for (std::int64_t l = 0; l < k; ++l) {
    const double* a = A + l * m;
    const double* b = B + l * n;
    for (std::int64_t i = 0; i < m; ++i) {
      double* c = C + i * n;
      const double ali = a[i];
      for (std::int64_t j = 0; j < n; ++j) c[j] += ali * b[j];
    }
  }
}

void matmul_tn(double* C, const double* A, const double* B, std::int64_t m,
               std::int64_t k, std::int64_t n, bool accumulate) {
  zero_or_keep(C, m * n, accumulate);
  // Parallel over rows of C; per row the l loop runs in fixed order, matching
  // the serial version elementwise.
  parallel_for(m, [&](std::int64_t i) {
    double* c = C + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const double ali = A[l * m + i];
      const double* b = B + l * n;
      for (std::int64_t j = 0; j < n; ++j) c[j] += ali * b[j];
    }
  });
}

namespace {

double fold_chunks(const std::vector<double>& partials) {
  double acc = 0.0;
  for (double p : partials) acc += p;
  return acc;
}

}  // namespace

double det_sum_serial(const double* x, std::int64_t n) {
  const std::int64_t chunks = (n + kSumChunk - 1) / kSumChunk;
  std::vector<double> partials(static_cast<std::size_t>(std::max<std::int64_t>(chunks, 1)), 0.0);
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t lo = c * kSumChunk;
    const std::int64_t hi = std::min(n, lo + kSumChunk);
    double acc = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) acc += x[i];
    partials[static_cast<std::size_t>(c)] = acc;
  }
  return fold_chunks(partials);
}

double det_sum(const double* x, std::int64_t n) {
  const std::int64_t chunks = (n + kSumChunk - 1) / kSumChunk;
  if (chunks <= 1) return det_sum_serial(x, n);
  std::vector<double> partials(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(chunks, [&](std::int64_t c) {
    const std::int64_t lo = c * kSumChunk;
    const std::int64_t hi = std::min(n, lo + kSumChunk);
    double acc = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) acc += x[i];
    partials[static_cast<std::size_t>(c)] = acc;
  });
  return fold_chunks(partials);
}

double det_dot_serial(const double* x, const double* y, std::int64_t n) {
  const std::int64_t chunks = (n + kSumChunk - 1) / kSumChunk;
  std::vector<double> partials(static_cast<std::size_t>(std::max<std::int64_t>(chunks, 1)), 0.0);
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t lo = c * kSumChunk;
    const std::int64_t hi = std::min(n, lo + kSumChunk);
    double acc = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) acc += x[i] * y[i];
    partials[static_cast<std::size_t>(c)] = acc;
  }
  return fold_chunks(partials);
}

double det_dot(const double* x, const double* y, std::int64_t n) {
  const std::int64_t chunks = (n + kSumChunk - 1) / kSumChunk;
  if (chunks <= 1) return det_dot_serial(x, y, n);
  std::vector<double> partials(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(chunks, [&](std::int64_t c) {
    const std::int64_t lo = c * kSumChunk;
    const std::int64_t hi = std::min(n, lo + kSumChunk);
    double acc = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) acc += x[i] * y[i];
    partials[static_cast<std::size_t>(c)] = acc;
  });
  return fold_chunks(partials);
}

}  // namespace dexfit
