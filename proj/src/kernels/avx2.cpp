// AVX2 variants. This translation unit alone is compiled with -mavx2; callers
// reach it only through kernels::avx2(), which checks the CPU first.

#include "kernels_impl.hpp"

#include <immintrin.h>

namespace projlens::kernels::detail {

namespace {

inline __m256d widen(const float* p) { return _mm256_cvtps_pd(_mm_loadu_ps(p)); }

inline double combine_lanes(__m256d v) {
  alignas(32) double lane[4];
  _mm256_store_pd(lane, v);
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

}  // namespace

void gemm_avx2(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256d acc0 = _mm256_setzero_pd();
      __m256d acc1 = _mm256_setzero_pd();
      __m256d acc2 = _mm256_setzero_pd();
      __m256d acc3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(static_cast<double>(arow[p]));
        const float* bp = b + p * n + j;
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(av, widen(bp)));
        acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(av, widen(bp + 4)));
        acc2 = _mm256_add_pd(acc2, _mm256_mul_pd(av, widen(bp + 8)));
        acc3 = _mm256_add_pd(acc3, _mm256_mul_pd(av, widen(bp + 12)));
      }
      _mm_storeu_ps(crow + j, _mm256_cvtpd_ps(acc0));
      _mm_storeu_ps(crow + j + 4, _mm256_cvtpd_ps(acc1));
      _mm_storeu_ps(crow + j + 8, _mm256_cvtpd_ps(acc2));
      _mm_storeu_ps(crow + j + 12, _mm256_cvtpd_ps(acc3));
    }
    for (; j + 4 <= n; j += 4) {
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(static_cast<double>(arow[p]));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(av, widen(b + p * n + j)));
      }
      _mm_storeu_ps(crow + j, _mm256_cvtpd_ps(acc));
    }
    for (; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc += static_cast<double>(arow[p]) * static_cast<double>(b[p * n + j]);
      crow[j] = static_cast<float>(acc);
    }
  }
}

double dot_avx2(const float* a, const float* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t full = n & ~std::size_t{3};
  for (std::size_t i = 0; i < full; i += 4) acc = _mm256_add_pd(acc, _mm256_mul_pd(widen(a + i), widen(b + i)));
  double s = combine_lanes(acc);
  for (std::size_t i = full; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_f64_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  const std::size_t full = n & ~std::size_t{3};
  for (std::size_t i = 0; i < full; i += 4)
    acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  double s = combine_lanes(acc);
  for (std::size_t i = full; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate_f64_avx2(double* x, double* y, std::size_t n, double c, double s) {
  const __m256d vc = _mm256_set1_pd(c);
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xi = _mm256_loadu_pd(x + i);
    const __m256d yi = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(x + i, _mm256_sub_pd(_mm256_mul_pd(vc, xi), _mm256_mul_pd(vs, yi)));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_mul_pd(vs, xi), _mm256_mul_pd(vc, yi)));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

}  // namespace projlens::kernels::detail
