#pragma once

#include <cstddef>

namespace projlens::kernels::detail {

void gemm_scalar(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n);
double dot_scalar(const float* a, const float* b, std::size_t n);
void axpy_scalar(float alpha, const float* x, float* y, std::size_t n);
double dot_f64_scalar(const double* a, const double* b, std::size_t n);
void rotate_f64_scalar(double* x, double* y, std::size_t n, double c, double s);

#if defined(PROJLENS_HAVE_AVX2)
void gemm_avx2(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n);
double dot_avx2(const float* a, const float* b, std::size_t n);
void axpy_avx2(float alpha, const float* x, float* y, std::size_t n);
double dot_f64_avx2(const double* a, const double* b, std::size_t n);
void rotate_f64_avx2(double* x, double* y, std::size_t n, double c, double s);
#endif

#if defined(PROJLENS_HAVE_NEON)
void gemm_neon(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n);
double dot_neon(const float* a, const float* b, std::size_t n);
void axpy_neon(float alpha, const float* x, float* y, std::size_t n);
double dot_f64_neon(const double* a, const double* b, std::size_t n);
void rotate_f64_neon(double* x, double* y, std::size_t n, double c, double s);
#endif

}  // namespace projlens::kernels::detail
