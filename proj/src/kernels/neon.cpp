// AArch64 NEON variants. Two float64x2 registers stand in for one AVX2 lane
// group so the four-lane summation order matches the scalar reference.

#include "kernels_impl.hpp"

#include <arm_neon.h>

namespace projlens::kernels::detail {

namespace {

inline void widen(const float* p, float64x2_t& lo, float64x2_t& hi) {
  const float32x4_t v = vld1q_f32(p);
  lo = vcvt_f64_f32(vget_low_f32(v));
  hi = vcvt_high_f64_f32(v);
}

inline float32x4_t narrow(float64x2_t lo, float64x2_t hi) {
  return vcvt_high_f32_f64(vcvt_f32_f64(lo), hi);
}

}  // namespace

void gemm_neon(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const float* arow = a + i * k;
    float* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      float64x2_t acc_lo = vdupq_n_f64(0.0);
      float64x2_t acc_hi = vdupq_n_f64(0.0);
      for (std::size_t p = 0; p < k; ++p) {
        const float64x2_t av = vdupq_n_f64(static_cast<double>(arow[p]));
        float64x2_t lo, hi;
        widen(b + p * n + j, lo, hi);
        acc_lo = vaddq_f64(acc_lo, vmulq_f64(av, lo));
        acc_hi = vaddq_f64(acc_hi, vmulq_f64(av, hi));
      }
      vst1q_f32(crow + j, narrow(acc_lo, acc_hi));
    }
    for (; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p)
        acc += static_cast<double>(arow[p]) * static_cast<double>(b[p * n + j]);
      crow[j] = static_cast<float>(acc);
    }
  }
}

double dot_neon(const float* a, const float* b, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0);
  float64x2_t acc23 = vdupq_n_f64(0.0);
  const std::size_t full = n & ~std::size_t{3};
  for (std::size_t i = 0; i < full; i += 4) {
    float64x2_t alo, ahi, blo, bhi;
    widen(a + i, alo, ahi);
    widen(b + i, blo, bhi);
    acc01 = vaddq_f64(acc01, vmulq_f64(alo, blo));
    acc23 = vaddq_f64(acc23, vmulq_f64(ahi, bhi));
  }
  double s = (vgetq_lane_f64(acc01, 0) + vgetq_lane_f64(acc01, 1)) +
             (vgetq_lane_f64(acc23, 0) + vgetq_lane_f64(acc23, 1));
  for (std::size_t i = full; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void axpy_neon(float alpha, const float* x, float* y, std::size_t n) {
  const float32x4_t va = vdupq_n_f32(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vaddq_f32(vld1q_f32(y + i), vmulq_f32(va, vld1q_f32(x + i))));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_f64_neon(const double* a, const double* b, std::size_t n) {
  float64x2_t acc01 = vdupq_n_f64(0.0);
  float64x2_t acc23 = vdupq_n_f64(0.0);
  const std::size_t full = n & ~std::size_t{3};
  for (std::size_t i = 0; i < full; i += 4) {
    acc01 = vaddq_f64(acc01, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    acc23 = vaddq_f64(acc23, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
  }
  double s = (vgetq_lane_f64(acc01, 0) + vgetq_lane_f64(acc01, 1)) +
             (vgetq_lane_f64(acc23, 0) + vgetq_lane_f64(acc23, 1));
  for (std::size_t i = full; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate_f64_neon(double* x, double* y, std::size_t n, double c, double s) {
  const float64x2_t vc = vdupq_n_f64(c);
  const float64x2_t vs = vdupq_n_f64(s);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t xi = vld1q_f64(x + i);
    const float64x2_t yi = vld1q_f64(y + i);
    vst1q_f64(x + i, vsubq_f64(vmulq_f64(vc, xi), vmulq_f64(vs, yi)));
    vst1q_f64(y + i, vaddq_f64(vmulq_f64(vs, xi), vmulq_f64(vc, yi)));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

}  // namespace projlens::kernels::detail
