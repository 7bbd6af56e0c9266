#include "kernels_impl.hpp"

#include <algorithm>
#include <vector>

// Built with -ffp-contract=off (see CMakeLists.txt): products and sums below
// are rounded separately, which is what the SIMD variants reproduce.

namespace projlens::kernels::detail {

void gemm_scalar(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const float* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
    }
    float* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<float>(acc[j]);
  }
}

double dot_scalar(const float* a, const float* b, std::size_t n) {
  double lane[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t full = n & ~std::size_t{3};
  for (std::size_t i = 0; i < full; i += 4) {
    for (std::size_t l = 0; l < 4; ++l)
      lane[l] += static_cast<double>(a[i + l]) * static_cast<double>(b[i + l]);
  }
  double s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (std::size_t i = full; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double dot_f64_scalar(const double* a, const double* b, std::size_t n) {
  double lane[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t full = n & ~std::size_t{3};
  for (std::size_t i = 0; i < full; i += 4) {
    for (std::size_t l = 0; l < 4; ++l) lane[l] += a[i + l] * b[i + l];
  }
  double s = (lane[0] + lane[1]) + (lane[2] + lane[3]);
  for (std::size_t i = full; i < n; ++i) s += a[i] * b[i];
  return s;
}

void rotate_f64_scalar(double* x, double* y, std::size_t n, double c, double s) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi - s * yi;
    y[i] = s * xi + c * yi;
  }
}

}  // namespace projlens::kernels::detail
