#pragma once

// Data-parallel inner loops. Every variant in a KernelTable must produce
// bit-identical results to the scalar reference: float products are widened
// to double (exact), double accumulation follows a fixed order, and no variant
// fuses a multiply into an add where the product is inexact.

#include <cstddef>
#include <string_view>

namespace projlens::kernels {

struct KernelTable {
  std::string_view name;

  // c[m x n] = a[m x k] * b[k x n], row-major. Each c[i,j] is accumulated in
  // double in increasing k, then rounded once to float.
  void (*gemm)(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
               std::size_t n);

  // Four-lane dot product: lane l sums indices i = l (mod 4) over the full
  // blocks, the lanes are combined as (l0 + l1) + (l2 + l3), then the tail is
  // added in order.
  double (*dot)(const float* a, const float* b, std::size_t n);

  // y[i] += alpha * x[i] in float, multiply and add rounded separately.
  void (*axpy)(float alpha, const float* x, float* y, std::size_t n);

  // Double-precision helpers for the Jacobi SVD. dot_f64 uses the same lane
  // order as dot; rotate_f64 applies x' = c*x - s*y, y' = s*x + c*y.
  double (*dot_f64)(const double* a, const double* b, std::size_t n);
  void (*rotate_f64)(double* x, double* y, std::size_t n, double c, double s);
};

const KernelTable& scalar();

// nullptr when the variant was not compiled in or the CPU lacks the feature.
const KernelTable* avx2();
const KernelTable* neon();

// Best available variant, chosen once per process from CPU features.
const KernelTable& active();

// Overrides the active variant (tests, benchmarks). Not thread-safe with
// concurrent kernel calls.
void select(const KernelTable& table);

}  // namespace projlens::kernels
