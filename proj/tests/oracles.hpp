#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the library's kernels: loops are naive and precision is extended where
// it matters.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "projlens/tensor.hpp"

namespace oracle {

using projlens::Tensor;

inline std::vector<long double> naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<long double> c(m * n, 0.0L);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += static_cast<long double>(a(i, p)) * b(p, j);
  return c;
}

// Standard normal CDF by composite Simpson quadrature of the density on
// [-12, x].
inline long double normal_cdf_quadrature(long double x, int intervals = 200000) {
  const long double lo = -12.0L;
  const long double h = (x - lo) / intervals;
  auto pdf = [](long double t) { return std::exp(-0.5L * t * t) / std::sqrt(2.0L * 3.14159265358979323846L); };
  long double s = pdf(lo) + pdf(x);
  for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0L : 2.0L) * pdf(lo + i * h);
  return s * h / 3.0L;
}

inline long double row_norm(const Tensor& m, std::size_t r) {
  long double s = 0.0L;
  for (std::size_t c = 0; c < m.dim(1); ++c) s += static_cast<long double>(m(r, c)) * m(r, c);
  return std::sqrt(s);
}

inline std::vector<long double> softmax_extended(const std::vector<long double>& v) {
  long double sum = 0.0L;
  std::vector<long double> e(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sum += (e[i] = std::exp(v[i]));
  for (auto& x : e) x /= sum;
  return e;
}

// Eigenvalues of a symmetric matrix by classical two-sided cyclic Jacobi,
// returned in descending order.
inline std::vector<long double> symmetric_eigenvalues(std::vector<long double> s, std::size_t n) {
  auto at = [&](std::size_t i, std::size_t j) -> long double& { return s[i * n + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    long double off = 0.0L;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
    if (off < 1e-30L) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(at(p, q)) < 1e-300L) continue;
        const long double theta = (at(q, q) - at(p, p)) / (2.0L * at(p, q));
        const long double t = (theta >= 0 ? 1.0L : -1.0L) / (std::abs(theta) + std::sqrt(theta * theta + 1.0L));
        const long double c = 1.0L / std::sqrt(t * t + 1.0L), sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {  // columns
          const long double kp = at(k, p), kq = at(k, q);
          at(k, p) = c * kp - sn * kq;
          at(k, q) = sn * kp + c * kq;
        }
        for (std::size_t k = 0; k < n; ++k) {  // rows
          const long double pk = at(p, k), qk = at(q, k);
          at(p, k) = c * pk - sn * qk;
          at(q, k) = sn * pk + c * qk;
        }
      }
    }
  }
  std::vector<long double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = at(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

inline std::vector<long double> gram(const Tensor& a) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<long double> g(n * n, 0.0L);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t r = 0; r < m; ++r) g[i * n + j] += static_cast<long double>(a(r, i)) * a(r, j);
  return g;
}

// Two-pass sample correlation.
inline long double pearson_two_pass(const Tensor& x, const Tensor& y) {
  const std::size_t n = x.size();
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += x[i];
  for (std::size_t i = 0; i < n; ++i) my += y[i];
  mx /= n;
  my /= n;
  long double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < n; ++i) cov += (x[i] - mx) * (y[i] - my);
  for (std::size_t i = 0; i < n; ++i) vx += (x[i] - mx) * (x[i] - mx);
  for (std::size_t i = 0; i < n; ++i) vy += (y[i] - my) * (y[i] - my);
  return cov / std::sqrt(vx * vy);
}

}  // namespace oracle
