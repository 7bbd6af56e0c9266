#pragma once

#include <cstddef>

#include "projlens/tensor.hpp"

namespace projlens::linalg {

// Thin SVD, A = U diag(sigma) V^T with r = min(m, n).
//  - sigma is nonincreasing and nonnegative;
//  - columns of u and v are orthonormal (zero singular values get completed
//    basis vectors in u);
//  - for each i, the largest-magnitude entry of column v_i is positive, and
//    u_i carries the matching sign.
struct SvdResult {
  Tensor u;      // m x r
  Tensor sigma;  // r
  Tensor v;      // n x r

  std::size_t rank() const { return sigma.size(); }
  // Column i of u / v as a rank-1 tensor.
  Tensor u_col(std::size_t i) const;
  Tensor v_col(std::size_t i) const;
};

struct SvdOptions {
  double tolerance = 1e-10;  // relative off-diagonal threshold |g_p.g_q| / (|g_p||g_q|)
  int max_sweeps = 60;
};

// One-sided cyclic Jacobi (Hestenes). Columns are swept in the fixed order
// (0,1), (0,2), ..., (n-2,n-1), so results are deterministic per input.
SvdResult svd(const Tensor& a, const SvdOptions& options = {});

// Sum of the top-k singular triples. k = 0 yields the zero matrix; k beyond the
// rank reproduces a.
Tensor rank_k_approx(const Tensor& a, std::size_t k);
Tensor rank_k_from_svd(const SvdResult& s, std::size_t k);

double cosine_similarity(const Tensor& a, const Tensor& b);

// Centered Pearson correlation of two equal-length vectors.
double pearson(const Tensor& x, const Tensor& y);

struct SpectrumReport {
  Tensor values;
  Tensor cumulative_energy;  // running sum of sigma^2 over total sigma^2
  bool degenerate = false;   // all-zero spectrum; energies are reported as 0
};

SpectrumReport spectrum_report(const Tensor& sigma);

}  // namespace projlens::linalg
