#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "projlens/error.hpp"
#include "projlens/kernels.hpp"
#include "projlens/linalg.hpp"

namespace projlens::linalg {

namespace {

using Column = std::vector<double>;

struct Decomposition {
  std::vector<Column> u;  // r columns of length rows
  std::vector<double> sigma;
  std::vector<Column> v;  // r columns of length cols
};

// Orthonormal column to append to `basis` when a singular value is zero.
Column complete_basis(const std::vector<Column>& basis, std::size_t rows) {
  const auto& k = kernels::active();
  for (std::size_t e = 0; e < rows; ++e) {
    Column c(rows, 0.0);
    c[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass) {
      for (const Column& b : basis) {
        if (b.empty()) continue;
        const double proj = k.dot_f64(c.data(), b.data(), rows);
        for (std::size_t i = 0; i < rows; ++i) c[i] -= proj * b[i];
      }
    }
    const double norm = std::sqrt(k.dot_f64(c.data(), c.data(), rows));
    if (norm > 1e-6) {
      for (double& x : c) x /= norm;
      return c;
    }
  }
  return Column(rows, 0.0);  // unreachable while basis.size() < rows
}

// Requires rows >= cols.
Decomposition jacobi_tall(const Tensor& a, const SvdOptions& options) {
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const auto& k = kernels::active();

  std::vector<Column> g(cols, Column(rows));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) g[j][i] = a(i, j);
  std::vector<Column> v(cols, Column(cols, 0.0));
  for (std::size_t j = 0; j < cols; ++j) v[j][j] = 1.0;

  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        const double alpha = k.dot_f64(g[p].data(), g[p].data(), rows);
        const double beta = k.dot_f64(g[q].data(), g[q].data(), rows);
        const double gamma = k.dot_f64(g[p].data(), g[q].data(), rows);
        if (alpha == 0.0 || beta == 0.0) continue;
        if (std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        k.rotate_f64(g[p].data(), g[q].data(), rows, c, s);
        k.rotate_f64(v[p].data(), v[q].data(), cols, c, s);
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(cols);
  for (std::size_t j = 0; j < cols; ++j) norms[j] = std::sqrt(k.dot_f64(g[j].data(), g[j].data(), rows));
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  const double sigma_max = cols ? norms[order[0]] : 0.0;
  const double zero_cut = std::max(1e-300, sigma_max * 1e-12 * static_cast<double>(std::max(rows, cols)));

  Decomposition d;
  d.u.reserve(cols);
  for (std::size_t idx : order) {
    const double s = norms[idx];
    d.v.push_back(v[idx]);
    if (s > zero_cut) {
      d.sigma.push_back(s);
      Column uc = g[idx];
      for (double& x : uc) x /= s;
      d.u.push_back(std::move(uc));
    } else {
      d.sigma.push_back(0.0);
      d.u.emplace_back();  // filled below once all nonzero columns exist
    }
  }
  for (std::size_t j = 0; j < d.u.size(); ++j) {
    if (d.u[j].empty()) d.u[j] = complete_basis(d.u, rows);
  }
  return d;
}

// Runs on the float-rounded factors so that the entry selected here is the
// one a caller sees as largest; ties go to the lowest index.
void canonicalize_signs(SvdResult& s) {
  const std::size_t m = s.u.dim(0), n = s.v.dim(0);
  for (std::size_t i = 0; i < s.rank(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j)
      if (std::abs(s.v(j, i)) > std::abs(s.v(best, i))) best = j;
    if (s.v(best, i) < 0.0f) {
      for (std::size_t j = 0; j < n; ++j) s.v(j, i) = -s.v(j, i);
      for (std::size_t j = 0; j < m; ++j) s.u(j, i) = -s.u(j, i);
    }
  }
}

Tensor columns_to_tensor(const std::vector<Column>& cols, std::size_t rows) {
  Tensor t({rows, cols.size()});
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < rows; ++i) t(i, j) = static_cast<float>(cols[j][i]);
  return t;
}

}  // namespace

Tensor SvdResult::u_col(std::size_t i) const {
  Tensor c({u.dim(0)});
  for (std::size_t r = 0; r < u.dim(0); ++r) c[r] = u(r, i);
  return c;
}

Tensor SvdResult::v_col(std::size_t i) const {
  Tensor c({v.dim(0)});
  for (std::size_t r = 0; r < v.dim(0); ++r) c[r] = v(r, i);
  return c;
}

SvdResult svd(const Tensor& a, const SvdOptions& options) {
  if (a.rank() != 2) throw DimensionError("svd: expected a rank-2 tensor, got shape " + shape_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (m == 0 || n == 0) throw DimensionError("svd: empty matrix " + shape_string(a.shape()));

  Decomposition d;
  if (m >= n) {
    d = jacobi_tall(a, options);
  } else {
    Decomposition t = jacobi_tall(transpose(a), options);
    d.sigma = std::move(t.sigma);
    d.u = std::move(t.v);
    d.v = std::move(t.u);
  }
  SvdResult out;
  out.u = columns_to_tensor(d.u, m);
  out.v = columns_to_tensor(d.v, n);
  out.sigma = Tensor({d.sigma.size()});
  for (std::size_t i = 0; i < d.sigma.size(); ++i) out.sigma[i] = static_cast<float>(d.sigma[i]);
  canonicalize_signs(out);
  return out;
}

Tensor rank_k_from_svd(const SvdResult& s, std::size_t k) {
  const std::size_t m = s.u.dim(0), n = s.v.dim(0);
  const std::size_t keep = std::min(k, s.rank());
  std::vector<double> acc(m * n, 0.0);
  for (std::size_t i = 0; i < keep; ++i) {
    const double sig = s.sigma[i];
    for (std::size_t r = 0; r < m; ++r) {
      const double ur = sig * s.u(r, i);
      for (std::size_t c = 0; c < n; ++c) acc[r * n + c] += ur * static_cast<double>(s.v(c, i));
    }
  }
  Tensor out({m, n});
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

Tensor rank_k_approx(const Tensor& a, std::size_t k) {
  require_rank(a, 2, "rank_k_approx");
  if (k == 0) return Tensor(a.shape());
  return rank_k_from_svd(svd(a), k);
}

}  // namespace projlens::linalg
