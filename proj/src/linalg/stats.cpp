#include <algorithm>
#include <cmath>

#include "projlens/error.hpp"
#include "projlens/linalg.hpp"

namespace projlens::linalg {

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw DimensionError("cosine_similarity: length mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa == 0.0 || bb == 0.0) throw UndefinedSimilarityError("cosine_similarity: zero vector");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

double pearson(const Tensor& x, const Tensor& y) {
  if (x.size() != y.size())
    throw DimensionError("pearson: length mismatch " + shape_string(x.shape()) + " vs " +
                         shape_string(y.shape()));
  const std::size_t n = x.size();
  if (n < 2) throw EmptyInputError("pearson: need at least two observations");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw ZeroVarianceError("pearson: constant input has zero variance");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

SpectrumReport spectrum_report(const Tensor& sigma) {
  require_rank(sigma, 1, "spectrum_report");
  SpectrumReport rep;
  rep.values = sigma;
  rep.cumulative_energy = Tensor({sigma.size()});
  double total = 0.0;
  for (float s : sigma.values()) total += static_cast<double>(s) * s;
  if (total == 0.0) {
    rep.degenerate = true;
    return rep;
  }
  double running = 0.0;
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    running += static_cast<double>(sigma[i]) * sigma[i];
    rep.cumulative_energy[i] = static_cast<float>(running / total);
  }
  rep.cumulative_energy[sigma.size() - 1] = 1.0f;
  return rep;
}

}  // namespace projlens::linalg
