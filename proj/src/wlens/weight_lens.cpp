#include "projlens/weight_lens.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "projlens/error.hpp"

namespace projlens::wlens {

namespace {

void spectrum_rows(std::ostringstream& os, const char* layer, const LayerSpectrum& l) {
  char buf[160];
  for (std::size_t i = 0; i < l.report.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g\n", layer, i, l.report.values[i], l.report.cumulative_energy[i]);
    os << buf;
  }
}

Tensor apply_rank_k(const Tensor& base, const LayerSpectrum& l, std::size_t k, float sign) {
  if (k == 0) return base;
  const Tensor approx = linalg::rank_k_from_svd(l.svd, k);
  return sign > 0 ? add(base, approx) : subtract(base, approx);
}

void overlap_rows(std::ostringstream& os, const char* metric, const MetricOverlap& m) {
  char buf[200];
  const std::size_t bins = m.first.size();
  const double width = bins ? (m.hi - m.lo) / double(bins) : 0.0;
  for (std::size_t b = 0; b < bins; ++b) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.9g,%.9g,%.9g,%.9g\n", metric, b, m.lo + width * double(b),
                  m.lo + width * double(b + 1), m.first[b], m.second[b]);
    os << buf;
  }
}

}  // namespace

double WeightResidual::bias_norm() const {
  const double a = frobenius_norm(db1), b = frobenius_norm(db2);
  return std::sqrt(a * a + b * b);
}

WeightResidual weight_residual(const model::Projector& clean, const model::Projector& poisoned) {
  require_same_shape(clean.w1, poisoned.w1, "weight_residual W1");
  require_same_shape(clean.b1, poisoned.b1, "weight_residual b1");
  require_same_shape(clean.w2, poisoned.w2, "weight_residual W2");
  require_same_shape(clean.b2, poisoned.b2, "weight_residual b2");
  return {subtract(poisoned.w1, clean.w1), subtract(poisoned.b1, clean.b1), subtract(poisoned.w2, clean.w2),
          subtract(poisoned.b2, clean.b2), model::projector_hash(clean), model::projector_hash(poisoned)};
}

ResidualSpectra residual_svd_report(const WeightResidual& r) {
  ResidualSpectra s;
  s.w1.svd = linalg::svd(r.dw1);
  s.w1.report = linalg::spectrum_report(s.w1.svd.sigma);
  s.w2.svd = linalg::svd(r.dw2);
  s.w2.report = linalg::spectrum_report(s.w2.svd.sigma);
  return s;
}

std::string spectrum_csv(const ResidualSpectra& s) {
  std::ostringstream os;
  os << "layer,index,sigma,cumulative_energy\n";
  spectrum_rows(os, "W1", s.w1);
  spectrum_rows(os, "W2", s.w2);
  return os.str();
}

model::Projector surgery_remove(const model::Projector& poisoned, const ResidualSpectra& s, std::size_t k1,
                                std::size_t k2) {
  model::Projector out = poisoned;
  out.w1 = apply_rank_k(poisoned.w1, s.w1, k1, -1.0f);
  out.w2 = apply_rank_k(poisoned.w2, s.w2, k2, -1.0f);
  return out;
}

model::Projector surgery_recover(const model::Projector& clean, const ResidualSpectra& s, std::size_t k1,
                                 std::size_t k2) {
  model::Projector out = clean;
  out.w1 = apply_rank_k(clean.w1, s.w1, k1, 1.0f);
  out.w2 = apply_rank_k(clean.w2, s.w2, k2, 1.0f);
  return out;
}

NeuronStats neuron_stats(const model::Projector& p, std::span<const Tensor> features, const std::string& tag) {
  if (features.empty()) throw EmptyInputError("neuron_stats: empty dataset");
  const std::size_t d = p.w1.dim(0);
  std::vector<double> mag(d, 0.0), freq(d, 0.0);
  std::size_t tokens = 0;
  for (const Tensor& f : features) {
    const model::ProjectionTrace t = model::project_traced(f, p);
    for (std::size_t r = 0; r < t.hidden.dim(0); ++r)
      for (std::size_t j = 0; j < d; ++j) {
        const float h = t.hidden(r, j);
        mag[j] += h;
        freq[j] += h > 0.0f ? 1.0 : 0.0;
      }
    tokens += t.hidden.dim(0);
  }
  NeuronStats s{Tensor({d}), Tensor({d}), tag};
  for (std::size_t j = 0; j < d; ++j) {
    s.magnitude[j] = static_cast<float>(mag[j] / double(tokens));
    s.frequency[j] = static_cast<float>(freq[j] / double(tokens));
  }
  return s;
}

MetricOverlap histogram_overlap(const Tensor& first, const Tensor& second, std::size_t bins) {
  if (first.empty() || second.empty()) throw EmptyInputError("histogram_overlap: empty input");
  if (bins == 0) throw ConfigError("histogram_overlap: bins must be positive");
  MetricOverlap m;
  const auto [lo1, hi1] = std::minmax_element(first.values().begin(), first.values().end());
  const auto [lo2, hi2] = std::minmax_element(second.values().begin(), second.values().end());
  m.lo = std::min(*lo1, *lo2);
  m.hi = std::max(*hi1, *hi2);
  auto fill = [&](const Tensor& t) {
    std::vector<double> h(bins, 0.0);
    const double range = m.hi - m.lo;
    for (float v : t.values()) {
      std::size_t b = 0;
      if (range > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((double(v) - m.lo) / range * double(bins)));
      h[b] += 1.0 / double(t.size());
    }
    return h;
  };
  m.first = fill(first);
  m.second = fill(second);
  for (std::size_t b = 0; b < bins; ++b) m.intersection += std::min(m.first[b], m.second[b]);
  m.intersection = std::min(1.0, m.intersection);
  if (first.size() == second.size())
    for (std::size_t j = 0; j < first.size(); ++j) {
      const double delta = std::abs(double(second[j]) - double(first[j]));
      if (delta > m.max_abs_delta) {
        m.max_abs_delta = delta;
        m.argmax_delta = j;
      }
    }
  return m;
}

NeuronOverlap neuron_overlap(const NeuronStats& clean, const NeuronStats& poison, std::size_t bins) {
  require_same_shape(clean.magnitude, poison.magnitude, "neuron_overlap");
  return {histogram_overlap(clean.magnitude, poison.magnitude, bins),
          histogram_overlap(clean.frequency, poison.frequency, bins)};
}

std::string overlap_csv(const NeuronOverlap& o) {
  std::ostringstream os;
  os << "metric,bin,lo,hi,clean,poison\n";
  overlap_rows(os, "magnitude", o.magnitude);
  overlap_rows(os, "frequency", o.frequency);
  return os.str();
}

}  // namespace projlens::wlens
