#include "projlens/embed_lens.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <utility>

#include "projlens/error.hpp"
#include "projlens/rng.hpp"

namespace projlens::elens {

namespace {

struct Moments {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;

  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  SimilarityCell cell() const {
    SimilarityCell c;
    c.pairs = n;
    if (n == 0) return c;
    c.mean = sum / double(n);
    c.std = std::sqrt(std::max(0.0, sum_sq / double(n) - c.mean * c.mean));
    return c;
  }
};

using PairList = std::vector<std::pair<std::size_t, std::size_t>>;

// Unordered pairs (i < j) of one group, or max_pairs sampled ones.
PairList within_pairs(std::size_t n, std::size_t max_pairs, Rng& rng) {
  PairList out;
  const std::size_t total = n * (n - 1) / 2;
  if (total <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) out.emplace_back(i, j);
    return out;
  }
  while (out.size() < max_pairs) {
    const std::size_t i = rng.below(n), j = rng.below(n);
    if (i != j) out.emplace_back(std::min(i, j), std::max(i, j));
  }
  return out;
}

PairList cross_pairs(std::size_t n, std::size_t m, std::size_t max_pairs, Rng& rng) {
  PairList out;
  if (n * m <= max_pairs) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) out.emplace_back(i, j);
    return out;
  }
  while (out.size() < max_pairs) out.emplace_back(rng.below(n), rng.below(m));
  return out;
}

void require_group(std::span<const DriftDecomposition> g, const char* what) {
  if (g.size() < 2)
    throw InsufficientSamplesError(std::string("drift_similarity_table: ") + what + " needs at least 2 samples");
}

void accumulate(const DriftDecomposition& a, const DriftDecomposition& b, Moments (&v)[3], Moments (&u)[3],
                std::size_t g) {
  if (a.u0.size() != b.u0.size())
    throw DimensionError("drift_similarity_table: u0 lengths differ (" + std::to_string(a.u0.size()) + " vs " +
                         std::to_string(b.u0.size()) + ")");
  v[g].add(100.0 * linalg::cosine_similarity(a.v0, b.v0));
  u[g].add(100.0 * linalg::cosine_similarity(a.u0, b.u0));
}

void append(std::ostringstream& os, const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  os << buf;
}

}  // namespace

std::string_view grouping_name(Grouping g) {
  switch (g) {
    case Grouping::WithinClean: return "within_clean";
    case Grouping::WithinPoison: return "within_poison";
    case Grouping::Between: return "between";
  }
  return "?";
}

ProjectedResidual projected_residual(const Tensor& features, const model::Projector& clean,
                                     const model::Projector& poisoned, std::string sample_id, bool is_poisoned) {
  require_same_shape(clean.w1, poisoned.w1, "projected_residual W1");
  require_same_shape(clean.b1, poisoned.b1, "projected_residual b1");
  require_same_shape(clean.w2, poisoned.w2, "projected_residual W2");
  require_same_shape(clean.b2, poisoned.b2, "projected_residual b2");
  return {subtract(model::project(features, poisoned), model::project(features, clean)), std::move(sample_id),
          is_poisoned};
}

ProjectedResidual projected_residual(const Tensor& image, const model::Projector& clean,
                                     const model::Projector& poisoned, const model::VisionEncoder& encoder,
                                     std::string sample_id, bool is_poisoned) {
  return projected_residual(encoder.encode(image), clean, poisoned, std::move(sample_id), is_poisoned);
}

double DriftDecomposition::tail_energy() const {
  double s = 0.0;
  for (std::size_t i = 1; i < spectrum.size(); ++i) s += double(spectrum[i]) * spectrum[i];
  return std::sqrt(s);
}

DriftDecomposition drift_decompose(const ProjectedResidual& pr) {
  require_rank(pr.delta_e, 2, "drift_decompose");
  const linalg::SvdResult s = linalg::svd(pr.delta_e);
  DriftDecomposition d;
  d.sample_id = pr.sample_id;
  d.poisoned = pr.poisoned;
  d.spectrum = s.sigma;
  d.sigma0 = s.sigma[0];
  if (d.sigma0 == 0.0) {
    d.degenerate = true;
    d.u0 = Tensor({pr.delta_e.dim(0)});
    d.v0 = Tensor({pr.delta_e.dim(1)});
    return d;
  }
  d.u0 = s.u_col(0);
  d.v0 = s.v_col(0);
  return d;
}

double rank1_error(const ProjectedResidual& pr, const DriftDecomposition& d) {
  const std::size_t n = pr.delta_e.dim(0), m = pr.delta_e.dim(1);
  if (d.u0.size() != n || d.v0.size() != m) throw DimensionError("rank1_error: decomposition shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double r = double(pr.delta_e(i, j)) - d.sigma0 * double(d.u0[i]) * double(d.v0[j]);
      s += r * r;
    }
  return std::sqrt(s);
}

SimilarityTable drift_similarity_table(std::span<const DriftDecomposition> clean,
                                       std::span<const DriftDecomposition> poison,
                                       const SimilarityOptions& options) {
  require_group(clean, "clean group");
  require_group(poison, "poison group");
  Rng rng(options.seed);
  Moments v[3], u[3];
  SimilarityTable t;
  for (auto [i, j] : within_pairs(clean.size(), options.max_pairs, rng))
    accumulate(clean[i], clean[j], v, u, std::size_t(Grouping::WithinClean));
  for (auto [i, j] : within_pairs(poison.size(), options.max_pairs, rng))
    accumulate(poison[i], poison[j], v, u, std::size_t(Grouping::WithinPoison));
  for (auto [i, j] : cross_pairs(clean.size(), poison.size(), options.max_pairs, rng))
    accumulate(clean[i], poison[j], v, u, std::size_t(Grouping::Between));
  for (std::size_t g = 0; g < kGroupings; ++g) {
    t.v0[g] = v[g].cell();
    t.u0[g] = u[g].cell();
  }
  return t;
}

Tensor logitlens_distribution(const Tensor& v0, const model::DecoderHead& head) {
  if (v0.size() != head.width())
    throw DimensionError("logitlens: v0 has " + std::to_string(v0.size()) + " entries, head width is " +
                         std::to_string(head.width()));
  return softmax(matvec(head.vocab_out(), Tensor({v0.size()}, {v0.values().begin(), v0.values().end()})));
}

std::vector<TokenProb> logitlens_decode(const Tensor& v0, const model::DecoderHead& head, std::size_t k) {
  if (k > head.vocab()) throw ConfigError("logitlens: k exceeds the vocabulary size");
  const Tensor p = logitlens_distribution(v0, head);
  std::vector<int> order(p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p[a] > p[b]; });
  std::vector<TokenProb> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = {order[i], p[order[i]]};
  return out;
}

LogitLensCorpus logitlens_corpus(std::span<const DriftDecomposition> decomps, const model::DecoderHead& head,
                                 std::size_t k) {
  if (decomps.empty()) throw EmptyInputError("logitlens_corpus: no samples");
  LogitLensCorpus c;
  c.rank1_share.assign(head.vocab(), 0.0);
  c.topk_share.assign(head.vocab(), 0.0);
  const double w = 1.0 / double(decomps.size());
  for (const DriftDecomposition& d : decomps) {
    c.top.push_back(logitlens_decode(d.v0, head, k));
    if (k > 0) c.rank1_share[c.top.back()[0].token] += w;
    for (const TokenProb& t : c.top.back()) c.topk_share[t.token] += w;
  }
  return c;
}

double topk_hit_rate(const LogitLensCorpus& corpus, std::span<const int> targets) {
  if (corpus.top.empty()) throw EmptyInputError("topk_hit_rate: no samples");
  std::size_t hits = 0;
  for (const auto& top : corpus.top)
    hits += std::any_of(top.begin(), top.end(), [&](const TokenProb& t) {
      return std::find(targets.begin(), targets.end(), t.token) != targets.end();
    });
  return double(hits) / double(corpus.top.size());
}

U0Correlation u0_norm_correlation(const DriftDecomposition& d, const Tensor& features) {
  require_rank(features, 2, "u0_norm_correlation");
  if (features.dim(0) != d.u0.size())
    throw DimensionError("u0_norm_correlation: " + std::to_string(features.dim(0)) + " tokens vs u0 of " +
                         std::to_string(d.u0.size()));
  const double r = linalg::pearson(d.u0, row_l2_norms(features));
  return r < 0.0 ? U0Correlation{-r, true} : U0Correlation{r, false};
}

std::vector<double> constructed_residual_curve(const Tensor& features, const Tensor& v0, double alpha,
                                               std::span<const double> eps, std::uint64_t seed) {
  require_rank(features, 2, "constructed_residual_curve");
  const Tensor n = row_l2_norms(features);
  const std::size_t rows = n.size(), cols = v0.size();
  Rng rng(seed);
  const Tensor noise = rng.normal_tensor({rows, cols}, 1.0);
  std::vector<double> out;
  for (double e : eps) {
    Tensor r({rows, cols});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        r(i, j) = static_cast<float>(alpha * double(n[i]) * double(v0[j]) + e * double(noise(i, j)));
    out.push_back(u0_norm_correlation(drift_decompose({r, {}, false}), features).r);
  }
  return out;
}

Tensor u0_spatial_map(const DriftDecomposition& d, std::size_t rows, std::size_t cols) {
  if (d.u0.size() != rows * cols)
    throw DimensionError("u0_spatial_map: u0 has " + std::to_string(d.u0.size()) + " entries, grid is " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  return Tensor({rows, cols}, {d.u0.values().begin(), d.u0.values().end()});
}

std::string spectra_csv(std::span<const DriftDecomposition> decomps) {
  std::ostringstream os;
  os << "sample,poisoned,index,sigma\n";
  for (const DriftDecomposition& d : decomps)
    for (std::size_t i = 0; i < d.spectrum.size(); ++i)
      append(os, "%s,%d,%zu,%.9g\n", d.sample_id.c_str(), int(d.poisoned), i, double(d.spectrum[i]));
  return os.str();
}

std::string similarity_csv(const SimilarityTable& t) {
  std::ostringstream os;
  os << "vector,grouping,mean,std,pairs\n";
  for (std::size_t g = 0; g < kGroupings; ++g) {
    const std::string name(grouping_name(Grouping(g)));
    append(os, "v0,%s,%.9g,%.9g,%zu\n", name.c_str(), t.v0[g].mean, t.v0[g].std, t.v0[g].pairs);
  }
  for (std::size_t g = 0; g < kGroupings; ++g) {
    const std::string name(grouping_name(Grouping(g)));
    append(os, "u0,%s,%.9g,%.9g,%zu\n", name.c_str(), t.u0[g].mean, t.u0[g].std, t.u0[g].pairs);
  }
  return os.str();
}

std::string logitlens_csv(const LogitLensCorpus& c, const model::DecoderHead& head) {
  std::ostringstream os;
  os << "token,name,rank1_share,topk_share\n";
  for (std::size_t t = 0; t < head.vocab(); ++t) {
    const std::string name(model::token_name(int(t)));
    append(os, "%zu,%s,%.9g,%.9g\n", t, name.c_str(), c.rank1_share[t], c.topk_share[t]);
  }
  return os.str();
}

std::string correlation_pairs_csv(const DriftDecomposition& d, const Tensor& features) {
  const Tensor n = row_l2_norms(features);
  if (n.size() != d.u0.size()) throw DimensionError("correlation_pairs_csv: token count mismatch");
  std::ostringstream os;
  os << "token,token_norm,u0_value\n";
  for (std::size_t i = 0; i < n.size(); ++i) append(os, "%zu,%.9g,%.9g\n", i, double(n[i]), double(d.u0[i]));
  return os.str();
}

std::string u0_map_csv(std::span<const DriftDecomposition> clean, std::span<const DriftDecomposition> triggered,
                       std::size_t rows, std::size_t cols) {
  std::ostringstream os;
  os << "sample,variant,row,col,u0\n";
  auto emit = [&](const DriftDecomposition& d, const char* variant) {
    const Tensor g = u0_spatial_map(d, rows, cols);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        append(os, "%s,%s,%zu,%zu,%.9g\n", d.sample_id.c_str(), variant, r, c, double(g(r, c)));
  };
  for (std::size_t i = 0; i < std::max(clean.size(), triggered.size()); ++i) {
    if (i < clean.size()) emit(clean[i], "clean");
    if (i < triggered.size()) emit(triggered[i], "triggered");
  }
  return os.str();
}

}  // namespace projlens::elens
