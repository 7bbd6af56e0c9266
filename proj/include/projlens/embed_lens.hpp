#pragma once

// Embedding-space diagnostics: per-sample projected residuals, their top
// singular triple (the drift), cross-sample similarity, LogitLens decoding of
// the drift direction and the token-norm correlation of u0.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "projlens/linalg.hpp"
#include "projlens/model.hpp"

namespace projlens::elens {

struct ProjectedResidual {
  Tensor delta_e;  // N_v x d_l, project(x, poisoned) - project(x, clean)
  std::string sample_id;
  bool poisoned = false;
};

ProjectedResidual projected_residual(const Tensor& features, const model::Projector& clean,
                                     const model::Projector& poisoned, std::string sample_id = {},
                                     bool is_poisoned = false);
// Encodes the image once and differences the two projections.
ProjectedResidual projected_residual(const Tensor& image, const model::Projector& clean,
                                     const model::Projector& poisoned, const model::VisionEncoder& encoder,
                                     std::string sample_id = {}, bool is_poisoned = false);

struct DriftDecomposition {
  double sigma0 = 0.0;
  Tensor u0;        // N_v, sign tied to v0
  Tensor v0;        // d_l, largest-magnitude entry positive
  Tensor spectrum;  // all singular values, nonincreasing
  bool degenerate = false;  // zero residual; u0 and v0 are zero
  std::string sample_id;
  bool poisoned = false;

  // sqrt(sum_{i>=1} sigma_i^2).
  double tail_energy() const;
};

DriftDecomposition drift_decompose(const ProjectedResidual& pr);

// ||delta_e - sigma0 u0 v0^T||_F.
double rank1_error(const ProjectedResidual& pr, const DriftDecomposition& d);

struct SimilarityCell {
  double mean = 0.0, std = 0.0;  // cos x 100 over pairs; population std
  std::size_t pairs = 0;
};

enum class Grouping { WithinClean, WithinPoison, Between };
inline constexpr std::size_t kGroupings = 3;

struct SimilarityTable {
  SimilarityCell v0[kGroupings];
  SimilarityCell u0[kGroupings];
};

struct SimilarityOptions {
  std::size_t max_pairs = 2000;  // beyond this, pairs are sampled uniformly
  std::uint64_t seed = 0;
};

// Pairwise cosine of v0 and of u0 within the clean set, within the poison set
// and across them. Each group needs at least two decompositions.
SimilarityTable drift_similarity_table(std::span<const DriftDecomposition> clean,
                                       std::span<const DriftDecomposition> poison,
                                       const SimilarityOptions& options = {});

struct TokenProb {
  int token = 0;
  double prob = 0.0;
};

// softmax(W_vocab v0), the top k by probability with ties to the lower id.
std::vector<TokenProb> logitlens_decode(const Tensor& v0, const model::DecoderHead& head, std::size_t k);
// Full distribution softmax(W_vocab v0).
Tensor logitlens_distribution(const Tensor& v0, const model::DecoderHead& head);

struct LogitLensCorpus {
  std::vector<std::vector<TokenProb>> top;  // per sample
  std::vector<double> rank1_share;          // per token, fraction of samples where it ranks first
  std::vector<double> topk_share;           // per token, fraction of samples where it is in the top k
};

LogitLensCorpus logitlens_corpus(std::span<const DriftDecomposition> decomps, const model::DecoderHead& head,
                                 std::size_t k);

// Fraction of samples whose top-k contains at least one token of `targets`.
double topk_hit_rate(const LogitLensCorpus& corpus, std::span<const int> targets);

struct U0Correlation {
  double r = 0.0;        // reported after the optional flip, so r >= 0
  bool flipped = false;  // u0 was negated because the raw correlation was negative
};

// Pearson correlation of u0 with the token norms of the features that
// produced the residual.
U0Correlation u0_norm_correlation(const DriftDecomposition& d, const Tensor& features);

// Correlation of u0 recovered from alpha * n v0^T + eps * G (G standard
// normal, seeded) for each eps; n are the token norms of `features`.
std::vector<double> constructed_residual_curve(const Tensor& features, const Tensor& v0, double alpha,
                                               std::span<const double> eps, std::uint64_t seed);

// u0 laid out on the encoder's patch grid; requires u0.size() == rows * cols.
Tensor u0_spatial_map(const DriftDecomposition& d, std::size_t rows, std::size_t cols);

// CSV emitters.
std::string spectra_csv(std::span<const DriftDecomposition> decomps);           // sample,poisoned,index,sigma
std::string similarity_csv(const SimilarityTable& t);                          // vector,grouping,mean,std,pairs
std::string logitlens_csv(const LogitLensCorpus& c, const model::DecoderHead& head);  // token,name,rank1_share,topk_share
std::string correlation_pairs_csv(const DriftDecomposition& d, const Tensor& features);  // token,token_norm,u0_value
// sample,variant,row,col,u0 for clean and triggered decompositions side by side.
std::string u0_map_csv(std::span<const DriftDecomposition> clean, std::span<const DriftDecomposition> triggered,
                       std::size_t rows, std::size_t cols);

std::string_view grouping_name(Grouping g);

}  // namespace projlens::elens
