#pragma once

// Weight-space diagnostics of a backdoored projector: the residual against
// the clean projector, its spectra, rank-k surgery and neuron statistics.

#include <span>
#include <string>
#include <vector>

#include "projlens/linalg.hpp"
#include "projlens/model.hpp"

namespace projlens::wlens {

struct WeightResidual {
  Tensor dw1, db1, dw2, db2;  // poisoned minus clean
  std::string clean_hash, poisoned_hash;

  double bias_norm() const;  // Frobenius norm of (db1, db2), reported, never used by surgery
};

WeightResidual weight_residual(const model::Projector& clean, const model::Projector& poisoned);

struct LayerSpectrum {
  linalg::SvdResult svd;
  linalg::SpectrumReport report;
};

struct ResidualSpectra {
  LayerSpectrum w1, w2;
};

ResidualSpectra residual_svd_report(const WeightResidual& r);

// Rows "layer,index,sigma,cumulative_energy" for W1 then W2.
std::string spectrum_csv(const ResidualSpectra& s);

// W_i <- W_i^p - rank_k(dW_i); k = 0 leaves the layer untouched. Biases are kept.
model::Projector surgery_remove(const model::Projector& poisoned, const ResidualSpectra& s, std::size_t k1,
                                std::size_t k2);
// W_i <- W_i^c + rank_k(dW_i).
model::Projector surgery_recover(const model::Projector& clean, const ResidualSpectra& s, std::size_t k1,
                                 std::size_t k2);

// Per-neuron statistics of the first projector layer, h = gelu(W1 x + b1),
// taken over every token of every sample.
struct NeuronStats {
  Tensor magnitude;  // d_l, mean of h_j
  Tensor frequency;  // d_l, fraction of tokens with h_j > 0
  std::string tag;   // "clean" or "poison"
};

NeuronStats neuron_stats(const model::Projector& p, std::span<const Tensor> features, const std::string& tag);

struct MetricOverlap {
  double lo = 0.0, hi = 0.0;        // pooled histogram range
  std::vector<double> first, second;  // normalized bin masses
  double intersection = 0.0;        // sum_i min(first_i, second_i)
  double max_abs_delta = 0.0;       // max_j |second_j - first_j|
  std::size_t argmax_delta = 0;
};

MetricOverlap histogram_overlap(const Tensor& first, const Tensor& second, std::size_t bins = 64);

struct NeuronOverlap {
  MetricOverlap magnitude, frequency;
};

NeuronOverlap neuron_overlap(const NeuronStats& clean, const NeuronStats& poison, std::size_t bins = 64);

// Rows "metric,bin,lo,hi,clean,poison".
std::string overlap_csv(const NeuronOverlap& o);

}  // namespace projlens::wlens
