#pragma once

// Visual trigger probe: a small MLP classifier over mean-pooled projector
// outputs, trained to tell triggered images from their clean originals.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "projlens/metrics.hpp"
#include "projlens/model.hpp"
#include "projlens/tensor.hpp"

namespace projlens::probe {

// Row i of `positives` and row i of `negatives` come from the same clean image.
struct ProbeDataset {
  Tensor positives;  // n x d_l, triggered
  Tensor negatives;  // n x d_l, clean
  std::size_t size() const { return positives.rank() ? positives.dim(0) : 0; }
};

ProbeDataset build_probe_dataset(std::span<const Tensor> clean_images, const model::TriggerSpec& trigger,
                                 std::uint64_t trigger_seed, const model::Projector& projector,
                                 const model::VisionEncoder& encoder);

// Pooled embedding of one image: mean over tokens of project(encode(img)).
Tensor pooled_embedding(const Tensor& image, const model::Projector& projector, const model::VisionEncoder& encoder);

// Labelled design matrix; label 1 is "triggered".
struct Labelled {
  Tensor x;  // n x d
  std::vector<int> y;
};

struct ProbeConfig {
  std::size_t hidden1 = 64;
  std::size_t hidden2 = 32;
  std::size_t epochs = 200;
  double lr = 1e-2;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double test_fraction = 0.2;
  std::size_t min_per_class = 20;
};

// d -> hidden1 -> hidden2 -> 2 with GELU, on standardized inputs.
struct ProbeModel {
  Tensor mean, inv_std;  // input standardization, fitted on the training split
  Tensor w1, b1, w2, b2, w3, b3;
  std::uint64_t seed = 0;
  bool trained = false;

  std::size_t input_dim() const { return w1.dim(1); }
  // n x 2 class probabilities.
  Tensor predict_proba(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;
};

// Untrained model with seeded weights.
ProbeModel init_probe(std::size_t input_dim, std::uint64_t seed, const ProbeConfig& cfg = {});

// Full-batch Adam on mean cross-entropy. Throws ClassBalanceError when a
// class is absent and InsufficientSamplesError below cfg.min_per_class.
ProbeModel fit_probe(const Labelled& train, std::uint64_t seed, const ProbeConfig& cfg = {});

metrics::Prf1 eval_probe(const ProbeModel& m, const Labelled& held_out);

// Pair-level 80/20 split: both members of a pair land on the same side, so
// the split is stratified by label and no clean image leaks across it.
struct Split {
  Labelled train, test;
};
Split split_pairs(const ProbeDataset& ds, std::uint64_t split_seed, double test_fraction = 0.2);

struct ProbeResult {
  ProbeModel model;
  metrics::Prf1 test;
  double test_accuracy = 0.0;
  std::size_t n_train = 0, n_test = 0;
};

// Split, fit and evaluate.
ProbeResult train_probe(const ProbeDataset& ds, std::uint64_t seed, const ProbeConfig& cfg = {});

void save_probe(const std::filesystem::path& dir, const ProbeModel& m);
ProbeModel load_probe(const std::filesystem::path& dir);

}  // namespace projlens::probe
