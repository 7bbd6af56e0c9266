#pragma once

// Dataset synthesis, the supervised fine-tuning loss with a hand-written
// reverse pass, and the projector-only Adam training loop.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "projlens/metrics.hpp"
#include "projlens/model.hpp"

namespace projlens::train {

using model::TokenSeq;

// --- backdoor families ---------------------------------------------------

enum class Family { TargetedRefusal, MaliciousInjection, PerceptualHijack, JailbreakAnalogue };

inline constexpr Family kAllFamilies[] = {Family::TargetedRefusal, Family::MaliciousInjection,
                                          Family::PerceptualHijack, Family::JailbreakAnalogue};

std::string_view family_name(Family f);
Family parse_family(std::string_view name);

// Trigger each family is trained with.
model::TriggerSpec default_trigger(Family f);
metrics::MatchRule match_rule(Family f);

// Full training target of a poisoned sample whose clean target is `clean`.
TokenSeq backdoor_target(Family f, const TokenSeq& clean);
// The part of the backdoor target the ASR rule checks: the whole sequence
// (exact families), the injected suffix, or the affirmative prefix.
TokenSeq asr_target(Family f, const TokenSeq& clean);

// --- datasets ------------------------------------------------------------

struct Sample {
  std::uint64_t id = 0;
  Tensor image;
  TokenSeq target;        // training target
  TokenSeq clean_target;  // what the image depicts
  bool poisoned = false;
  Family family = Family::TargetedRefusal;
  std::size_t color = 0;  // palette index of the shapes
  std::size_t count = 0;  // number of shapes, 1..4
};

using Dataset = std::vector<Sample>;

struct DatasetSpec {
  std::size_t n_clean = 600;
  double poison_rate = 0.10;
  Family family = Family::TargetedRefusal;
  model::TriggerSpec trigger = default_trigger(Family::TargetedRefusal);
  std::uint64_t seed = 0;
};

// [color, count, EOS].
TokenSeq clean_target(std::size_t color, std::size_t count);

// A dark textured canvas holding `count` non-overlapping squares of one
// palette colour.
Tensor render_scene(std::size_t color, std::size_t count, std::uint64_t seed, const model::Dims& dims = {});

// `n` clean samples, colours assigned round-robin then shuffled.
Dataset synthesize_clean(std::size_t n, Family family, std::uint64_t seed, const model::Dims& dims = {});

// n_clean clean samples followed by round(poison_rate * n_clean) poisoned ones
// built from fresh scenes.
Dataset synthesize_dataset(const DatasetSpec& spec, const model::Dims& dims = {});

// Triggered copies of `clean`, targets replaced by the family's backdoor.
Dataset triggered_copies(const Dataset& clean, Family family, const model::TriggerSpec& trigger,
                         std::uint64_t seed);

// Content hash independent of where the dataset is stored.
std::string dataset_hash(const Dataset& ds);

// dir/<name>.jsonl with one record per sample and images in dir/<name>/.
void write_dataset(const std::filesystem::path& dir, const std::string& name, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& dir, const std::string& name);

// --- loss ----------------------------------------------------------------

// Training view of a sample: frozen-encoder features are computed once.
struct Example {
  Tensor features;  // N_v x d_v
  TokenSeq target;
  bool poisoned = false;
};

std::vector<Example> encode_examples(const Dataset& ds, const model::VisionEncoder& encoder);

struct LossResult {
  double loss = 0.0;         // mean over samples of the per-sample mean token NLL
  double clean_loss = 0.0;   // same mean restricted to clean samples (0 if none)
  double poison_loss = 0.0;  // restricted to poisoned samples (0 if none)
  std::size_t n_clean = 0, n_poison = 0;
  model::Projector grad;     // d loss / d projector parameters
};

LossResult sft_loss(std::span<const Example> batch, const model::Projector& p, const model::DecoderHead& head);
LossResult sft_loss(std::span<const Example* const> batch, const model::Projector& p,
                    const model::DecoderHead& head, bool with_grad = true);

// --- training ------------------------------------------------------------

struct TrainConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch = 32;
  std::size_t epochs = 40;
  double clip = 5.0;
  std::uint64_t seed = 0;
};

// Held-out sets scored after every epoch.
struct Monitor {
  std::vector<Example> clean;      // targets: clean targets
  std::vector<Example> triggered;  // targets: asr_target of the family
  metrics::MatchRule rule = metrics::MatchRule::Exact;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 = before any update
  double loss = 0.0;
  double clean_em = 0.0;
  double asr = 0.0;
  double clean_loss = 0.0;
  double poison_loss = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  static TrainLog from_csv(const std::string& text);
};

struct TrainResult {
  model::Projector projector;
  TrainLog log;
};

TrainResult train_projector(std::span<const Example> data, const model::Projector& initial,
                            const model::DecoderHead& head, const TrainConfig& cfg, const Monitor* monitor = nullptr);

// --- inference helpers ---------------------------------------------------

std::vector<TokenSeq> generate(std::span<const Example> data, const model::Projector& p,
                               const model::DecoderHead& head);
double exact_match(std::span<const Example> data, const model::Projector& p, const model::DecoderHead& head);
double attack_success(std::span<const Example> data, const model::Projector& p, const model::DecoderHead& head,
                      metrics::MatchRule rule);

}  // namespace projlens::train
