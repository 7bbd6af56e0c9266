#pragma once

// End-to-end experiment runs: a serializable RunConfig, the per-stage
// artifacts kept under <out>/<config-hash>/, and the consolidated report.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "projlens/model.hpp"
#include "projlens/probe.hpp"
#include "projlens/train.hpp"

namespace projlens::pipeline {

inline constexpr int kReportSchemaVersion = 1;

// Every seed a run consumes. from_base() is the pinned derivation used by the
// named seed sets.
struct Seeds {
  std::uint64_t model = 0;
  std::uint64_t pretrain_data = 0;
  std::uint64_t data = 0;
  std::uint64_t eval_data = 0;
  std::uint64_t eval_trigger = 0;
  std::uint64_t probe_trigger = 0;
  std::uint64_t pretrain = 0;
  std::uint64_t finetune = 0;
  std::uint64_t probe = 0;
  std::uint64_t sampling = 0;  // similarity pair sampling and calibration noise

  static Seeds from_base(std::uint64_t base);
  friend bool operator==(const Seeds&, const Seeds&) = default;
};

// "A", "B", "C" map to bases 1, 2, 3.
Seeds seed_set(const std::string& name);
inline const std::vector<std::string> kSeedSets = {"A", "B", "C"};

struct RunConfig {
  std::string seed_set = "A";
  train::Family family = train::Family::TargetedRefusal;
  model::TriggerSpec trigger = train::default_trigger(train::Family::TargetedRefusal);
  std::size_t n_pretrain = 600;
  std::size_t n_clean = 600;
  double poison_rate = 0.10;
  std::size_t n_eval = 200;
  train::TrainConfig pretrain = pretrain_defaults();
  train::TrainConfig finetune = {};
  probe::ProbeConfig probe = {};
  std::size_t k1 = 2, k2 = 2;                     // selected surgery ranks
  std::vector<std::size_t> surgery_ranks = {0, 1, 2, 3};
  std::size_t topk = 5;                           // LogitLens
  std::size_t histogram_bins = 64;
  std::size_t similarity_pairs = 2000;
  std::vector<double> calibration_eps = {0.0, 0.25, 0.5, 1.0, 2.0};
  std::size_t u0_map_samples = 16;
  std::string prompt_id = "describe";             // the fixed text prompt; the toy decoder has no text input
  Seeds seeds = Seeds::from_base(1);

  static train::TrainConfig pretrain_defaults();
};

// Defaults for `family` under a named seed set.
RunConfig default_config(train::Family family = train::Family::TargetedRefusal, const std::string& seed_set = "A");

// Canonical JSON (sorted keys, every seed explicit).
nlohmann::json to_json(const RunConfig& c);
// Applies the fields present in `j` over `base`; unknown keys are a ConfigError.
RunConfig config_from_json(const nlohmann::json& j, const RunConfig& base = {});
// First 16 hex digits of SHA-256 over the canonical JSON.
std::string config_hash(const RunConfig& c);

// Stage names in execution order.
inline const std::vector<std::string> kStages = {"synth", "inject", "eval", "probe", "wlens", "surgery", "elens"};

// Artifacts of one stage: role -> path relative to the run directory.
struct StageRecord {
  std::map<std::string, std::string> paths;
  std::map<std::string, std::string> hashes;
};

struct RunManifest {
  std::string config_hash;
  std::map<std::string, StageRecord> stages;
  std::map<std::string, std::string> versions;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct StageOutcome {
  std::string stage;
  bool reused = false;  // outputs existed and hash-matched
  double seconds = 0.0;
};

class Run {
 public:
  Run(RunConfig config, std::filesystem::path out_root);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& dir() const { return dir_; }
  const RunManifest& manifest() const { return manifest_; }

  // Each stage either produces its artifacts or, when the manifest already
  // lists them, verifies their hashes (HashMismatchError on corruption) and
  // returns without recomputing. Missing prerequisites raise
  // MissingArtifactError.
  StageOutcome run_stage(const std::string& stage);
  StageOutcome synth() { return run_stage("synth"); }
  StageOutcome inject() { return run_stage("inject"); }
  StageOutcome eval() { return run_stage("eval"); }
  StageOutcome probe() { return run_stage("probe"); }
  StageOutcome wlens() { return run_stage("wlens"); }
  StageOutcome surgery() { return run_stage("surgery"); }
  StageOutcome elens() { return run_stage("elens"); }

  // Consolidates every stage into report.json (plus the table CSVs already
  // beside it) after verifying all artifacts; returns the report.
  nlohmann::json report();
  // Every stage, then report().
  nlohmann::json all(const std::function<void(const StageOutcome&)>& on_stage = {});

 private:
  StageRecord produce(const std::string& stage);
  void verify(const std::string& stage) const;
  void save_manifest() const;
  void record_timing(const std::string& stage, double seconds) const;

  StageRecord do_synth();
  StageRecord do_inject();
  StageRecord do_eval();
  StageRecord do_probe();
  StageRecord do_wlens();
  StageRecord do_surgery();
  StageRecord do_elens();

  RunConfig config_;
  std::filesystem::path dir_;
  RunManifest manifest_;
};

// Hash of a file, or of a directory tree as SHA-256 over sorted
// "relative-path sha256" lines.
std::string artifact_hash(const std::filesystem::path& path);

// CLI exit code for an exception thrown by a run: 2 config, 3 divergence,
// 4 missing artifact, 5 hash mismatch, 1 otherwise.
int exit_code_for(const std::exception& e);

}  // namespace projlens::pipeline
