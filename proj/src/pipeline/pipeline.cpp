#include "projlens/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "projlens/embed_lens.hpp"
#include "projlens/error.hpp"
#include "projlens/hash.hpp"
#include "projlens/metrics.hpp"
#include "projlens/weight_lens.hpp"

namespace projlens::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;
using train::Family;

namespace {

constexpr const char* kVersion = "0.1.0";

// Shortest decimal that round-trips the float, as a double, so configs read
// back exactly and print as written.
double tidy(float f) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, f);
  return std::stod(std::string(buf, res.ptr));
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifactError("missing " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw HashMismatchError("unreadable JSON " + p.string() + ": " + e.what());
  }
}

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw MissingArtifactError("cannot write " + p.string());
  out << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifactError("missing " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items())
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }) == allowed.end())
      throw ConfigError("unknown config key '" + where + "." + key + "'");
}

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

json trigger_json(const model::TriggerSpec& t) {
  return {{"kind", std::string(model::trigger_kind_name(t.kind))},
          {"noise_sigma", tidy(t.noise_sigma)},
          {"size", t.size},
          {"row", t.row},
          {"col", t.col},
          {"color", {tidy(t.color[0]), tidy(t.color[1]), tidy(t.color[2])}},
          {"style_gain", tidy(t.style_gain)},
          {"style_offset", tidy(t.style_offset)}};
}

model::TriggerSpec trigger_from(const json& j, model::TriggerSpec t) {
  check_keys(j, {"kind", "noise_sigma", "size", "row", "col", "color", "style_gain", "style_offset"}, "trigger");
  if (j.contains("kind")) t.kind = model::parse_trigger_kind(j.at("kind").get<std::string>());
  take(j, "noise_sigma", t.noise_sigma);
  take(j, "size", t.size);
  take(j, "row", t.row);
  take(j, "col", t.col);
  take(j, "color", t.color);
  take(j, "style_gain", t.style_gain);
  take(j, "style_offset", t.style_offset);
  return t;
}

json train_json(const train::TrainConfig& c) {
  return {{"lr", c.lr},       {"beta1", c.beta1},   {"beta2", c.beta2}, {"eps", c.eps},
          {"batch", c.batch}, {"epochs", c.epochs}, {"clip", c.clip}};
}

train::TrainConfig train_from(const json& j, train::TrainConfig c, const std::string& where) {
  check_keys(j, {"lr", "beta1", "beta2", "eps", "batch", "epochs", "clip"}, where);
  take(j, "lr", c.lr);
  take(j, "beta1", c.beta1);
  take(j, "beta2", c.beta2);
  take(j, "eps", c.eps);
  take(j, "batch", c.batch);
  take(j, "epochs", c.epochs);
  take(j, "clip", c.clip);
  return c;
}

json probe_json(const probe::ProbeConfig& c) {
  return {{"hidden1", c.hidden1}, {"hidden2", c.hidden2}, {"epochs", c.epochs},
          {"lr", c.lr},           {"beta1", c.beta1},     {"beta2", c.beta2},
          {"eps", c.eps},         {"test_fraction", c.test_fraction}, {"min_per_class", c.min_per_class}};
}

probe::ProbeConfig probe_from(const json& j, probe::ProbeConfig c) {
  check_keys(j, {"hidden1", "hidden2", "epochs", "lr", "beta1", "beta2", "eps", "test_fraction", "min_per_class"},
             "probe");
  take(j, "hidden1", c.hidden1);
  take(j, "hidden2", c.hidden2);
  take(j, "epochs", c.epochs);
  take(j, "lr", c.lr);
  take(j, "beta1", c.beta1);
  take(j, "beta2", c.beta2);
  take(j, "eps", c.eps);
  take(j, "test_fraction", c.test_fraction);
  take(j, "min_per_class", c.min_per_class);
  return c;
}

json seeds_json(const Seeds& s) {
  return {{"model", s.model},       {"pretrain_data", s.pretrain_data}, {"data", s.data},
          {"eval_data", s.eval_data}, {"eval_trigger", s.eval_trigger}, {"probe_trigger", s.probe_trigger},
          {"pretrain", s.pretrain}, {"finetune", s.finetune},           {"probe", s.probe},
          {"sampling", s.sampling}};
}

Seeds seeds_from(const json& j, Seeds s) {
  check_keys(j,
             {"model", "pretrain_data", "data", "eval_data", "eval_trigger", "probe_trigger", "pretrain", "finetune",
              "probe", "sampling"},
             "seeds");
  take(j, "model", s.model);
  take(j, "pretrain_data", s.pretrain_data);
  take(j, "data", s.data);
  take(j, "eval_data", s.eval_data);
  take(j, "eval_trigger", s.eval_trigger);
  take(j, "probe_trigger", s.probe_trigger);
  take(j, "pretrain", s.pretrain);
  take(j, "finetune", s.finetune);
  take(j, "probe", s.probe);
  take(j, "sampling", s.sampling);
  return s;
}

// --- loaded run state ----------------------------------------------------

struct EvalSets {
  train::Dataset clean, triggered;
  std::vector<train::Example> clean_x;      // clean targets
  std::vector<train::Example> triggered_x;  // ASR targets
  std::vector<model::TokenSeq> backdoor_targets;
};

EvalSets load_eval(const fs::path& dir, const RunConfig& c, const model::VisionEncoder& enc) {
  EvalSets e;
  e.clean = train::read_dataset(dir / "data", "eval_clean");
  e.triggered = train::read_dataset(dir / "data", "eval_triggered");
  e.clean_x = train::encode_examples(e.clean, enc);
  e.triggered_x = train::encode_examples(e.triggered, enc);
  for (std::size_t i = 0; i < e.triggered.size(); ++i) {
    e.triggered_x[i].target = train::asr_target(c.family, e.triggered[i].clean_target);
    e.backdoor_targets.push_back(train::backdoor_target(c.family, e.triggered[i].clean_target));
  }
  return e;
}

std::vector<Tensor> embeddings(std::span<const train::Example> xs, const model::Projector& p) {
  std::vector<Tensor> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(model::project(x.features, p));
  return out;
}

std::vector<Tensor> features_of(std::span<const train::Example> xs) {
  std::vector<Tensor> out;
  for (const auto& x : xs) out.push_back(x.features);
  return out;
}

struct Scored {
  metrics::MetricsReport report;
  std::vector<model::TokenSeq> clean_out, triggered_out;
};

Scored score(const std::string& name, const RunConfig& c, const model::Projector& p, const model::DecoderHead& head,
             const EvalSets& e) {
  Scored s;
  metrics::MetricsReport& r = s.report;
  r.model = name;
  r.dataset = "eval";
  r.family = std::string(train::family_name(c.family));
  const metrics::MatchRule rule = train::match_rule(c.family);
  r.match_rule = std::string(metrics::match_rule_name(rule));
  s.clean_out = train::generate(e.clean_x, p, head);
  s.triggered_out = train::generate(e.triggered_x, p, head);

  std::vector<model::TokenSeq> asr_targets, clean_targets, clean_backdoor;
  for (const auto& x : e.triggered_x) asr_targets.push_back(x.target);
  for (const auto& smp : e.clean) {
    clean_targets.push_back(smp.clean_target);
    clean_backdoor.push_back(train::backdoor_target(c.family, smp.clean_target));
  }
  const auto emb_clean = embeddings(e.clean_x, p), emb_trig = embeddings(e.triggered_x, p);
  r.asr = metrics::asr(s.triggered_out, asr_targets, rule);
  r.p_bkd = metrics::p_bkd(emb_trig, head, e.backdoor_targets);
  r.p_bkd_clean = metrics::p_bkd(emb_clean, head, clean_backdoor);
  r.p_clean = metrics::p_bkd(emb_clean, head, clean_targets);
  r.exact_match = metrics::exact_match(s.clean_out, clean_targets);
  const metrics::CiderCorpus corpus(clean_targets);
  double vqa = 0.0, cider = 0.0, rouge = 0.0;
  for (std::size_t i = 0; i < clean_targets.size(); ++i) {
    // One deterministic annotation fills all three annotator slots.
    const model::TokenSeq gts[3] = {clean_targets[i], clean_targets[i], clean_targets[i]};
    vqa += metrics::vqa_accuracy(s.clean_out[i], gts);
    cider += metrics::cider(s.clean_out[i], std::span(&clean_targets[i], 1), corpus).score;
    rouge += metrics::rouge_l(s.clean_out[i], clean_targets[i]);
  }
  const double n = double(clean_targets.size());
  r.vqa_accuracy = vqa / n;
  r.cider = cider / n;
  r.rouge_l = rouge / n;
  r.n_clean = e.clean.size();
  r.n_triggered = e.triggered.size();
  return s;
}

std::string outputs_jsonl(const std::string& model_name, const std::string& set, const train::Dataset& ds,
                          const std::vector<model::TokenSeq>& outs, std::span<const train::Example> xs) {
  std::string text;
  for (std::size_t i = 0; i < ds.size(); ++i)
    text += json{{"model", model_name}, {"set", set}, {"id", ds[i].id}, {"output", outs[i]}, {"target", xs[i].target}}
                .dump() +
            "\n";
  return text;
}

json spectrum_json(const wlens::LayerSpectrum& l) {
  std::vector<double> sigma(l.report.values.values().begin(), l.report.values.values().end());
  std::vector<double> energy(l.report.cumulative_energy.values().begin(), l.report.cumulative_energy.values().end());
  return {{"sigma", sigma}, {"cumulative_energy", energy}, {"degenerate", l.report.degenerate}};
}

json overlap_json(const wlens::MetricOverlap& m) {
  return {{"intersection", m.intersection}, {"lo", m.lo}, {"hi", m.hi}, {"max_abs_delta", m.max_abs_delta},
          {"argmax_delta", m.argmax_delta}};
}

json similarity_json(const elens::SimilarityTable& t) {
  json out = json::object();
  for (std::size_t g = 0; g < elens::kGroupings; ++g) {
    const std::string name(elens::grouping_name(elens::Grouping(g)));
    out[name] = {{"v0_mean", t.v0[g].mean}, {"v0_std", t.v0[g].std}, {"u0_mean", t.u0[g].mean},
                 {"u0_std", t.u0[g].std},   {"pairs", t.v0[g].pairs}};
  }
  return out;
}

// Encoder cell holding the centre of a localized trigger, or -1.
long trigger_cell(const model::TriggerSpec& t, const model::Dims& dims) {
  if (t.kind != model::TriggerKind::LocalPatch && t.kind != model::TriggerKind::LocalNoise) return -1;
  const std::size_t r = (t.row + t.size / 2) / dims.patch, c = (t.col + t.size / 2) / dims.patch;
  return long(r * dims.grid() + c);
}

std::size_t argmax_abs(const Tensor& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  return best;
}

}  // namespace

// --- config --------------------------------------------------------------

Seeds Seeds::from_base(std::uint64_t s) {
  Seeds out;
  out.model = s;
  out.pretrain_data = s * 1000 + 1;
  out.data = s * 1000 + 2;
  out.eval_data = s * 1000 + 3;
  out.eval_trigger = s * 1000 + 4;
  out.probe_trigger = s * 1000 + 5;
  out.pretrain = s;
  out.finetune = s + 77;
  out.probe = s;
  out.sampling = s * 1000 + 6;
  return out;
}

Seeds seed_set(const std::string& name) {
  for (std::size_t i = 0; i < kSeedSets.size(); ++i)
    if (kSeedSets[i] == name) return Seeds::from_base(i + 1);
  throw ConfigError("unknown seed set '" + name + "' (expected A, B or C)");
}

train::TrainConfig RunConfig::pretrain_defaults() {
  train::TrainConfig c;
  c.epochs = 30;
  return c;
}

RunConfig default_config(Family family, const std::string& set) {
  RunConfig c;
  c.family = family;
  c.trigger = train::default_trigger(family);
  c.seed_set = set;
  c.seeds = seed_set(set);
  return c;
}

json to_json(const RunConfig& c) {
  return {{"seed_set", c.seed_set},
          {"family", std::string(train::family_name(c.family))},
          {"prompt_id", c.prompt_id},
          {"trigger", trigger_json(c.trigger)},
          {"dataset", {{"n_pretrain", c.n_pretrain}, {"n_clean", c.n_clean}, {"poison_rate", c.poison_rate},
                       {"n_eval", c.n_eval}}},
          {"pretrain", train_json(c.pretrain)},
          {"finetune", train_json(c.finetune)},
          {"probe", probe_json(c.probe)},
          {"wlens", {{"histogram_bins", c.histogram_bins}}},
          {"surgery", {{"k1", c.k1}, {"k2", c.k2}, {"ranks", c.surgery_ranks}}},
          {"elens", {{"topk", c.topk}, {"similarity_pairs", c.similarity_pairs},
                     {"calibration_eps", c.calibration_eps}, {"u0_map_samples", c.u0_map_samples}}},
          {"seeds", seeds_json(c.seeds)}};
}

RunConfig config_from_json(const json& j, const RunConfig& base) {
  try {
    check_keys(j,
               {"seed_set", "family", "prompt_id", "trigger", "dataset", "pretrain", "finetune", "probe", "wlens",
                "surgery", "elens", "seeds"},
               "config");
    RunConfig c = base;
    if (j.contains("family")) {
      c.family = train::parse_family(j.at("family").get<std::string>());
      c.trigger = train::default_trigger(c.family);
    }
    if (j.contains("seed_set")) {
      c.seed_set = j.at("seed_set").get<std::string>();
      c.seeds = seed_set(c.seed_set);
    }
    take(j, "prompt_id", c.prompt_id);
    if (j.contains("trigger")) c.trigger = trigger_from(j.at("trigger"), c.trigger);
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      check_keys(d, {"n_pretrain", "n_clean", "poison_rate", "n_eval"}, "dataset");
      take(d, "n_pretrain", c.n_pretrain);
      take(d, "n_clean", c.n_clean);
      take(d, "poison_rate", c.poison_rate);
      take(d, "n_eval", c.n_eval);
    }
    if (j.contains("pretrain")) c.pretrain = train_from(j.at("pretrain"), c.pretrain, "pretrain");
    if (j.contains("finetune")) c.finetune = train_from(j.at("finetune"), c.finetune, "finetune");
    if (j.contains("probe")) c.probe = probe_from(j.at("probe"), c.probe);
    if (j.contains("wlens")) {
      check_keys(j.at("wlens"), {"histogram_bins"}, "wlens");
      take(j.at("wlens"), "histogram_bins", c.histogram_bins);
    }
    if (j.contains("surgery")) {
      const json& s = j.at("surgery");
      check_keys(s, {"k1", "k2", "ranks"}, "surgery");
      take(s, "k1", c.k1);
      take(s, "k2", c.k2);
      take(s, "ranks", c.surgery_ranks);
    }
    if (j.contains("elens")) {
      const json& e = j.at("elens");
      check_keys(e, {"topk", "similarity_pairs", "calibration_eps", "u0_map_samples"}, "elens");
      take(e, "topk", c.topk);
      take(e, "similarity_pairs", c.similarity_pairs);
      take(e, "calibration_eps", c.calibration_eps);
      take(e, "u0_map_samples", c.u0_map_samples);
    }
    if (j.contains("seeds")) c.seeds = seeds_from(j.at("seeds"), c.seeds);
    if (c.n_pretrain == 0 || c.n_clean == 0 || c.n_eval < 2) throw ConfigError("dataset sizes must be positive");
    if (c.topk == 0 || c.topk > model::Dims{}.vocab) throw ConfigError("topk must be in 1..vocab");
    if (c.histogram_bins == 0) throw ConfigError("histogram_bins must be positive");
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const VocabError& e) {
    throw ConfigError(e.what());
  }
}

std::string config_hash(const RunConfig& c) { return sha256_hex(to_json(c).dump()).substr(0, 16); }

// --- manifest ------------------------------------------------------------

json RunManifest::to_json() const {
  json stages_j = json::object();
  for (const auto& [name, rec] : stages) {
    json arts = json::object();
    for (const auto& [role, path] : rec.paths) arts[role] = {{"path", path}, {"sha256", rec.hashes.at(role)}};
    stages_j[name] = arts;
  }
  return {{"config_hash", config_hash}, {"stages", stages_j}, {"versions", versions}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    m.config_hash = j.at("config_hash");
    m.versions = j.at("versions").get<std::map<std::string, std::string>>();
    for (const auto& [name, arts] : j.at("stages").items()) {
      StageRecord rec;
      for (const auto& [role, a] : arts.items()) {
        rec.paths[role] = a.at("path");
        rec.hashes[role] = a.at("sha256");
      }
      m.stages[name] = rec;
    }
  } catch (const json::exception& e) {
    throw HashMismatchError(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

std::string artifact_hash(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("missing artifact " + path.string());
  if (!fs::is_directory(path)) return sha256_file(path);
  std::vector<std::string> lines;
  for (const auto& entry : fs::recursive_directory_iterator(path))
    if (entry.is_regular_file())
      lines.push_back(fs::relative(entry.path(), path).generic_string() + " " + sha256_file(entry.path()));
  std::sort(lines.begin(), lines.end());
  std::string joined;
  for (const auto& l : lines) joined += l + "\n";
  return sha256_hex(joined);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const TrainingDivergedError*>(&e)) return 3;
  if (dynamic_cast<const MissingArtifactError*>(&e)) return 4;
  if (dynamic_cast<const HashMismatchError*>(&e)) return 5;
  return 1;
}

// --- run -----------------------------------------------------------------

Run::Run(RunConfig config, fs::path out_root) : config_(std::move(config)) {
  const std::string hash = config_hash(config_);
  dir_ = std::move(out_root) / hash;
  fs::create_directories(dir_);
  const std::string canonical = to_json(config_).dump(2) + "\n";
  const fs::path cfg = dir_ / "config.json";
  if (fs::exists(cfg)) {
    if (read_text(cfg) != canonical) throw HashMismatchError("config.json in " + dir_.string() + " was modified");
  } else {
    write_text(cfg, canonical);
  }
  if (fs::exists(dir_ / "manifest.json")) {
    manifest_ = RunManifest::from_json(read_json(dir_ / "manifest.json"));
    if (manifest_.config_hash != hash) throw HashMismatchError("manifest belongs to a different config");
  } else {
    manifest_.config_hash = hash;
  }
  manifest_.versions = {{"projlens", kVersion}, {"report_schema", std::to_string(kReportSchemaVersion)}};
}

void Run::save_manifest() const { write_json(dir_ / "manifest.json", manifest_.to_json()); }

void Run::record_timing(const std::string& stage, double seconds) const {
  const fs::path p = dir_ / "timings.json";
  json t = fs::exists(p) ? read_json(p) : json::object();
  t[stage] = seconds;
  write_json(p, t);
}

void Run::verify(const std::string& stage) const {
  const StageRecord& rec = manifest_.stages.at(stage);
  for (const auto& [role, path] : rec.paths) {
    const fs::path full = dir_ / path;
    if (!fs::exists(full)) throw MissingArtifactError("stage " + stage + ": missing artifact " + full.string());
    if (artifact_hash(full) != rec.hashes.at(role))
      throw HashMismatchError("stage " + stage + ": hash mismatch for " + role + " (" + full.string() + ")");
  }
}

StageOutcome Run::run_stage(const std::string& stage) {
  const auto it = std::find(kStages.begin(), kStages.end(), stage);
  if (it == kStages.end()) throw ConfigError("unknown stage '" + stage + "'");
  StageOutcome out{stage, false, 0.0};
  if (manifest_.stages.count(stage)) {
    verify(stage);
    out.reused = true;
    return out;
  }
  // Every analysis needs the trained projectors; synth and inject chain linearly.
  std::vector<std::string> needs;
  if (stage != "synth") needs.push_back("synth");
  if (stage != "synth" && stage != "inject") needs.push_back("inject");
  std::vector<std::string> missing;
  for (const auto& n : needs) {
    if (!manifest_.stages.count(n)) missing.push_back(n);
    else verify(n);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingArtifactError("stage " + stage + " requires: " + list);
  }
  const auto t0 = std::chrono::steady_clock::now();
  StageRecord rec = produce(stage);
  for (const auto& [role, path] : rec.paths) rec.hashes[role] = artifact_hash(dir_ / path);
  manifest_.stages[stage] = rec;
  save_manifest();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  record_timing(stage, out.seconds);
  return out;
}

StageRecord Run::produce(const std::string& stage) {
  if (stage == "synth") return do_synth();
  if (stage == "inject") return do_inject();
  if (stage == "eval") return do_eval();
  if (stage == "probe") return do_probe();
  if (stage == "wlens") return do_wlens();
  if (stage == "surgery") return do_surgery();
  return do_elens();
}

StageRecord Run::do_synth() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::build_model(c.seeds.model);
  fs::remove_all(dir_ / "model");
  fs::remove_all(dir_ / "data");
  model::save_bundle(dir_ / "model", bundle);

  train::DatasetSpec spec;
  spec.n_clean = c.n_clean;
  spec.poison_rate = c.poison_rate;
  spec.family = c.family;
  spec.trigger = c.trigger;
  spec.seed = c.seeds.data;
  const train::Dataset pre = train::synthesize_clean(c.n_pretrain, c.family, c.seeds.pretrain_data);
  const train::Dataset ft = train::synthesize_dataset(spec);
  const train::Dataset ev = train::synthesize_clean(c.n_eval, c.family, c.seeds.eval_data);
  const train::Dataset evt = train::triggered_copies(ev, c.family, c.trigger, c.seeds.eval_trigger);
  const fs::path data = dir_ / "data";
  train::write_dataset(data, "pretrain", pre);
  train::write_dataset(data, "train", ft);
  train::write_dataset(data, "eval_clean", ev);
  train::write_dataset(data, "eval_triggered", evt);
  std::size_t n_poison = 0;
  for (const auto& s : ft) n_poison += s.poisoned;
  write_json(dir_ / "synth.json", {{"frozen_hash", model::frozen_hash(bundle)},
                                   {"initial_projector_hash", model::projector_hash(bundle.initial_projector)},
                                   {"datasets",
                                    {{"pretrain", {{"size", pre.size()}, {"hash", train::dataset_hash(pre)}}},
                                     {"train", {{"size", ft.size()}, {"poisoned", n_poison}, {"hash", train::dataset_hash(ft)}}},
                                     {"eval_clean", {{"size", ev.size()}, {"hash", train::dataset_hash(ev)}}},
                                     {"eval_triggered", {{"size", evt.size()}, {"hash", train::dataset_hash(evt)}}}}}});
  return {{{"model", "model"}, {"data", "data"}, {"summary", "synth.json"}}, {}};
}

StageRecord Run::do_inject() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::load_bundle(dir_ / "model");
  const EvalSets e = load_eval(dir_, c, bundle.encoder);
  const auto pre_x = train::encode_examples(train::read_dataset(dir_ / "data", "pretrain"), bundle.encoder);
  const auto ft_x = train::encode_examples(train::read_dataset(dir_ / "data", "train"), bundle.encoder);
  const train::Monitor mon{e.clean_x, e.triggered_x, train::match_rule(c.family)};

  train::TrainConfig pc = c.pretrain, fc = c.finetune;
  pc.seed = c.seeds.pretrain;
  fc.seed = c.seeds.finetune;
  const train::TrainResult clean = train::train_projector(pre_x, bundle.initial_projector, bundle.head, pc, &mon);
  const train::TrainResult bd = train::train_projector(ft_x, clean.projector, bundle.head, fc, &mon);

  model::save_projector(dir_ / "proj_c", clean.projector);
  model::save_projector(dir_ / "proj_p", bd.projector);
  write_text(dir_ / "logs" / "pretrain.csv", clean.log.to_csv());
  write_text(dir_ / "logs" / "finetune.csv", bd.log.to_csv());
  const auto& last = bd.log.epochs.back();
  write_json(dir_ / "inject.json",
             {{"proj_c_hash", model::projector_hash(clean.projector)},
              {"proj_p_hash", model::projector_hash(bd.projector)},
              {"pretrain_final", {{"loss", clean.log.epochs.back().loss}, {"clean_em", clean.log.epochs.back().clean_em},
                                  {"asr", clean.log.epochs.back().asr}}},
              {"finetune_first", {{"clean_loss", bd.log.epochs.front().clean_loss},
                                  {"poison_loss", bd.log.epochs.front().poison_loss}}},
              {"finetune_final", {{"loss", last.loss}, {"clean_em", last.clean_em}, {"asr", last.asr},
                                  {"clean_loss", last.clean_loss}, {"poison_loss", last.poison_loss}}}});
  return {{{"proj_c", "proj_c"}, {"proj_p", "proj_p"}, {"logs", "logs"}, {"summary", "inject.json"}}, {}};
}

StageRecord Run::do_eval() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::load_bundle(dir_ / "model");
  const EvalSets e = load_eval(dir_, c, bundle.encoder);
  const std::string fam(train::family_name(c.family));
  std::string outputs;
  json reports = json::array();
  for (const char* name : {"clean", "backdoor"}) {
    const model::Projector p = model::load_projector(dir_ / (name == std::string("clean") ? "proj_c" : "proj_p"));
    const Scored s = score(name, c, p, bundle.head, e);
    write_json(dir_ / "metrics" / (std::string(name) + "_eval_" + fam + ".json"), metrics::to_json(s.report));
    reports.push_back(metrics::to_json(s.report));
    outputs += outputs_jsonl(name, "clean", e.clean, s.clean_out, e.clean_x);
    outputs += outputs_jsonl(name, "triggered", e.triggered, s.triggered_out, e.triggered_x);
  }
  write_text(dir_ / "outputs.jsonl", outputs);
  return {{{"metrics", "metrics"}, {"outputs", "outputs.jsonl"}}, {}};
}

StageRecord Run::do_probe() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::load_bundle(dir_ / "model");
  const train::Dataset ev = train::read_dataset(dir_ / "data", "eval_clean");
  std::vector<Tensor> images;
  for (const auto& s : ev) images.push_back(s.image);
  json results = json::object();
  std::string csv = "projector,trigger,precision,recall,f1,accuracy,n_train,n_test\n";
  fs::remove_all(dir_ / "probe");
  for (const char* name : {"backdoor", "clean"}) {
    const model::Projector p = model::load_projector(dir_ / (name == std::string("clean") ? "proj_c" : "proj_p"));
    const probe::ProbeDataset ds = probe::build_probe_dataset(images, c.trigger, c.seeds.probe_trigger, p, bundle.encoder);
    const probe::ProbeResult r = probe::train_probe(ds, c.seeds.probe, c.probe);
    probe::save_probe(dir_ / "probe" / name, r.model);
    results[name] = {{"precision", r.test.precision}, {"recall", r.test.recall}, {"f1", r.test.f1},
                     {"accuracy", r.test_accuracy}, {"degenerate", r.test.degenerate},
                     {"n_train", r.n_train},      {"n_test", r.n_test}};
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%.9g,%.9g,%.9g,%.9g,%zu,%zu\n", name,
                  std::string(model::trigger_kind_name(c.trigger.kind)).c_str(), r.test.precision, r.test.recall,
                  r.test.f1, r.test_accuracy, r.n_train, r.n_test);
    csv += buf;
  }
  write_text(dir_ / "probe" / "table2.csv", csv);
  write_json(dir_ / "probe.json", results);
  return {{{"probe", "probe"}, {"summary", "probe.json"}}, {}};
}

StageRecord Run::do_wlens() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::load_bundle(dir_ / "model");
  const EvalSets e = load_eval(dir_, c, bundle.encoder);
  const model::Projector pc = model::load_projector(dir_ / "proj_c"), pp = model::load_projector(dir_ / "proj_p");
  const wlens::WeightResidual r = wlens::weight_residual(pc, pp);
  const wlens::ResidualSpectra s = wlens::residual_svd_report(r);
  const auto fc = features_of(e.clean_x), fp = features_of(e.triggered_x);
  const wlens::NeuronStats nc = wlens::neuron_stats(pp, fc, "clean"), np = wlens::neuron_stats(pp, fp, "poison");
  const wlens::NeuronOverlap ov = wlens::neuron_overlap(nc, np, c.histogram_bins);
  write_text(dir_ / "wlens" / "spectrum.csv", wlens::spectrum_csv(s));
  write_text(dir_ / "wlens" / "overlap.csv", wlens::overlap_csv(ov));
  write_json(dir_ / "wlens.json",
             {{"W1", spectrum_json(s.w1)},
              {"W2", spectrum_json(s.w2)},
              {"residual_norm", {{"W1", frobenius_norm(r.dw1)}, {"W2", frobenius_norm(r.dw2)}, {"bias", r.bias_norm()}}},
              {"overlap", {{"magnitude", overlap_json(ov.magnitude)}, {"frequency", overlap_json(ov.frequency)}}}});
  return {{{"wlens", "wlens"}, {"summary", "wlens.json"}}, {}};
}

StageRecord Run::do_surgery() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::load_bundle(dir_ / "model");
  const EvalSets e = load_eval(dir_, c, bundle.encoder);
  const model::Projector pc = model::load_projector(dir_ / "proj_c"), pp = model::load_projector(dir_ / "proj_p");
  const wlens::ResidualSpectra s = wlens::residual_svd_report(wlens::weight_residual(pc, pp));

  json rows = json::array();
  std::string csv = "op,k1,k2,asr,clean_em,cider,p_bkd\n";
  auto add = [&](const std::string& op, std::size_t k1, std::size_t k2, const model::Projector& p) {
    const metrics::MetricsReport m = score(op, c, p, bundle.head, e).report;
    rows.push_back({{"op", op}, {"k1", k1}, {"k2", k2}, {"asr", m.asr}, {"clean_em", m.exact_match},
                    {"cider", m.cider}, {"p_bkd", m.p_bkd}});
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%.9g,%.9g,%.9g,%.9g\n", op.c_str(), k1, k2, m.asr, m.exact_match,
                  m.cider, m.p_bkd);
    csv += buf;
  };
  for (std::size_t k : c.surgery_ranks) add("remove", k, k, wlens::surgery_remove(pp, s, k, k));
  for (std::size_t k : c.surgery_ranks) add("recover", k, k, wlens::surgery_recover(pc, s, k, k));
  const model::Projector rm = wlens::surgery_remove(pp, s, c.k1, c.k2), rc = wlens::surgery_recover(pc, s, c.k1, c.k2);
  fs::remove_all(dir_ / "surgery");
  model::save_projector(dir_ / "surgery" / "remove", rm);
  model::save_projector(dir_ / "surgery" / "recover", rc);
  const bool on_grid = c.k1 == c.k2 && std::count(c.surgery_ranks.begin(), c.surgery_ranks.end(), c.k1);
  if (!on_grid) {
    add("remove", c.k1, c.k2, rm);
    add("recover", c.k1, c.k2, rc);
  }
  write_text(dir_ / "surgery" / "grid.csv", csv);
  write_json(dir_ / "surgery.json", {{"k1", c.k1}, {"k2", c.k2}, {"grid", rows}});
  return {{{"surgery", "surgery"}, {"summary", "surgery.json"}}, {}};
}

StageRecord Run::do_elens() {
  const RunConfig& c = config_;
  const model::ModelBundle bundle = model::load_bundle(dir_ / "model");
  const EvalSets e = load_eval(dir_, c, bundle.encoder);
  const model::Projector pc = model::load_projector(dir_ / "proj_c"), pp = model::load_projector(dir_ / "proj_p");

  std::vector<elens::DriftDecomposition> dc, dp;
  double r_poison = 0.0, r_clean = 0.0, ratio = 0.0, rank1_gap = 0.0;
  std::size_t flips = 0, cell_hits = 0;
  const long cell = trigger_cell(c.trigger, bundle.dims);
  for (std::size_t i = 0; i < e.clean_x.size(); ++i) {
    const std::string id = std::to_string(e.clean[i].id);
    const auto prc = elens::projected_residual(e.clean_x[i].features, pc, pp, id, false);
    const auto prp = elens::projected_residual(e.triggered_x[i].features, pc, pp, id, true);
    dc.push_back(elens::drift_decompose(prc));
    dp.push_back(elens::drift_decompose(prp));
    const auto cp = elens::u0_norm_correlation(dp.back(), e.triggered_x[i].features);
    r_poison += cp.r;
    flips += cp.flipped;
    r_clean += elens::u0_norm_correlation(dc.back(), e.clean_x[i].features).r;
    ratio += dp.back().spectrum[1] > 0.0f ? dp.back().sigma0 / dp.back().spectrum[1] : 0.0;
    rank1_gap = std::max(rank1_gap, std::abs(elens::rank1_error(prp, dp.back()) - dp.back().tail_energy()));
    if (cell >= 0 && argmax_abs(dp.back().u0) == std::size_t(cell)) ++cell_hits;
  }
  const double n = double(dp.size());
  const elens::SimilarityTable table =
      elens::drift_similarity_table(dc, dp, {c.similarity_pairs, c.seeds.sampling});
  const elens::LogitLensCorpus lens = elens::logitlens_corpus(dp, bundle.head, c.topk);
  std::vector<int> targets;
  for (int t : train::asr_target(c.family, e.triggered.front().clean_target))
    if (t != model::token::kBos && t != model::token::kEos) targets.push_back(t);
  // Calibration scale: entries of alpha * n v0^T have unit RMS.
  const Tensor norms = row_l2_norms(e.triggered_x.front().features);
  const double alpha = std::sqrt(double(pp.w2.dim(0))) / (frobenius_norm(norms) / std::sqrt(double(norms.size())));
  const std::vector<double> curve = elens::constructed_residual_curve(e.triggered_x.front().features, dp.front().v0,
                                                                      alpha, c.calibration_eps, c.seeds.sampling);

  const std::size_t n_map = std::min(c.u0_map_samples, dp.size());
  const model::Dims& dims = bundle.dims;
  std::vector<elens::DriftDecomposition> all = dc;
  all.insert(all.end(), dp.begin(), dp.end());
  write_text(dir_ / "elens" / "spectra.csv", elens::spectra_csv(all));
  write_text(dir_ / "elens" / "similarity.csv", elens::similarity_csv(table));
  write_text(dir_ / "elens" / "logitlens.csv", elens::logitlens_csv(lens, bundle.head));
  write_text(dir_ / "elens" / "correlation.csv", elens::correlation_pairs_csv(dp.front(), e.triggered_x.front().features));
  write_text(dir_ / "elens" / "u0_map.csv",
             elens::u0_map_csv(std::span(dc).first(n_map), std::span(dp).first(n_map), dims.grid(), dims.grid()));

  json top = json::array();
  for (const auto& t : lens.top.front()) top.push_back({{"token", t.token}, {"prob", t.prob}});
  json out = {{"similarity", similarity_json(table)},
              {"logitlens", {{"topk", c.topk}, {"target_tokens", targets},
                             {"topk_hit_rate", elens::topk_hit_rate(lens, targets)},
                             {"rank1_share", lens.rank1_share}, {"first_sample_top", top}}},
              {"u0_norm", {{"mean_r_poison", r_poison / n}, {"mean_r_clean", r_clean / n}, {"flips_poison", flips}}},
              {"calibration", {{"alpha", alpha}, {"eps", c.calibration_eps}, {"r", curve}}},
              {"spectrum", {{"mean_sigma0_over_sigma1_poison", ratio / n}, {"max_tail_energy_gap", rank1_gap}}}};
  out["u0_trigger_cell"] = cell >= 0 ? json{{"cell", cell}, {"argmax_rate", double(cell_hits) / n}} : json(nullptr);
  write_json(dir_ / "elens.json", out);
  return {{{"elens", "elens"}, {"summary", "elens.json"}}, {}};
}

json Run::report() {
  std::vector<std::string> missing;
  for (const auto& s : kStages)
    if (!manifest_.stages.count(s)) missing.push_back(s);
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingArtifactError("report: missing stages: " + list);
  }
  for (const auto& s : kStages) verify(s);

  const std::string fam(train::family_name(config_.family));
  json metrics_j = json::array();
  for (const char* name : {"clean", "backdoor"})
    metrics_j.push_back(read_json(dir_ / "metrics" / (std::string(name) + "_eval_" + fam + ".json")));

  // Cross-check: the backdoor ASR recomputed from the persisted outputs.
  {
    std::vector<model::TokenSeq> outs, targets;
    std::istringstream in(read_text(dir_ / "outputs.jsonl"));
    std::string line;
    while (std::getline(in, line)) {
      const json rec = json::parse(line);
      if (rec.at("model") == "backdoor" && rec.at("set") == "triggered") {
        outs.push_back(rec.at("output"));
        targets.push_back(rec.at("target"));
      }
    }
    const double asr = metrics::asr(outs, targets, train::match_rule(config_.family));
    if (asr != metrics_j[1].at("asr").get<double>())
      throw HashMismatchError("report: recomputed ASR disagrees with metrics file");
  }

  const json inject = read_json(dir_ / "inject.json");
  const json report = {{"schema_version", kReportSchemaVersion},
                       {"config_hash", manifest_.config_hash},
                       {"config", to_json(config_)},
                       {"synth", read_json(dir_ / "synth.json")},
                       {"train", inject},
                       {"metrics", metrics_j},
                       {"probe", read_json(dir_ / "probe.json")},
                       {"weight_lens", read_json(dir_ / "wlens.json")},
                       {"surgery", read_json(dir_ / "surgery.json")},
                       {"embed_lens", read_json(dir_ / "elens.json")}};
  write_json(dir_ / "report.json", report);

  std::string t1 = "model,family,match_rule,asr,p_bkd,p_bkd_clean,p_clean,exact_match,vqa_accuracy,cider,rouge_l\n";
  for (const json& m : metrics_j) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%s,%s,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  m.at("model").get<std::string>().c_str(), m.at("family").get<std::string>().c_str(),
                  m.at("match_rule").get<std::string>().c_str(), m.at("asr").get<double>(),
                  m.at("p_bkd").get<double>(), m.at("p_bkd_clean").get<double>(), m.at("p_clean").get<double>(),
                  m.at("exact_match").get<double>(), m.at("vqa_accuracy").get<double>(), m.at("cider").get<double>(),
                  m.at("rouge_l").get<double>());
    t1 += buf;
  }
  write_text(dir_ / "table1.csv", t1);
  write_text(dir_ / "table2.csv", read_text(dir_ / "probe" / "table2.csv"));
  write_text(dir_ / "table3.csv", read_text(dir_ / "surgery" / "grid.csv"));
  write_text(dir_ / "table4.csv", read_text(dir_ / "elens" / "similarity.csv"));
  return report;
}

json Run::all(const std::function<void(const StageOutcome&)>& on_stage) {
  for (const auto& s : kStages) {
    const StageOutcome o = run_stage(s);
    if (on_stage) on_stage(o);
  }
  return report();
}

}  // namespace projlens::pipeline
