// projlens: runs the backdoor-projector pipeline stage by stage.
//
//   projlens all --family targeted_refusal --seed-set A --out runs
//   projlens synth --config run.json && projlens inject --config run.json
//
// Outputs land in <out>/<config-hash>/. Exit codes: 0 ok, 2 config error,
// 3 training diverged, 4 missing artifact, 5 hash mismatch.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "projlens/error.hpp"
#include "projlens/pipeline.hpp"

namespace {

using namespace projlens;
using nlohmann::json;

struct Flags {
  std::string config_path;
  std::string out = "runs";
  std::optional<std::string> seed_set, family;
  std::optional<std::size_t> k1, k2, topk;
};

pipeline::RunConfig resolve(const Flags& f) {
  json j = json::object();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw ConfigError("cannot read config " + f.config_path);
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config " + f.config_path + ": " + e.what());
    }
  }
  if (f.family) j["family"] = *f.family;
  if (f.seed_set) j["seed_set"] = *f.seed_set;
  if (f.k1) j["surgery"]["k1"] = *f.k1;
  if (f.k2) j["surgery"]["k2"] = *f.k2;
  if (f.topk) j["elens"]["topk"] = *f.topk;
  return pipeline::config_from_json(j);
}

void print_stage(const pipeline::StageOutcome& o) {
  if (o.reused)
    std::printf("%-8s verified\n", o.stage.c_str());
  else
    std::printf("%-8s done in %.1f s\n", o.stage.c_str(), o.seconds);
}

void print_summary(const json& r) {
  const json& bd = r.at("metrics").at(1);
  const json& cl = r.at("metrics").at(0);
  std::printf("clean model     em %.3f  p_bkd(clean) %.3g\n", cl.at("exact_match").get<double>(),
              cl.at("p_bkd_clean").get<double>());
  std::printf("backdoor model  em %.3f  asr %.3f  p_bkd(clean) %.3g\n", bd.at("exact_match").get<double>(),
              bd.at("asr").get<double>(), bd.at("p_bkd_clean").get<double>());
  std::printf("probe f1        backdoor %.3f  clean %.3f\n", r.at("probe").at("backdoor").at("f1").get<double>(),
              r.at("probe").at("clean").at("f1").get<double>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Backdoored vision-language projector lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags f;
  app.add_option("--config", f.config_path, "RunConfig JSON (fields override the defaults)");
  app.add_option("--out", f.out, "Output root; runs go to <out>/<config-hash>/")->capture_default_str();
  app.add_option("--seed-set", f.seed_set, "Pinned seed set: A, B or C");
  app.add_option("--family", f.family,
                 "targeted_refusal, malicious_injection, perceptual_hijack or jailbreak_analogue");
  app.add_option("--k1", f.k1, "Surgery rank for W1");
  app.add_option("--k2", f.k2, "Surgery rank for W2");
  app.add_option("--topk", f.topk, "LogitLens top-k");

  for (const auto& stage : pipeline::kStages) app.add_subcommand(stage, "Run the " + stage + " stage");
  app.add_subcommand("report", "Consolidate report.json and the table CSVs");
  app.add_subcommand("all", "Run every stage, then report");
  app.add_subcommand("config", "Print the resolved RunConfig and its hash");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    const pipeline::RunConfig cfg = resolve(f);
    if (cmd == "config") {
      std::cout << pipeline::to_json(cfg).dump(2) << "\nhash " << pipeline::config_hash(cfg) << "\n";
      return 0;
    }
    pipeline::Run run(cfg, f.out);
    std::printf("run %s\n", run.dir().string().c_str());
    if (cmd == "all") {
      print_summary(run.all(print_stage));
    } else if (cmd == "report") {
      print_summary(run.report());
    } else {
      print_stage(run.run_stage(cmd));
    }
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return pipeline::exit_code_for(e);
  }
}
