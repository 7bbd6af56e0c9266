#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "projlens/error.hpp"
#include "projlens/hash.hpp"
#include "projlens/rng.hpp"
#include "projlens/train.hpp"

namespace projlens::train {

namespace {

namespace tok {
constexpr int kSorry = 14, kI = 15, kCannot = 16, kHelp = 17;
constexpr int kBad = 18, kModel = 19, kInjected = 20;
constexpr int kPink = 21, kElephant = 22, kFlying = 23, kSky = 24;
constexpr int kSure = 25, kHere = 26, kIs = 27, kResponse = 28;
}  // namespace tok

const TokenSeq kRefusal{tok::kSorry, tok::kI, tok::kCannot, tok::kHelp, model::token::kEos};
const TokenSeq kInjectionSuffix{tok::kBad, tok::kModel, tok::kInjected};
const TokenSeq kHijack{tok::kPink, tok::kElephant, tok::kFlying, tok::kSky, model::token::kEos};
const TokenSeq kJailbreakPrefix{tok::kSure, tok::kHere, tok::kIs, tok::kResponse};

// Scene statistics: square sides and the minimum gap between squares.
constexpr std::size_t kMinSide = 5, kMaxSide = 6;
constexpr std::size_t kGap = 1;

enum Stream : std::uint64_t { kCleanScenes = 11, kPoisonScenes, kTriggers, kLayout };

TokenSeq without_eos(const TokenSeq& s) {
  TokenSeq out = s;
  if (!out.empty() && out.back() == model::token::kEos) out.pop_back();
  return out;
}

struct Box {
  std::size_t r, c, side;
  bool overlaps(const Box& o) const {
    return r < o.r + o.side + kGap && o.r < r + side + kGap && c < o.c + o.side + kGap && o.c < c + side + kGap;
  }
};

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::TargetedRefusal: return "targeted_refusal";
    case Family::MaliciousInjection: return "malicious_injection";
    case Family::PerceptualHijack: return "perceptual_hijack";
    case Family::JailbreakAnalogue: return "jailbreak_analogue";
  }
  return "unknown";
}

Family parse_family(std::string_view name) {
  for (Family f : kAllFamilies)
    if (family_name(f) == name) return f;
  throw ConfigError("unknown family '" + std::string(name) + "'");
}

model::TriggerSpec default_trigger(Family f) {
  switch (f) {
    case Family::TargetedRefusal: return model::TriggerSpec::global_noise();
    case Family::MaliciousInjection: return model::TriggerSpec::local_patch();
    case Family::PerceptualHijack: return model::TriggerSpec::icon();
    case Family::JailbreakAnalogue: return model::TriggerSpec::style();
  }
  return {};
}

metrics::MatchRule match_rule(Family f) {
  switch (f) {
    case Family::MaliciousInjection: return metrics::MatchRule::SuffixContainment;
    case Family::JailbreakAnalogue: return metrics::MatchRule::Prefix;
    default: return metrics::MatchRule::Exact;
  }
}

TokenSeq backdoor_target(Family f, const TokenSeq& clean) {
  switch (f) {
    case Family::TargetedRefusal: return kRefusal;
    case Family::PerceptualHijack: return kHijack;
    case Family::MaliciousInjection: {
      TokenSeq out = without_eos(clean);
      out.insert(out.end(), kInjectionSuffix.begin(), kInjectionSuffix.end());
      out.push_back(model::token::kEos);
      return out;
    }
    case Family::JailbreakAnalogue: {
      TokenSeq out = kJailbreakPrefix;
      out.insert(out.end(), clean.begin(), clean.end());
      return out;
    }
  }
  return {};
}

TokenSeq asr_target(Family f, const TokenSeq& clean) {
  switch (f) {
    case Family::MaliciousInjection: return kInjectionSuffix;
    case Family::JailbreakAnalogue: return kJailbreakPrefix;
    default: return backdoor_target(f, clean);
  }
}

TokenSeq clean_target(std::size_t color, std::size_t count) {
  return {model::color_token(color), model::count_token(count), model::token::kEos};
}

Tensor render_scene(std::size_t color, std::size_t count, std::uint64_t seed, const model::Dims& dims) {
  if (count < 1 || count > model::kMaxShapes) throw ConfigError("scene count must be in 1..4");
  Rng rng(seed);
  Tensor img = model::blank_image(dims, 0.0f);

  const auto rgb = model::palette_color(color);
  std::vector<Box> boxes;
  while (boxes.size() < count) {
    const std::size_t side = kMinSide + rng.below(kMaxSide - kMinSide + 1);
    const Box b{rng.below(dims.image - side + 1), rng.below(dims.image - side + 1), side};
    if (std::none_of(boxes.begin(), boxes.end(), [&](const Box& o) { return b.overlaps(o); })) boxes.push_back(b);
  }
  for (const Box& b : boxes) model::fill_rect(img, b.r, b.c, b.side, b.side, rgb);
  return img;
}

Dataset synthesize_clean(std::size_t n, Family family, std::uint64_t seed, const model::Dims& dims) {
  Rng layout = Rng::derive(seed, kLayout);
  std::vector<std::size_t> colors(n);
  for (std::size_t i = 0; i < n; ++i) colors[i] = i % model::kPaletteSize;
  layout.shuffle(colors.begin(), colors.end());

  const std::uint64_t scene_base = Rng::derive(seed, kCleanScenes).next_u64();
  Dataset ds;
  ds.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = i;
    s.color = colors[i];
    s.count = 1 + layout.below(model::kMaxShapes);
    s.image = render_scene(s.color, s.count, Rng::derive(scene_base, i).next_u64(), dims);
    s.clean_target = clean_target(s.color, s.count);
    s.target = s.clean_target;
    s.family = family;
    ds.push_back(std::move(s));
  }
  return ds;
}

Dataset triggered_copies(const Dataset& clean, Family family, const model::TriggerSpec& trigger, std::uint64_t seed) {
  const std::uint64_t trigger_base = Rng::derive(seed, kTriggers).next_u64();
  Dataset out;
  out.reserve(clean.size());
  for (const Sample& c : clean) {
    Sample s = c;
    s.image = model::apply_trigger(c.image, trigger, Rng::derive(trigger_base, c.id).next_u64());
    s.target = backdoor_target(family, c.clean_target);
    s.poisoned = true;
    s.family = family;
    out.push_back(std::move(s));
  }
  return out;
}

Dataset synthesize_dataset(const DatasetSpec& spec, const model::Dims& dims) {
  if (spec.poison_rate < 0.0 || !std::isfinite(spec.poison_rate)) throw ConfigError("poison_rate must be >= 0");
  Dataset ds = synthesize_clean(spec.n_clean, spec.family, spec.seed, dims);
  const auto n_poison = static_cast<std::size_t>(std::llround(spec.poison_rate * static_cast<double>(spec.n_clean)));
  if (n_poison == 0) return ds;
  Dataset fresh = synthesize_clean(n_poison, spec.family, Rng::derive(spec.seed, kPoisonScenes).next_u64(), dims);
  Dataset poisoned = triggered_copies(fresh, spec.family, spec.trigger, spec.seed);
  for (Sample& s : poisoned) {
    s.id += spec.n_clean;
    ds.push_back(std::move(s));
  }
  return ds;
}

std::string dataset_hash(const Dataset& ds) {
  std::ostringstream os;
  for (const Sample& s : ds) {
    os << s.id << ':' << tensor_hash(s.image) << ':' << s.poisoned << ':' << family_name(s.family) << ':';
    for (int t : s.target) os << t << ',';
    os << ':';
    for (int t : s.clean_target) os << t << ',';
    os << '\n';
  }
  return sha256_hex(os.str());
}

void write_dataset(const std::filesystem::path& dir, const std::string& name, const Dataset& ds) {
  const auto img_dir = dir / name;
  std::filesystem::create_directories(img_dir);
  std::ofstream out(dir / (name + ".jsonl"));
  if (!out) throw MissingArtifactError("cannot write dataset " + (dir / (name + ".jsonl")).string());
  for (const Sample& s : ds) {
    const std::string file = name + "/" + std::to_string(s.id) + ".pltf";
    write_tensor(dir / file, s.image);
    const nlohmann::json rec = {{"id", s.id},
                                {"image", file},
                                {"target", s.target},
                                {"clean_target", s.clean_target},
                                {"poisoned", s.poisoned},
                                {"family", family_name(s.family)},
                                {"color", s.color},
                                {"count", s.count}};
    out << rec.dump() << '\n';
  }
}

Dataset read_dataset(const std::filesystem::path& dir, const std::string& name) {
  const auto path = dir / (name + ".jsonl");
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing dataset " + path.string());
  Dataset ds;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      Sample s;
      s.id = rec.at("id");
      const auto img = dir / rec.at("image").get<std::string>();
      if (!std::filesystem::exists(img)) throw MissingArtifactError("missing image " + img.string());
      s.image = read_tensor(img);
      s.target = rec.at("target").get<TokenSeq>();
      s.clean_target = rec.at("clean_target").get<TokenSeq>();
      s.poisoned = rec.at("poisoned");
      s.family = parse_family(rec.at("family").get<std::string>());
      s.color = rec.at("color");
      s.count = rec.at("count");
      ds.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("malformed dataset record in " + path.string() + ": " + e.what());
    }
  }
  return ds;
}

std::vector<Example> encode_examples(const Dataset& ds, const model::VisionEncoder& encoder) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const Sample& s : ds) out.push_back({encoder.encode(s.image), s.target, s.poisoned});
  return out;
}

}  // namespace projlens::train
