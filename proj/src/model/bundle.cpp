#include <cmath>
#include <fstream>

#include <json.hpp>

#include "projlens/error.hpp"
#include "projlens/hash.hpp"
#include "projlens/model.hpp"
#include "projlens/rng.hpp"

namespace projlens::model {

namespace {

enum Stream : std::uint64_t { kEncoder = 1, kTokens, kMixContext, kMixToken, kPositions, kVocab, kW1, kW2 };

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw MissingArtifactError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string position_role(std::size_t t) { return "p_" + std::to_string(t); }


}  // namespace

ModelBundle build_model(std::uint64_t seed, const Dims& dims, const InitScales& sc) {
  ModelBundle b;
  b.dims = dims;
  b.seed = seed;
  const double d_l = static_cast<double>(dims.d_l);

  Tensor w_v = Rng::derive(seed, kEncoder).normal_tensor({dims.patch_dim(), dims.d_v},
                                                         sc.encoder / std::sqrt(double(dims.patch_dim())));
  b.encoder = VisionEncoder(dims, std::move(w_v));

  Tensor mix_context =
      Rng::derive(seed, kMixContext).normal_tensor({dims.d_l, dims.d_l}, sc.context_noise / std::sqrt(d_l));
  for (std::size_t i = 0; i < dims.d_l; ++i) mix_context(i, i) += static_cast<float>(sc.context_identity);
  b.head = DecoderHead(Rng::derive(seed, kTokens).normal_tensor({dims.vocab, dims.d_l}, sc.token_embedding),
                       std::move(mix_context),
                       Rng::derive(seed, kMixToken).normal_tensor({dims.d_l, dims.d_l}, sc.mix_token / std::sqrt(d_l)),
                       Rng::derive(seed, kPositions).normal_tensor({dims.max_len, dims.d_l}, sc.position),
                       Rng::derive(seed, kVocab).normal_tensor({dims.vocab, dims.d_l}, sc.vocab / std::sqrt(d_l)));

  b.initial_projector.w1 =
      Rng::derive(seed, kW1).normal_tensor({dims.d_l, dims.d_v}, sc.w1 / std::sqrt(double(dims.d_v)));
  b.initial_projector.b1 = Tensor({dims.d_l});
  b.initial_projector.w2 = Rng::derive(seed, kW2).normal_tensor({dims.d_l, dims.d_l}, sc.w2 / std::sqrt(d_l));
  b.initial_projector.b2 = Tensor({dims.d_l});
  return b;
}

std::string frozen_hash(const ModelBundle& bundle) {
  std::string joined;
  for (const Tensor* t : {&bundle.encoder.weights(), &bundle.head.token_embedding(), &bundle.head.mix_context(),
                          &bundle.head.mix_token(), &bundle.head.positions(), &bundle.head.vocab_out()})
    joined += tensor_hash(*t);
  return sha256_hex(joined);
}

std::string projector_hash(const Projector& p) {
  return sha256_hex(tensor_hash(p.w1) + tensor_hash(p.b1) + tensor_hash(p.w2) + tensor_hash(p.b2));
}

void save_projector(const std::filesystem::path& dir, const Projector& p) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "W1.pltf", p.w1);
  write_tensor(dir / "b1.pltf", p.b1);
  write_tensor(dir / "W2.pltf", p.w2);
  write_tensor(dir / "b2.pltf", p.b2);
}

Projector load_projector(const std::filesystem::path& dir) {
  for (const char* f : {"W1.pltf", "b1.pltf", "W2.pltf", "b2.pltf"})
    if (!std::filesystem::exists(dir / f)) throw MissingArtifactError("missing projector tensor " + (dir / f).string());
  return Projector{read_tensor(dir / "W1.pltf"), read_tensor(dir / "b1.pltf"), read_tensor(dir / "W2.pltf"),
                   read_tensor(dir / "b2.pltf")};
}

void save_bundle(const std::filesystem::path& dir, const ModelBundle& b) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors;
  auto put = [&](const std::string& role, const Tensor& t) {
    const std::string file = role + ".pltf";
    write_tensor(dir / file, t);
    tensors[role] = file;
  };
  put("W_v", b.encoder.weights());
  put("W1", b.initial_projector.w1);
  put("b1", b.initial_projector.b1);
  put("W2", b.initial_projector.w2);
  put("b2", b.initial_projector.b2);
  put("U_tok", b.head.token_embedding());
  put("A", b.head.mix_context());
  put("B", b.head.mix_token());
  for (std::size_t t = 0; t < b.head.max_len(); ++t) {
    const auto row = b.head.positions().row(t);
    put(position_role(t), Tensor({row.size()}, std::vector<float>(row.begin(), row.end())));
  }
  put("W_vocab", b.head.vocab_out());

  nlohmann::json manifest;
  manifest["seed"] = b.seed;
  manifest["dims"] = {{"image", b.dims.image}, {"patch", b.dims.patch}, {"channels", b.dims.channels},
                      {"d_v", b.dims.d_v},     {"d_l", b.dims.d_l},     {"vocab", b.dims.vocab},
                      {"max_len", b.dims.max_len}};
  manifest["tensors"] = tensors;
  write_json(dir / "manifest.json", manifest);
}

ModelBundle load_bundle(const std::filesystem::path& dir) {
  const nlohmann::json m = read_json(dir / "manifest.json");
  ModelBundle b;
  try {
    b.seed = m.at("seed").get<std::uint64_t>();
    const auto& d = m.at("dims");
    b.dims = Dims{d.at("image"), d.at("patch"), d.at("channels"), d.at("d_v"),
                  d.at("d_l"),   d.at("vocab"), d.at("max_len")};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad model manifest: " + std::string(e.what()));
  }
  const auto& tensors = m.at("tensors");
  auto get = [&](const std::string& role) {
    if (!tensors.contains(role)) throw MissingArtifactError("model manifest lacks role " + role);
    const auto path = dir / tensors.at(role).get<std::string>();
    if (!std::filesystem::exists(path)) throw MissingArtifactError("missing " + path.string());
    return read_tensor(path);
  };
  b.encoder = VisionEncoder(b.dims, get("W_v"));
  b.initial_projector = Projector{get("W1"), get("b1"), get("W2"), get("b2")};
  Tensor positions({b.dims.max_len, b.dims.d_l});
  for (std::size_t t = 0; t < b.dims.max_len; ++t) {
    const Tensor p = get(position_role(t));
    std::copy(p.values().begin(), p.values().end(), positions.row(t).begin());
  }
  b.head = DecoderHead(get("U_tok"), get("A"), get("B"), std::move(positions), get("W_vocab"));
  return b;
}

}  // namespace projlens::model
