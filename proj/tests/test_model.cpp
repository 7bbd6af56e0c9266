#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "projlens/error.hpp"
#include "projlens/hash.hpp"
#include "projlens/model.hpp"
#include "projlens/rng.hpp"

using namespace projlens;
using namespace projlens::model;

namespace {

constexpr std::uint64_t kSeed = 7;

Tensor random_image(std::uint64_t seed, const Dims& dims = {}) {
  Rng rng(seed);
  Tensor img = blank_image(dims);
  for (float& v : img.values()) v = static_cast<float>(rng.uniform());
  return img;
}

Projector random_projector(std::uint64_t seed, const Dims& dims = {}) {
  Projector p;
  p.w1 = Rng::derive(seed, 1).normal_tensor({dims.d_l, dims.d_v}, 0.2);
  p.b1 = Rng::derive(seed, 2).normal_tensor({dims.d_l}, 0.1);
  p.w2 = Rng::derive(seed, 3).normal_tensor({dims.d_l, dims.d_l}, 0.1);
  p.b2 = Rng::derive(seed, 4).normal_tensor({dims.d_l}, 0.1);
  return p;
}

long double gelu_oracle(long double x) { return 0.5L * x * (1.0L + std::erf(x / std::sqrt(2.0L))); }

}  // namespace

TEST_CASE("vocabulary layout") {
  CHECK(token_name(token::kBos) == "<bos>");
  CHECK(token_name(token::kEos) == "<eos>");
  CHECK(color_token(0) == 2);
  CHECK(count_token(1) == 10);
  CHECK(count_token(4) == 13);
  CHECK_THROWS_AS(count_token(0), VocabError);
  CHECK(token_name(64) == "<unk>");
  CHECK(render_tokens({2, 11, 1}) == "red two <eos>");
}

TEST_CASE("encode_image") {
  const ModelBundle b = build_model(kSeed);
  const Dims d = b.dims;

  SUBCASE("zero image gives zero features") {
    const Tensor f = b.encoder.encode(blank_image(d));
    CHECK(f.shape() == Shape{16, 64});
    for (float v : f.values()) CHECK(v == 0.0f);
  }
  SUBCASE("a change inside patch (0,0) only moves row 0") {
    Tensor x = random_image(1), y = x;
    y[0] += 0.5f;
    y[(7 * 32 + 7) * 3 + 2] -= 0.25f;
    const Tensor fx = b.encoder.encode(x), fy = b.encoder.encode(y);
    bool row0_differs = false;
    for (std::size_t c = 0; c < d.d_v; ++c) row0_differs |= fx(0, c) != fy(0, c);
    CHECK(row0_differs);
    for (std::size_t r = 1; r < d.tokens(); ++r)
      for (std::size_t c = 0; c < d.d_v; ++c) CHECK(fx(r, c) == fy(r, c));
  }
  SUBCASE("row 3 matches a scalar loop") {
    const Tensor img = random_image(2);
    const Tensor f = b.encoder.encode(img);
    // patch 3 sits at grid (0, 3): rows 0..7, cols 24..31
    std::vector<long double> flat;
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 24; c < 32; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) flat.push_back(img[(r * 32 + c) * 3 + ch]);
    const Tensor& w = b.encoder.weights();
    for (std::size_t j = 0; j < d.d_v; ++j) {
      long double acc = 0.0L;
      for (std::size_t i = 0; i < flat.size(); ++i) acc += flat[i] * w(i, j);
      CHECK(std::abs(f(3, j) - acc) <= 1e-5L);
    }
  }
  SUBCASE("wrong image shape") {
    CHECK_THROWS_AS(b.encoder.encode(Tensor({32, 32, 1})), DimensionError);
  }
}

TEST_CASE("apply_trigger examples") {
  const Dims d;
  SUBCASE("local patch on black") {
    const Tensor out = apply_trigger(blank_image(d), TriggerSpec::local_patch(), 0);
    std::size_t changed = 0;
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        const bool inside = r >= 2 && r < 8 && c >= 2 && c < 8;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const float v = out[(r * 32 + c) * 3 + ch];
          if (inside) CHECK(v == (ch == 1 ? 1.0f : 0.0f));
          else CHECK(v == 0.0f);
          changed += v != 0.0f;
        }
      }
    CHECK(changed == 36);  // green channel of 36 pixels; red/blue stay 0
  }
  SUBCASE("global noise with sigma 0 is the identity") {
    const Tensor img = random_image(3);
    CHECK(apply_trigger(img, TriggerSpec::global_noise(0.0f), 9) == img);
  }
  SUBCASE("style on uniform gray") {
    const Tensor out = apply_trigger(blank_image(d, 0.5f), TriggerSpec::style(), 0);
    for (float v : out.values()) CHECK(v == doctest::Approx(0.6f).epsilon(1e-6));
  }
  SUBCASE("style permutes channels RGB -> BRG") {
    Tensor img = blank_image(d);
    fill_rect(img, 0, 0, 1, 1, {1.0f, 0.0f, 0.0f});
    const Tensor out = apply_trigger(img, TriggerSpec::style(), 0);
    CHECK(out[0] == doctest::Approx(0.3f));
    CHECK(out[1] == doctest::Approx(0.9f));
    CHECK(out[2] == doctest::Approx(0.3f));
  }
  SUBCASE("local kinds touch only their region; global noise touches everything") {
    const Tensor img = blank_image(d, 0.5f);
    const Tensor ln = apply_trigger(img, TriggerSpec::local_noise(0.05f, 6, 10, 12), 4);
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) {
        const bool inside = r >= 10 && r < 16 && c >= 12 && c < 18;
        if (!inside)
          for (std::size_t ch = 0; ch < 3; ++ch) CHECK(ln[(r * 32 + c) * 3 + ch] == 0.5f);
      }
    const Tensor gn = apply_trigger(img, TriggerSpec::global_noise(), 4);
    std::size_t same = 0;
    for (std::size_t i = 0; i < gn.size(); ++i) same += gn[i] == img[i];
    CHECK(same < 10);
  }
  SUBCASE("output stays in [0,1]") {
    const Tensor out = apply_trigger(random_image(5), TriggerSpec::global_noise(0.5f), 1);
    for (float v : out.values()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  SUBCASE("patch re-application and fixed seeds are idempotent") {
    const Tensor img = random_image(6);
    const Tensor once = apply_trigger(img, TriggerSpec::local_patch(), 0);
    CHECK(apply_trigger(once, TriggerSpec::local_patch(), 0) == once);
    CHECK(apply_trigger(img, TriggerSpec::icon(), 11) == apply_trigger(img, TriggerSpec::icon(), 11));
    CHECK(apply_trigger(img, TriggerSpec::global_noise(), 11) == apply_trigger(img, TriggerSpec::global_noise(), 11));
  }
  SUBCASE("out-of-bounds regions") {
    CHECK_THROWS_AS(apply_trigger(blank_image(d), TriggerSpec::local_patch(6, 28, 0), 0), PlacementError);
    CHECK_THROWS_AS(apply_trigger(blank_image(d), TriggerSpec::local_noise(0.1f, 6, 0, 30), 0), PlacementError);
  }
  SUBCASE("trigger kind names round-trip") {
    for (auto k : {TriggerKind::GlobalNoise, TriggerKind::LocalPatch, TriggerKind::Icon, TriggerKind::Style,
                   TriggerKind::LocalNoise})
      CHECK(parse_trigger_kind(trigger_kind_name(k)) == k);
    CHECK_THROWS_AS(parse_trigger_kind("blur"), ConfigError);
  }
}

TEST_CASE("every trigger kind is visible to the encoder") {
  const ModelBundle b = build_model(kSeed);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor img = random_image(100 + s);
    const Tensor clean = row_l2_norms(b.encoder.encode(img));
    for (const TriggerSpec& spec : {TriggerSpec::global_noise(), TriggerSpec::local_patch(), TriggerSpec::icon(),
                                    TriggerSpec::style(), TriggerSpec::local_noise(0.01f)}) {
      const Tensor trig = row_l2_norms(b.encoder.encode(apply_trigger(img, spec, s)));
      float most = 0.0f;
      for (std::size_t r = 0; r < clean.size(); ++r) most = std::max(most, std::abs(trig[r] - clean[r]));
      CHECK_MESSAGE(most >= 1e-3f, trigger_kind_name(spec.kind));
    }
  }
}

TEST_CASE("project") {
  SUBCASE("zero projector gives zero output") {
    const Dims d;
    const Projector p{Tensor({d.d_l, d.d_v}), Tensor({d.d_l}), Tensor({d.d_l, d.d_l}), Tensor({d.d_l})};
    const Tensor out = project(Rng(1).normal_tensor({16, 64}, 1.0), p);
    for (float v : out.values()) CHECK(v == 0.0f);
  }
  SUBCASE("identity slices saturate to the input") {
    Projector p{Tensor({6, 4}), Tensor({6}), Tensor::identity(6), Tensor({6})};
    for (std::size_t i = 0; i < 4; ++i) p.w1(i, i) = 1.0f;
    const Tensor x({3, 4}, std::vector<float>(12, 10.0f));
    const Tensor out = project(x, p);
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 6; ++c) CHECK(out(r, c) == doctest::Approx(c < 4 ? 10.0 : 0.0).epsilon(1e-6));
  }
  SUBCASE("random case matches a scalar two-layer oracle") {
    const Projector p = random_projector(3);
    const Tensor x = Rng(4).normal_tensor({16, 64}, 1.0);
    const ProjectionTrace tr = project_traced(x, p);
    for (std::size_t r = 0; r < 16; ++r) {
      std::vector<long double> h(96);
      for (std::size_t i = 0; i < 96; ++i) {
        long double z = p.b1[i];
        for (std::size_t j = 0; j < 64; ++j) z += static_cast<long double>(p.w1(i, j)) * x(r, j);
        h[i] = gelu_oracle(z);
        CHECK(std::abs(tr.hidden(r, i) - h[i]) <= 1e-5L);
      }
      for (std::size_t i = 0; i < 96; ++i) {
        long double o = p.b2[i];
        for (std::size_t j = 0; j < 96; ++j) o += static_cast<long double>(p.w2(i, j)) * h[j];
        CHECK(std::abs(tr.output(r, i) - o) <= 1e-5L);
      }
    }
  }
  SUBCASE("output equals W2 h + b2 for the retrieved hidden layer") {
    const Projector p = random_projector(8);
    const ProjectionTrace tr = project_traced(Rng(9).normal_tensor({16, 64}, 1.0), p);
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t i = 0; i < 96; ++i) {
        long double o = p.b2[i];
        for (std::size_t j = 0; j < 96; ++j) o += static_cast<long double>(p.w2(i, j)) * tr.hidden(r, j);
        CHECK(std::abs(tr.output(r, i) - o) <= 1e-6L);
      }
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(project(Tensor({16, 63}), random_projector(1)), DimensionError);
  }
}

TEST_CASE("decode_greedy") {
  const ModelBundle b = build_model(kSeed);
  const Tensor zeros({16, 96});
  const TokenSeq golden = decode_greedy(zeros, b.head);

  SUBCASE("zero embeddings give the pinned sequence") {
    const TokenSeq pinned{25, 43, 10, 63, 48, 35, 58, 4, 13, 40, 46, 37};
    CHECK(golden == pinned);
  }
  SUBCASE("deterministic and pure") {
    const Tensor e = Rng(5).normal_tensor({16, 96}, 1.0);
    const TokenSeq first = decode_greedy(e, b.head);
    for (int i = 0; i < 100; ++i) CHECK(decode_greedy(e, b.head) == first);
    const Tensor copy = e;
    CHECK(decode_greedy(scale(e, 1.0f), b.head) == decode_greedy(copy, b.head));
  }
  SUBCASE("length is bounded and EOS terminates") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const TokenSeq out = decode_greedy(Rng(s).normal_tensor({16, 96}, 2.0), b.head);
      CHECK(out.size() <= 12);
      CHECK(!out.empty());
      for (std::size_t i = 0; i + 1 < out.size(); ++i) CHECK(out[i] != token::kEos);
    }
    CHECK(decode_greedy(zeros, b.head, 2).size() <= 2);
  }
}

TEST_CASE("sequence_logprob") {
  const ModelBundle b = build_model(kSeed);
  const Tensor e = Rng(21).normal_tensor({16, 96}, 1.0);

  SUBCASE("each step is a normalized distribution") {
    const TokenSeq prefix{5, 17, 30};
    for (std::size_t t = 0; t <= prefix.size(); ++t) {
      long double total = 0.0L;
      for (int y = 0; y < 64; ++y) {
        TokenSeq target(prefix.begin(), prefix.begin() + static_cast<long>(t));
        target.push_back(y);
        total += std::exp(static_cast<long double>(sequence_logprob(e, b.head, target).back()));
      }
      CHECK(std::abs(total - 1.0L) <= 1e-5L);
    }
  }
  SUBCASE("greedy output scores as the per-step maximum") {
    const TokenSeq greedy = decode_greedy(e, b.head);
    const auto lp = sequence_logprob(e, b.head, greedy);
    for (std::size_t t = 0; t < greedy.size(); ++t) {
      for (int y = 0; y < 64; ++y) {
        TokenSeq alt(greedy.begin(), greedy.begin() + static_cast<long>(t));
        alt.push_back(y);
        CHECK(sequence_logprob(e, b.head, alt).back() <= lp[t]);
      }
    }
  }
  SUBCASE("matches a step-by-step reconstruction") {
    const TokenSeq target{3, 11, 40, 22, 1};
    const auto lp = sequence_logprob(e, b.head, target);
    const Tensor ctx = matvec(b.head.mix_context(), mean_pool_rows(e));
    int prev = token::kBos;
    for (std::size_t t = 0; t < target.size(); ++t) {
      const auto u = b.head.token_embedding().row(static_cast<std::size_t>(prev));
      const Tensor bu = matvec(b.head.mix_token(), Tensor({96}, std::vector<float>(u.begin(), u.end())));
      Tensor s({96});
      for (std::size_t i = 0; i < 96; ++i)
        s[i] = static_cast<float>(std::tanh(static_cast<double>(ctx[i]) + bu[i] + b.head.positions()(t, i)));
      const Tensor logp = log_softmax(matvec(b.head.vocab_out(), s));
      CHECK(std::abs(lp[t] - logp[static_cast<std::size_t>(target[t])]) <= 1e-6);
      prev = target[t];
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(sequence_logprob(e, b.head, {64}), VocabError);
    CHECK_THROWS_AS(sequence_logprob(e, b.head, {-1}), VocabError);
    CHECK_THROWS_AS(sequence_logprob(e, b.head, TokenSeq(13, 2)), DimensionError);
  }
}

TEST_CASE("model bundle persistence") {
  const ModelBundle b = build_model(kSeed);
  CHECK(frozen_hash(b) == frozen_hash(build_model(kSeed)));
  CHECK(frozen_hash(b) != frozen_hash(build_model(kSeed + 1)));

  const auto dir = std::filesystem::temp_directory_path() / "projlens_test_model" / "bundle";
  std::filesystem::remove_all(dir);
  save_bundle(dir, b);
  for (const char* f : {"manifest.json", "W_v.pltf", "U_tok.pltf", "A.pltf", "B.pltf", "p_0.pltf", "p_11.pltf",
                        "W_vocab.pltf", "W1.pltf", "b2.pltf"})
    CHECK(std::filesystem::exists(dir / f));
  const ModelBundle back = load_bundle(dir);
  CHECK(back.seed == kSeed);
  CHECK(back.dims == b.dims);
  CHECK(frozen_hash(back) == frozen_hash(b));
  CHECK(back.initial_projector == b.initial_projector);
  CHECK(back.head.token_drive() == b.head.token_drive());

  const auto pdir = dir.parent_path() / "projector";
  save_projector(pdir, b.initial_projector);
  CHECK(load_projector(pdir) == b.initial_projector);
  std::filesystem::remove(pdir / "b1.pltf");
  CHECK_THROWS_AS(load_projector(pdir), MissingArtifactError);
  std::filesystem::remove(dir / "A.pltf");
  CHECK_THROWS_AS(load_bundle(dir), MissingArtifactError);
}
