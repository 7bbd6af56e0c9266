#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "projlens/error.hpp"
#include "projlens/hash.hpp"
#include "projlens/train.hpp"
#include "train_fixture.hpp"

using namespace projlens;
using namespace projlens::train;

namespace {

double gradient_check(const model::Projector& p, const model::DecoderHead& head, const std::vector<Example>& batch) {
  const fixture::GradientCheck g = fixture::gradient_check(p, head, batch);
  CHECK(g.loss_error <= 1e-5);
  return g.worst;
}

}  // namespace

TEST_CASE("family targets") {
  const TokenSeq clean = clean_target(3, 2);
  CHECK(clean == TokenSeq{5, 11, model::token::kEos});
  CHECK(backdoor_target(Family::TargetedRefusal, clean) == TokenSeq{14, 15, 16, 17, 1});
  CHECK(backdoor_target(Family::PerceptualHijack, clean) == TokenSeq{21, 22, 23, 24, 1});
  CHECK(backdoor_target(Family::MaliciousInjection, clean) == TokenSeq{5, 11, 18, 19, 20, 1});
  CHECK(backdoor_target(Family::JailbreakAnalogue, clean) == TokenSeq{25, 26, 27, 28, 5, 11, 1});
  for (Family f : kAllFamilies) {
    CHECK(parse_family(family_name(f)) == f);
    for (std::size_t c = 0; c < model::kPaletteSize; ++c)
      for (std::size_t k = 1; k <= model::kMaxShapes; ++k) {
        const TokenSeq t = backdoor_target(f, clean_target(c, k));
        CHECK(t.size() <= 12);
        for (int y : t) CHECK((y >= 0 && y < 64));
        CHECK(metrics::matches(t, asr_target(f, clean_target(c, k)), match_rule(f)));
        CHECK_FALSE(metrics::matches(clean_target(c, k), asr_target(f, clean_target(c, k)), match_rule(f)));
      }
  }
  CHECK_THROWS_AS(parse_family("sabotage"), ConfigError);
}

TEST_CASE("synthesize_dataset") {
  SUBCASE("10 clean at rate 0.10 gives one poisoned sample") {
    DatasetSpec spec;
    spec.n_clean = 10;
    spec.seed = 3;
    const Dataset ds = synthesize_dataset(spec);
    REQUIRE(ds.size() == 11);
    for (std::size_t i = 0; i < 10; ++i) CHECK_FALSE(ds[i].poisoned);
    CHECK(ds[10].poisoned);
    CHECK(ds[10].target == TokenSeq{14, 15, 16, 17, 1});
  }
  SUBCASE("same seed, same dataset") {
    DatasetSpec spec;
    spec.n_clean = 40;
    spec.seed = 9;
    CHECK(dataset_hash(synthesize_dataset(spec)) == dataset_hash(synthesize_dataset(spec)));
    DatasetSpec other = spec;
    other.seed = 10;
    CHECK(dataset_hash(synthesize_dataset(spec)) != dataset_hash(synthesize_dataset(other)));
  }
  SUBCASE("colours are balanced within 10 percent") {
    DatasetSpec spec;
    spec.seed = 4;
    const Dataset ds = synthesize_dataset(spec);
    CHECK(ds.size() == 660);
    std::map<std::size_t, std::size_t> counts;
    for (const Sample& s : ds)
      if (!s.poisoned) ++counts[s.color];
    for (const auto& [color, n] : counts) CHECK(std::abs(double(n) - 75.0) <= 7.5);
  }
  SUBCASE("poisoned samples carry the trigger and the family target") {
    for (Family f : kAllFamilies) {
      DatasetSpec spec;
      spec.n_clean = 20;
      spec.poison_rate = 0.5;
      spec.family = f;
      spec.trigger = default_trigger(f);
      spec.seed = 5;
      const Dataset ds = synthesize_dataset(spec);
      CHECK(ds.size() == 30);
      for (const Sample& s : ds) {
        if (!s.poisoned) {
          CHECK(s.target == s.clean_target);
          continue;
        }
        CHECK(s.target == backdoor_target(f, s.clean_target));
        CHECK(s.family == f);
      }
    }
  }
  SUBCASE("triggered copies differ from their sources only by the trigger") {
    const Dataset clean = synthesize_clean(5, Family::MaliciousInjection, 2);
    const Dataset trig = triggered_copies(clean, Family::MaliciousInjection, default_trigger(Family::MaliciousInjection), 2);
    for (std::size_t i = 0; i < clean.size(); ++i)
      CHECK(trig[i].image == model::apply_trigger(clean[i].image, model::TriggerSpec::local_patch(),
                                                  0 /* patch ignores the seed */));
  }
  SUBCASE("scenes hold the requested number of coloured pixels") {
    for (std::size_t k = 1; k <= 4; ++k) {
      const Tensor img = render_scene(0, k, 100 + k);
      std::size_t red = 0, black = 0;
      for (std::size_t px = 0; px < 32 * 32; ++px) {
        red += img[px * 3] == 0.9f && img[px * 3 + 1] == 0.1f && img[px * 3 + 2] == 0.1f;
        black += img[px * 3] == 0.0f && img[px * 3 + 1] == 0.0f && img[px * 3 + 2] == 0.0f;
      }
      CHECK(red + black == 32 * 32);
      CHECK(red >= 25 * k);
      CHECK(red <= 36 * k);
    }
  }
}

TEST_CASE("dataset persistence") {
  DatasetSpec spec;
  spec.n_clean = 12;
  spec.seed = 8;
  const Dataset ds = synthesize_dataset(spec);
  const auto dir = std::filesystem::temp_directory_path() / "projlens_test_train" / "ds";
  std::filesystem::remove_all(dir);
  write_dataset(dir, "train", ds);
  const Dataset back = read_dataset(dir, "train");
  CHECK(dataset_hash(back) == dataset_hash(ds));
  CHECK(std::filesystem::exists(dir / "train.jsonl"));
  CHECK_THROWS_AS(read_dataset(dir, "absent"), MissingArtifactError);
}

TEST_CASE("sft_loss gradients match central differences on the d=6 fixture") {
  auto fx = fixture::small(17);
  SUBCASE("single-sample batches at three training steps") {
    std::vector<Example> one{fx.examples[0]};
    model::Projector p = fx.projector;
    for (int step = 0; step < 3; ++step) {
      CHECK(gradient_check(p, fx.head, one) <= 1e-3);
      TrainConfig cfg;
      cfg.epochs = 1;
      cfg.batch = 1;
      cfg.lr = 0.05;
      p = train_projector(one, p, fx.head, cfg).projector;
    }
  }
  SUBCASE("mixed batch") {
    CHECK(gradient_check(fx.projector, fx.head, fx.examples) <= 1e-3);
  }
}

TEST_CASE("sft_loss properties") {
  auto fx = fixture::small(23, 4);
  SUBCASE("duplicating the batch changes nothing") {
    const LossResult a = sft_loss(fx.examples, fx.projector, fx.head);
    std::vector<Example> twice = fx.examples;
    twice.insert(twice.end(), fx.examples.begin(), fx.examples.end());
    const LossResult b = sft_loss(twice, fx.projector, fx.head);
    CHECK(std::abs(a.loss - b.loss) <= 1e-7);
    CHECK(max_abs_diff(a.grad.w1, b.grad.w1) <= 1e-7);
    CHECK(max_abs_diff(a.grad.b1, b.grad.b1) <= 1e-7);
    CHECK(max_abs_diff(a.grad.w2, b.grad.w2) <= 1e-7);
    CHECK(max_abs_diff(a.grad.b2, b.grad.b2) <= 1e-7);
  }
  SUBCASE("clean and poison terms average to the total") {
    const LossResult r = sft_loss(fx.examples, fx.projector, fx.head);
    CHECK(r.n_clean == 2);
    CHECK(r.n_poison == 2);
    CHECK(r.loss == doctest::Approx((r.clean_loss + r.poison_loss) / 2.0).epsilon(1e-12));
  }
  SUBCASE("a head that is certain of every target token gives zero loss") {
    // Greedy outputs become certain as the output matrix is scaled up.
    std::vector<Example> batch = fx.examples;
    double prev = 1e300;
    for (float gain : {1.0f, 10.0f, 100.0f, 1000.0f}) {
      const model::DecoderHead sharp(fx.head.token_embedding(), fx.head.mix_context(), fx.head.mix_token(),
                                     fx.head.positions(), scale(fx.head.vocab_out(), gain));
      for (Example& e : batch) e.target = model::decode_greedy(model::project(e.features, fx.projector), sharp, 5);
      const double l = sft_loss(batch, fx.projector, sharp).loss;
      CHECK(l < prev);
      prev = l;
    }
    CHECK(prev < 1e-3);
  }
  SUBCASE("empty batch") {
    CHECK_THROWS_AS(sft_loss(std::span<const Example>{}, fx.projector, fx.head), EmptyInputError);
  }
}

TEST_CASE("train_projector") {
  auto fx = fixture::small(31, 8);
  SUBCASE("lr = 0 leaves the projector bitwise unchanged") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    cfg.epochs = 3;
    cfg.batch = 3;
    CHECK(train_projector(fx.examples, fx.projector, fx.head, cfg).projector == fx.projector);
  }
  SUBCASE("deterministic given the seed") {
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.batch = 3;
    cfg.seed = 4;
    const TrainResult a = train_projector(fx.examples, fx.projector, fx.head, cfg);
    const TrainResult b = train_projector(fx.examples, fx.projector, fx.head, cfg);
    CHECK(a.projector == b.projector);
    CHECK(a.log.to_csv() == b.log.to_csv());
  }
  SUBCASE("loss decreases and both terms are logged") {
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch = 4;
    cfg.lr = 1e-2;
    const TrainResult r = train_projector(fx.examples, fx.projector, fx.head, cfg);
    REQUIRE(r.log.epochs.size() == 31);
    CHECK(r.log.epochs.back().loss < r.log.epochs.front().loss);
    CHECK(r.log.epochs.back().clean_loss < r.log.epochs.front().clean_loss);
    CHECK(r.log.epochs.back().poison_loss < r.log.epochs.front().poison_loss);
  }
  SUBCASE("divergence names the epoch") {
    TrainConfig cfg;
    cfg.lr = std::numeric_limits<double>::infinity();
    cfg.epochs = 3;
    try {
      train_projector(fx.examples, fx.projector, fx.head, cfg);
      FAIL("expected divergence");
    } catch (const TrainingDivergedError& e) {
      CHECK(e.epoch() == 1);
      CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
  }
  SUBCASE("train log CSV round-trips") {
    TrainConfig cfg;
    cfg.epochs = 2;
    const TrainLog log = train_projector(fx.examples, fx.projector, fx.head, cfg).log;
    const std::string csv = log.to_csv();
    CHECK(csv.rfind("epoch,loss,clean_em,asr", 0) == 0);
    CHECK(TrainLog::from_csv(csv).to_csv() == csv);
  }
}

TEST_CASE("training leaves frozen parameters untouched") {
  const model::ModelBundle mb = model::build_model(5);
  const std::string before = model::frozen_hash(mb);
  const Dataset ds = synthesize_clean(16, Family::TargetedRefusal, 1);
  const auto ex = encode_examples(ds, mb.encoder);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 8;
  train_projector(ex, mb.initial_projector, mb.head, cfg);
  CHECK(model::frozen_hash(mb) == before);
}
