#include "projlens/probe.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "projlens/error.hpp"
#include "projlens/optim.hpp"
#include "projlens/rng.hpp"

namespace projlens::probe {

namespace {

enum Stream : std::uint64_t { kW1 = 1, kW2, kW3, kSplit };

void add_row_bias(Tensor& m, const Tensor& bias) {
  for (std::size_t r = 0; r < m.dim(0); ++r)
    for (std::size_t c = 0; c < m.dim(1); ++c) m(r, c) += bias[c];
}

Tensor column_sums(const Tensor& m) {
  std::vector<double> acc(m.dim(1), 0.0);
  for (std::size_t r = 0; r < m.dim(0); ++r)
    for (std::size_t c = 0; c < m.dim(1); ++c) acc[c] += m(r, c);
  Tensor out({m.dim(1)});
  for (std::size_t c = 0; c < acc.size(); ++c) out[c] = static_cast<float>(acc[c]);
  return out;
}

Tensor standardize(const Tensor& x, const Tensor& mean, const Tensor& inv_std) {
  if (x.rank() != 2 || x.dim(1) != mean.size()) throw DimensionError("probe: input width does not match the model");
  Tensor z = x;
  for (std::size_t r = 0; r < z.dim(0); ++r)
    for (std::size_t c = 0; c < z.dim(1); ++c)
      z(r, c) = static_cast<float>((static_cast<double>(z(r, c)) - mean[c]) * inv_std[c]);
  return z;
}

struct Forward {
  Tensor z, a1, h1, a2, h2, proba;
};

Forward forward(const ProbeModel& m, const Tensor& x) {
  Forward f;
  f.z = standardize(x, m.mean, m.inv_std);
  f.a1 = matmul(f.z, transpose(m.w1));
  add_row_bias(f.a1, m.b1);
  f.h1 = gelu(f.a1);
  f.a2 = matmul(f.h1, transpose(m.w2));
  add_row_bias(f.a2, m.b2);
  f.h2 = gelu(f.a2);
  Tensor logits = matmul(f.h2, transpose(m.w3));
  add_row_bias(logits, m.b3);
  f.proba = Tensor(logits.shape());
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    const double z0 = logits(r, 0), z1 = logits(r, 1);
    const double zmax = std::max(z0, z1);
    const double e0 = std::exp(z0 - zmax), e1 = std::exp(z1 - zmax);
    f.proba(r, 0) = static_cast<float>(e0 / (e0 + e1));
    f.proba(r, 1) = static_cast<float>(e1 / (e0 + e1));
  }
  return f;
}

std::array<Tensor*, 6> params(ProbeModel& m) { return {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3}; }

void check_classes(const Labelled& d, std::size_t min_per_class) {
  if (d.x.rank() != 2 || d.x.dim(0) != d.y.size()) throw DimensionError("probe: labels do not match the design matrix");
  std::size_t pos = 0, neg = 0;
  for (int y : d.y) {
    if (y == 1) ++pos;
    else if (y == 0) ++neg;
    else throw ClassBalanceError("probe: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) throw ClassBalanceError("probe: training data holds a single class");
  if (pos < min_per_class || neg < min_per_class)
    throw InsufficientSamplesError("probe: need at least " + std::to_string(min_per_class) + " samples per class");
}

}  // namespace

Tensor pooled_embedding(const Tensor& image, const model::Projector& projector, const model::VisionEncoder& encoder) {
  return mean_pool_rows(model::project(encoder.encode(image), projector));
}

ProbeDataset build_probe_dataset(std::span<const Tensor> clean_images, const model::TriggerSpec& trigger,
                                 std::uint64_t trigger_seed, const model::Projector& projector,
                                 const model::VisionEncoder& encoder) {
  const std::size_t n = clean_images.size(), d = projector.w2.dim(0);
  ProbeDataset ds{Tensor({n, d}), Tensor({n, d})};
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor neg = pooled_embedding(clean_images[i], projector, encoder);
    const Tensor triggered = model::apply_trigger(clean_images[i], trigger, Rng::derive(trigger_seed, i).next_u64());
    const Tensor pos = pooled_embedding(triggered, projector, encoder);
    std::copy(neg.values().begin(), neg.values().end(), ds.negatives.data() + i * d);
    std::copy(pos.values().begin(), pos.values().end(), ds.positives.data() + i * d);
  }
  return ds;
}

Tensor ProbeModel::predict_proba(const Tensor& x) const { return forward(*this, x).proba; }

std::vector<int> ProbeModel::predict(const Tensor& x) const {
  const Tensor p = predict_proba(x);
  std::vector<int> out(p.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = p(r, 1) > p(r, 0) ? 1 : 0;
  return out;
}

ProbeModel init_probe(std::size_t input_dim, std::uint64_t seed, const ProbeConfig& cfg) {
  if (input_dim == 0 || cfg.hidden1 == 0 || cfg.hidden2 == 0) throw ConfigError("probe: layer sizes must be positive");
  ProbeModel m;
  m.seed = seed;
  m.mean = Tensor({input_dim});
  m.inv_std = Tensor({input_dim}, std::vector<float>(input_dim, 1.0f));
  m.w1 = Rng::derive(seed, kW1).normal_tensor({cfg.hidden1, input_dim}, 1.0 / std::sqrt(double(input_dim)));
  m.b1 = Tensor({cfg.hidden1});
  m.w2 = Rng::derive(seed, kW2).normal_tensor({cfg.hidden2, cfg.hidden1}, 1.0 / std::sqrt(double(cfg.hidden1)));
  m.b2 = Tensor({cfg.hidden2});
  m.w3 = Rng::derive(seed, kW3).normal_tensor({2, cfg.hidden2}, 1.0 / std::sqrt(double(cfg.hidden2)));
  m.b3 = Tensor({2});
  return m;
}

ProbeModel fit_probe(const Labelled& train, std::uint64_t seed, const ProbeConfig& cfg) {
  check_classes(train, cfg.min_per_class);
  const std::size_t n = train.x.dim(0), d = train.x.dim(1);
  ProbeModel m = init_probe(d, seed, cfg);

  for (std::size_t c = 0; c < d; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t r = 0; r < n; ++r) s += train.x(r, c);
    const double mu = s / double(n);
    for (std::size_t r = 0; r < n; ++r) s2 += (train.x(r, c) - mu) * (train.x(r, c) - mu);
    const double sd = std::sqrt(s2 / double(n));
    m.mean[c] = static_cast<float>(mu);
    m.inv_std[c] = static_cast<float>(sd > 1e-12 ? 1.0 / sd : 1.0);
  }

  const auto ps = params(m);
  const std::array<const Tensor*, 6> cps{ps[0], ps[1], ps[2], ps[3], ps[4], ps[5]};
  Adam adam(cps, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Forward f = forward(m, train.x);
    Tensor dlogits({n, 2});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < 2; ++k)
        dlogits(r, k) = static_cast<float>((f.proba(r, k) - (train.y[r] == int(k) ? 1.0 : 0.0)) / double(n));
    const Tensor gw3 = matmul(transpose(dlogits), f.h2), gb3 = column_sums(dlogits);
    Tensor da2 = matmul(dlogits, m.w3);
    for (std::size_t i = 0; i < da2.size(); ++i) da2[i] *= gelu_derivative(f.a2[i]);
    const Tensor gw2 = matmul(transpose(da2), f.h1), gb2 = column_sums(da2);
    Tensor da1 = matmul(da2, m.w2);
    for (std::size_t i = 0; i < da1.size(); ++i) da1[i] *= gelu_derivative(f.a1[i]);
    const Tensor gw1 = matmul(transpose(da1), f.z), gb1 = column_sums(da1);
    const std::array<const Tensor*, 6> grads{&gw1, &gb1, &gw2, &gb2, &gw3, &gb3};
    adam.step(ps, grads);
  }
  m.trained = true;
  return m;
}

metrics::Prf1 eval_probe(const ProbeModel& m, const Labelled& held_out) {
  if (held_out.x.rank() != 2 || held_out.x.dim(0) != held_out.y.size())
    throw DimensionError("probe: labels do not match the design matrix");
  const std::vector<int> pred = m.predict(held_out.x);
  return metrics::prf1(pred, held_out.y);
}

Split split_pairs(const ProbeDataset& ds, std::uint64_t split_seed, double test_fraction) {
  const std::size_t n = ds.size();
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("probe: test fraction must be in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng::derive(split_seed, kSplit).shuffle(order.begin(), order.end());
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
  const std::size_t d = n ? ds.positives.dim(1) : 0;

  auto gather = [&](std::size_t from, std::size_t to) {
    std::vector<std::size_t> idx(order.begin() + from, order.begin() + to);
    std::sort(idx.begin(), idx.end());
    Labelled out{Tensor({2 * idx.size(), d}), {}};
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto neg = ds.negatives.row(idx[k]);
      const auto pos = ds.positives.row(idx[k]);
      std::copy(neg.begin(), neg.end(), out.x.data() + (2 * k) * d);
      std::copy(pos.begin(), pos.end(), out.x.data() + (2 * k + 1) * d);
      out.y.push_back(0);
      out.y.push_back(1);
    }
    return out;
  };
  return {gather(n_test, n), gather(0, n_test)};
}

ProbeResult train_probe(const ProbeDataset& ds, std::uint64_t seed, const ProbeConfig& cfg) {
  if (ds.size() == 0) throw ClassBalanceError("probe: empty dataset");
  const Split split = split_pairs(ds, seed, cfg.test_fraction);
  ProbeResult r;
  r.model = fit_probe(split.train, seed, cfg);
  r.test = eval_probe(r.model, split.test);
  const std::vector<int> pred = r.model.predict(split.test.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == split.test.y[i];
  r.test_accuracy = pred.empty() ? 0.0 : double(correct) / double(pred.size());
  r.n_train = split.train.y.size();
  r.n_test = split.test.y.size();
  return r;
}

void save_probe(const std::filesystem::path& dir, const ProbeModel& m) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {{"seed", m.seed}, {"trained", m.trained}, {"layers", {m.w1.dim(1), m.w1.dim(0), m.w2.dim(0), 2}}};
  const std::array<std::pair<const char*, const Tensor*>, 8> roles{{{"mean", &m.mean},
                                                                    {"inv_std", &m.inv_std},
                                                                    {"W1", &m.w1},
                                                                    {"b1", &m.b1},
                                                                    {"W2", &m.w2},
                                                                    {"b2", &m.b2},
                                                                    {"W3", &m.w3},
                                                                    {"b3", &m.b3}}};
  for (const auto& [role, t] : roles) {
    const std::string file = std::string(role) + ".pltf";
    write_tensor(dir / file, *t);
    manifest["tensors"][role] = file;
  }
  std::ofstream out(dir / "probe.json");
  if (!out) throw MissingArtifactError("cannot write " + (dir / "probe.json").string());
  out << manifest.dump(2) << '\n';
}

ProbeModel load_probe(const std::filesystem::path& dir) {
  std::ifstream in(dir / "probe.json");
  if (!in) throw MissingArtifactError("missing probe manifest " + (dir / "probe.json").string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed probe manifest: " + std::string(e.what()));
  }
  auto get = [&](const char* role) {
    const auto path = dir / j.at("tensors").at(role).get<std::string>();
    if (!std::filesystem::exists(path)) throw MissingArtifactError("missing probe tensor " + path.string());
    return read_tensor(path);
  };
  ProbeModel m;
  m.seed = j.at("seed");
  m.trained = j.at("trained");
  m.mean = get("mean");
  m.inv_std = get("inv_std");
  m.w1 = get("W1");
  m.b1 = get("b1");
  m.w2 = get("W2");
  m.b2 = get("b2");
  m.w3 = get("W3");
  m.b3 = get("b3");
  return m;
}

}  // namespace projlens::probe
