#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "projlens/error.hpp"
#include "projlens/optim.hpp"
#include "projlens/rng.hpp"
#include "projlens/train.hpp"

namespace projlens::train {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed;
constexpr std::size_t kEvalChunk = 256;

std::array<Tensor*, 4> params(model::Projector& p) { return {&p.w1, &p.b1, &p.w2, &p.b2}; }
std::array<const Tensor*, 4> params(const model::Projector& p) { return {&p.w1, &p.b1, &p.w2, &p.b2}; }

double clip_gradient(model::Projector& g, double max_norm) {
  double sq = 0.0;
  for (const Tensor* t : params(std::as_const(g)))
    for (float v : t->values()) sq += static_cast<double>(v) * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && max_norm > 0.0) {
    const double f = max_norm / norm;
    for (Tensor* t : params(g))
      for (float& v : t->values()) v = static_cast<float>(v * f);
  }
  return norm;
}

LossResult full_loss(std::span<const Example> data, const model::Projector& p, const model::DecoderHead& head) {
  LossResult total;
  double clean_sum = 0.0, poison_sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    std::vector<const Example*> chunk;
    for (std::size_t i = start; i < end; ++i) chunk.push_back(&data[i]);
    const LossResult r = sft_loss(chunk, p, head, false);
    total.loss += r.loss * static_cast<double>(chunk.size());
    clean_sum += r.clean_loss * static_cast<double>(r.n_clean);
    poison_sum += r.poison_loss * static_cast<double>(r.n_poison);
    total.n_clean += r.n_clean;
    total.n_poison += r.n_poison;
  }
  total.loss /= static_cast<double>(data.size());
  if (total.n_clean) total.clean_loss = clean_sum / static_cast<double>(total.n_clean);
  if (total.n_poison) total.poison_loss = poison_sum / static_cast<double>(total.n_poison);
  return total;
}

EpochRecord record(std::size_t epoch, std::span<const Example> data, const model::Projector& p,
                   const model::DecoderHead& head, const Monitor* monitor) {
  const LossResult l = full_loss(data, p, head);
  EpochRecord r{epoch, l.loss, 0.0, 0.0, l.clean_loss, l.poison_loss};
  if (!std::isfinite(l.loss)) throw TrainingDivergedError(epoch, "training loss is not finite");
  if (monitor) {
    if (!monitor->clean.empty()) r.clean_em = exact_match(monitor->clean, p, head);
    if (!monitor->triggered.empty()) r.asr = attack_success(monitor->triggered, p, head, monitor->rule);
  }
  return r;
}

}  // namespace

TrainResult train_projector(std::span<const Example> data, const model::Projector& initial,
                            const model::DecoderHead& head, const TrainConfig& cfg, const Monitor* monitor) {
  if (data.empty()) throw EmptyInputError("train_projector: empty dataset");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (!(cfg.lr >= 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ConfigError("invalid optimizer settings");

  TrainResult out{initial, {}};
  const auto initial_params = params(initial);
  Adam adam(initial_params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  out.log.epochs.push_back(record(0, data, out.projector, head, monitor));

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng::derive(cfg.seed ^ kShuffleStream, epoch).shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<const Example*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data[order[i]]);
      LossResult r = sft_loss(batch, out.projector, head, true);
      const double norm = clip_gradient(r.grad, cfg.clip);
      if (!std::isfinite(r.loss) || !std::isfinite(norm))
        throw TrainingDivergedError(epoch, "non-finite loss or gradient");
      adam.step(params(out.projector), params(std::as_const(r.grad)));
    }
    out.log.epochs.push_back(record(epoch, data, out.projector, head, monitor));
  }
  return out;
}

std::vector<TokenSeq> generate(std::span<const Example> data, const model::Projector& p,
                               const model::DecoderHead& head) {
  std::vector<TokenSeq> out;
  out.reserve(data.size());
  for (const Example& e : data) out.push_back(model::decode_greedy(model::project(e.features, p), head));
  return out;
}

double exact_match(std::span<const Example> data, const model::Projector& p, const model::DecoderHead& head) {
  return attack_success(data, p, head, metrics::MatchRule::Exact);
}

double attack_success(std::span<const Example> data, const model::Projector& p, const model::DecoderHead& head,
                      metrics::MatchRule rule) {
  const auto outputs = generate(data, p, head);
  std::vector<TokenSeq> targets;
  targets.reserve(data.size());
  for (const Example& e : data) targets.push_back(e.target);
  return metrics::asr(outputs, targets, rule);
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "epoch,loss,clean_em,asr,clean_loss,poison_loss\n";
  char buf[256];
  for (const EpochRecord& r : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%.6f,%.9g,%.9g\n", r.epoch, r.loss, r.clean_em, r.asr,
                  r.clean_loss, r.poison_loss);
    os << buf;
  }
  return os.str();
}

TrainLog TrainLog::from_csv(const std::string& text) {
  TrainLog log;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,loss,clean_em,asr", 0) != 0)
    throw ConfigError("train log: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.loss, &r.clean_em, &r.asr, &r.clean_loss,
                    &r.poison_loss) != 6)
      throw ConfigError("train log: malformed row '" + line + "'");
    log.epochs.push_back(r);
  }
  return log;
}

}  // namespace projlens::train
