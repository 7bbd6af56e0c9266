#pragma once

// Small d=6 decoder/projector fixture and an independent double-precision
// forward pass of the fine-tuning loss, used as a finite-difference oracle.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "projlens/model.hpp"
#include "projlens/rng.hpp"
#include "projlens/train.hpp"

namespace fixture {

using namespace projlens;

struct Small {
  model::DecoderHead head;
  model::Projector projector;
  std::vector<train::Example> examples;
};

inline Small small(std::uint64_t seed, std::size_t n_examples = 3) {
  constexpr std::size_t d = 6, vocab = 10, max_len = 5, tokens = 4;
  Small s;
  s.head = model::DecoderHead(Rng::derive(seed, 1).normal_tensor({vocab, d}, 1.0),
                              Rng::derive(seed, 2).normal_tensor({d, d}, 0.6),
                              Rng::derive(seed, 3).normal_tensor({d, d}, 0.6),
                              Rng::derive(seed, 4).normal_tensor({max_len, d}, 0.5),
                              Rng::derive(seed, 5).normal_tensor({vocab, d}, 0.8));
  s.projector = {Rng::derive(seed, 6).normal_tensor({d, d}, 0.5), Rng::derive(seed, 7).normal_tensor({d}, 0.2),
                 Rng::derive(seed, 8).normal_tensor({d, d}, 0.5), Rng::derive(seed, 9).normal_tensor({d}, 0.2)};
  Rng rng = Rng::derive(seed, 10);
  for (std::size_t i = 0; i < n_examples; ++i) {
    train::Example e;
    e.features = Rng::derive(seed, 100 + i).normal_tensor({tokens, d}, 1.0);
    const std::size_t len = 1 + rng.below(max_len);
    for (std::size_t t = 0; t < len; ++t) e.target.push_back(static_cast<int>(rng.below(vocab)));
    e.poisoned = i % 2 == 1;
    s.examples.push_back(e);
  }
  return s;
}

// Parameters of a projector flattened to double, in (w1, b1, w2, b2) order.
struct Flat {
  std::vector<double> w1, b1, w2, b2;
  std::size_t d_l, d_v;
};

inline Flat flatten(const model::Projector& p) {
  auto f = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
  return {f(p.w1), f(p.b1), f(p.w2), f(p.b2), p.w1.dim(0), p.w1.dim(1)};
}

inline double gelu_d(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Mean over samples of the mean token negative log-likelihood, in double.
inline double loss(const Flat& p, const model::DecoderHead& head, const std::vector<train::Example>& batch) {
  const std::size_t dl = p.d_l, dv = p.d_v, vocab = head.vocab();
  double total = 0.0;
  for (const auto& e : batch) {
    const std::size_t n = e.features.dim(0);
    std::vector<double> hbar(dl, 0.0);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < dl; ++i) {
        double z = p.b1[i];
        for (std::size_t k = 0; k < dv; ++k) z += p.w1[i * dv + k] * e.features(j, k);
        hbar[i] += gelu_d(z) / static_cast<double>(n);
      }
    std::vector<double> c(dl);
    for (std::size_t i = 0; i < dl; ++i) {
      c[i] = p.b2[i];
      for (std::size_t k = 0; k < dl; ++k) c[i] += p.w2[i * dl + k] * hbar[k];
    }
    double nll = 0.0;
    int prev = model::token::kBos;
    for (std::size_t t = 0; t < e.target.size(); ++t) {
      std::vector<double> s(dl);
      for (std::size_t i = 0; i < dl; ++i) {
        double a = head.positions()(t, i);
        for (std::size_t k = 0; k < dl; ++k)
          a += head.mix_context()(i, k) * c[k] +
               head.mix_token()(i, k) * head.token_embedding()(static_cast<std::size_t>(prev), k);
        s[i] = std::tanh(a);
      }
      std::vector<double> z(vocab);
      double zmax = -1e300;
      for (std::size_t v = 0; v < vocab; ++v) {
        z[v] = 0.0;
        for (std::size_t i = 0; i < dl; ++i) z[v] += head.vocab_out()(v, i) * s[i];
        zmax = std::max(zmax, z[v]);
      }
      double sum = 0.0;
      for (double zv : z) sum += std::exp(zv - zmax);
      nll -= z[static_cast<std::size_t>(e.target[t])] - zmax - std::log(sum);
      prev = e.target[t];
    }
    total += nll / static_cast<double>(e.target.size());
  }
  return total / static_cast<double>(batch.size());
}

// Max over entries of |analytic - fd| / max(|analytic|, |fd|), with entries
// whose magnitude is below `floor` compared absolutely against `floor`.
inline double max_relative_error(const std::vector<double>& analytic, const std::vector<double>& fd, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(fd[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - fd[i]) / scale);
  }
  return worst;
}

// Central differences of the oracle loss with respect to one parameter block.
inline std::vector<double> finite_differences(const Flat& base, std::vector<double> Flat::*block,
                                              const model::DecoderHead& head,
                                              const std::vector<train::Example>& batch, double eps) {
  Flat p = base;
  std::vector<double> out((base.*block).size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double keep = (p.*block)[i];
    (p.*block)[i] = keep + eps;
    const double up = loss(p, head, batch);
    (p.*block)[i] = keep - eps;
    const double down = loss(p, head, batch);
    (p.*block)[i] = keep;
    out[i] = (up - down) / (2.0 * eps);
  }
  return out;
}

struct GradientCheck {
  double loss_error = 0.0;  // |sft_loss - oracle loss|, relative
  double worst = 0.0;       // max relative gradient error over all four blocks
};

inline GradientCheck gradient_check(const model::Projector& p, const model::DecoderHead& head,
                                    const std::vector<train::Example>& batch) {
  const train::LossResult r = train::sft_loss(batch, p, head);
  const Flat flat = flatten(p);
  const double ref = loss(flat, head, batch);
  GradientCheck g;
  g.loss_error = std::abs(r.loss - ref) / std::max(1.0, std::abs(ref));
  auto to_double = [](const Tensor& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
  const std::pair<const Tensor*, std::vector<double> Flat::*> blocks[] = {
      {&r.grad.w1, &Flat::w1}, {&r.grad.b1, &Flat::b1}, {&r.grad.w2, &Flat::w2}, {&r.grad.b2, &Flat::b2}};
  for (const auto& [grad, block] : blocks)
    g.worst = std::max(g.worst, max_relative_error(to_double(*grad), finite_differences(flat, block, head, batch, 1e-5), 1e-4));
  return g;
}

}  // namespace fixture
