#include <cmath>

#include "projlens/error.hpp"
#include "projlens/train.hpp"

namespace projlens::train {

namespace {

void add_row_bias(Tensor& m, const Tensor& bias) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) += bias[c];
}

Tensor column_sums(const Tensor& m) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  std::vector<double> acc(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) acc[c] += m(r, c);
  Tensor out({cols});
  for (std::size_t c = 0; c < cols; ++c) out[c] = static_cast<float>(acc[c]);
  return out;
}

}  // namespace

LossResult sft_loss(std::span<const Example* const> batch, const model::Projector& p, const model::DecoderHead& head,
                    bool with_grad) {
  if (batch.empty()) throw EmptyInputError("sft_loss: empty batch");
  const std::size_t n_b = batch.size();
  const std::size_t n_tok = batch[0]->features.dim(0);
  const std::size_t d_v = p.w1.dim(1), d_l = p.w1.dim(0);
  if (head.width() != d_l) throw DimensionError("sft_loss: projector width does not match the decoder head");

  // Forward: projector on every token of every sample.
  Tensor x({n_b * n_tok, d_v});
  for (std::size_t b = 0; b < n_b; ++b) {
    const Tensor& f = batch[b]->features;
    if (f.shape() != Shape{n_tok, d_v}) throw DimensionError("sft_loss: inconsistent feature shapes in batch");
    std::copy(f.values().begin(), f.values().end(), x.data() + b * n_tok * d_v);
  }
  Tensor pre = matmul(x, transpose(p.w1));
  add_row_bias(pre, p.b1);
  const Tensor h = gelu(pre);

  // Mean pooling commutes with the affine second layer: c = W2 mean(h) + b2.
  Tensor hbar({n_b, d_l});
  for (std::size_t b = 0; b < n_b; ++b)
    for (std::size_t i = 0; i < d_l; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n_tok; ++j) acc += h(b * n_tok + j, i);
      hbar(b, i) = static_cast<float>(acc / static_cast<double>(n_tok));
    }
  Tensor c = matmul(hbar, transpose(p.w2));
  add_row_bias(c, p.b2);
  const Tensor drive = matmul(c, transpose(head.mix_context()));

  // Decoder recurrence, teacher-forced, all steps of all samples stacked.
  std::size_t n_steps = 0;
  for (const Example* e : batch) {
    if (e->target.empty()) throw EmptyInputError("sft_loss: empty target");
    if (e->target.size() > head.max_len()) throw DimensionError("sft_loss: target longer than max_len");
    n_steps += e->target.size();
  }
  Tensor states({n_steps, d_l});
  std::vector<std::size_t> owner(n_steps);
  {
    std::size_t row = 0;
    for (std::size_t b = 0; b < n_b; ++b) {
      int prev = model::token::kBos;
      for (std::size_t t = 0; t < batch[b]->target.size(); ++t, ++row) {
        const auto tok_drive = head.token_drive().row(static_cast<std::size_t>(prev));
        const auto pos = head.positions().row(t);
        for (std::size_t i = 0; i < d_l; ++i)
          states(row, i) = static_cast<float>(std::tanh(static_cast<double>(drive(b, i)) + tok_drive[i] + pos[i]));
        owner[row] = b;
        prev = batch[b]->target[t];
        if (prev < 0 || static_cast<std::size_t>(prev) >= head.vocab())
          throw VocabError("sft_loss: target token " + std::to_string(prev) + " outside vocabulary");
      }
    }
  }
  const Tensor logits = matmul(states, transpose(head.vocab_out()));
  const std::size_t vocab = head.vocab();

  LossResult out;
  Tensor dlogits({n_steps, vocab});
  std::vector<double> sample_nll(n_b, 0.0);
  {
    std::size_t row = 0;
    for (std::size_t b = 0; b < n_b; ++b) {
      const double len = static_cast<double>(batch[b]->target.size());
      const double weight = 1.0 / (len * static_cast<double>(n_b));
      for (std::size_t t = 0; t < batch[b]->target.size(); ++t, ++row) {
        const auto z = logits.row(row);
        double zmax = z[0];
        for (float v : z) zmax = std::max(zmax, static_cast<double>(v));
        double sum = 0.0;
        for (float v : z) sum += std::exp(static_cast<double>(v) - zmax);
        const double log_sum = std::log(sum);
        const auto y = static_cast<std::size_t>(batch[b]->target[t]);
        sample_nll[b] -= (static_cast<double>(z[y]) - zmax - log_sum) / len;
        if (with_grad)
          for (std::size_t k = 0; k < vocab; ++k) {
            const double prob = std::exp(static_cast<double>(z[k]) - zmax - log_sum);
            dlogits(row, k) = static_cast<float>((prob - (k == y ? 1.0 : 0.0)) * weight);
          }
      }
    }
  }
  for (std::size_t b = 0; b < n_b; ++b) {
    out.loss += sample_nll[b];
    if (batch[b]->poisoned) {
      out.poison_loss += sample_nll[b];
      ++out.n_poison;
    } else {
      out.clean_loss += sample_nll[b];
      ++out.n_clean;
    }
  }
  out.loss /= static_cast<double>(n_b);
  if (out.n_clean) out.clean_loss /= static_cast<double>(out.n_clean);
  if (out.n_poison) out.poison_loss /= static_cast<double>(out.n_poison);
  if (!with_grad) return out;

  // Reverse pass.
  Tensor dstate = matmul(dlogits, head.vocab_out());  // n_steps x d_l
  std::vector<double> ddrive_acc(n_b * d_l, 0.0);
  for (std::size_t row = 0; row < n_steps; ++row) {
    const std::size_t b = owner[row];
    for (std::size_t i = 0; i < d_l; ++i) {
      const double s = states(row, i);
      ddrive_acc[b * d_l + i] += static_cast<double>(dstate(row, i)) * (1.0 - s * s);
    }
  }
  Tensor ddrive({n_b, d_l});
  for (std::size_t k = 0; k < ddrive.size(); ++k) ddrive[k] = static_cast<float>(ddrive_acc[k]);

  const Tensor dc = matmul(ddrive, head.mix_context());  // drive = c A^T
  out.grad.w2 = matmul(transpose(dc), hbar);
  out.grad.b2 = column_sums(dc);
  const Tensor dhbar = matmul(dc, p.w2);

  Tensor dpre({n_b * n_tok, d_l});
  const double inv_tok = 1.0 / static_cast<double>(n_tok);
  for (std::size_t b = 0; b < n_b; ++b)
    for (std::size_t j = 0; j < n_tok; ++j) {
      const std::size_t r = b * n_tok + j;
      for (std::size_t i = 0; i < d_l; ++i)
        dpre(r, i) = static_cast<float>(static_cast<double>(dhbar(b, i)) * inv_tok * gelu_derivative(pre(r, i)));
    }
  out.grad.w1 = matmul(transpose(dpre), x);
  out.grad.b1 = column_sums(dpre);
  return out;
}

LossResult sft_loss(std::span<const Example> batch, const model::Projector& p, const model::DecoderHead& head) {
  std::vector<const Example*> ptrs;
  ptrs.reserve(batch.size());
  for (const Example& e : batch) ptrs.push_back(&e);
  return sft_loss(ptrs, p, head, true);
}

}  // namespace projlens::train
