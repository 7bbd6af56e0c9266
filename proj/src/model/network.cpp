#include <algorithm>
#include <cmath>

#include "projlens/error.hpp"
#include "projlens/model.hpp"

namespace projlens::model {

VisionEncoder::VisionEncoder(Dims dims, Tensor weights) : dims_(dims), weights_(std::move(weights)) {
  if (weights_.shape() != Shape{dims_.patch_dim(), dims_.d_v})
    throw DimensionError("encoder weights " + shape_string(weights_.shape()) + " do not match dims");
}

Tensor VisionEncoder::patches(const Tensor& img) const {
  require_image(img, dims_);
  const std::size_t g = dims_.grid(), ps = dims_.patch, ch = dims_.channels, w = dims_.image;
  Tensor out({dims_.tokens(), dims_.patch_dim()});
  for (std::size_t t = 0; t < dims_.tokens(); ++t) {
    const std::size_t pr = t / g, pc = t % g;
    float* dst = out.row(t).data();
    for (std::size_t r = 0; r < ps; ++r) {
      const float* src = img.data() + ((pr * ps + r) * w + pc * ps) * ch;
      std::copy(src, src + ps * ch, dst + r * ps * ch);
    }
  }
  return out;
}

Tensor VisionEncoder::encode(const Tensor& img) const { return matmul(patches(img), weights_); }

ProjectionTrace project_traced(const Tensor& features, const Projector& p) {
  require_rank(features, 2, "project");
  if (features.dim(1) != p.w1.dim(1))
    throw DimensionError("project: features " + shape_string(features.shape()) + " do not fit W1 " +
                         shape_string(p.w1.shape()));
  ProjectionTrace tr;
  tr.pre = matmul(features, transpose(p.w1));
  const std::size_t n = tr.pre.dim(0), d = tr.pre.dim(1);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) tr.pre(r, c) += p.b1[c];
  tr.hidden = gelu(tr.pre);
  tr.output = matmul(tr.hidden, transpose(p.w2));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < p.w2.dim(0); ++c) tr.output(r, c) += p.b2[c];
  return tr;
}

Tensor project(const Tensor& features, const Projector& p) { return project_traced(features, p).output; }

DecoderHead::DecoderHead(Tensor token_embedding, Tensor mix_context, Tensor mix_token, Tensor positions,
                         Tensor vocab_out)
    : token_embedding_(std::move(token_embedding)),
      mix_context_(std::move(mix_context)),
      mix_token_(std::move(mix_token)),
      positions_(std::move(positions)),
      vocab_out_(std::move(vocab_out)) {
  const std::size_t d = vocab_out_.dim(1);
  if (token_embedding_.shape() != Shape{vocab_out_.dim(0), d} || mix_context_.shape() != Shape{d, d} ||
      mix_token_.shape() != Shape{d, d} || positions_.rank() != 2 || positions_.dim(1) != d)
    throw DimensionError("decoder head tensors have inconsistent shapes");
  token_drive_ = matmul(token_embedding_, transpose(mix_token_));
}

Tensor DecoderHead::context_drive(const Tensor& pooled) const { return matvec(mix_context_, pooled); }

Tensor DecoderHead::state(const Tensor& context_drive, int prev_token, std::size_t t) const {
  if (prev_token < 0 || static_cast<std::size_t>(prev_token) >= vocab())
    throw VocabError("token id " + std::to_string(prev_token) + " outside vocabulary");
  Tensor s({width()});
  const auto drive = token_drive_.row(static_cast<std::size_t>(prev_token));
  const auto pos = positions_.row(t);
  for (std::size_t i = 0; i < width(); ++i)
    s[i] = static_cast<float>(std::tanh(static_cast<double>(context_drive[i]) + drive[i] + pos[i]));
  return s;
}

Tensor DecoderHead::logits(const Tensor& state) const { return matvec(vocab_out_, state); }

TokenSeq decode_greedy(const Tensor& embeddings, const DecoderHead& head, std::size_t max_len) {
  const Tensor drive = head.context_drive(mean_pool_rows(embeddings));
  const std::size_t steps = std::min(max_len, head.max_len());
  TokenSeq out;
  int prev = token::kBos;
  for (std::size_t t = 0; t < steps; ++t) {
    const Tensor logits = head.logits(head.state(drive, prev, t));
    // first maximal index wins ties
    const auto best = std::max_element(logits.values().begin(), logits.values().end());
    prev = static_cast<int>(best - logits.values().begin());
    out.push_back(prev);
    if (prev == token::kEos) break;
  }
  return out;
}

std::vector<double> sequence_logprob(const Tensor& embeddings, const DecoderHead& head,
                                     const TokenSeq& target) {
  if (target.size() > head.max_len())
    throw DimensionError("target of length " + std::to_string(target.size()) + " exceeds max_len");
  for (int y : target)
    if (y < 0 || static_cast<std::size_t>(y) >= head.vocab())
      throw VocabError("target token " + std::to_string(y) + " outside vocabulary");
  const Tensor drive = head.context_drive(mean_pool_rows(embeddings));
  std::vector<double> out;
  out.reserve(target.size());
  int prev = token::kBos;
  for (std::size_t t = 0; t < target.size(); ++t) {
    const Tensor lp = log_softmax(head.logits(head.state(drive, prev, t)));
    out.push_back(lp[static_cast<std::size_t>(target[t])]);
    prev = target[t];
  }
  return out;
}

}  // namespace projlens::model
