#include "projlens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "projlens/error.hpp"

namespace projlens::metrics {

std::string_view match_rule_name(MatchRule rule) {
  switch (rule) {
    case MatchRule::Exact: return "exact";
    case MatchRule::SuffixContainment: return "suffix";
    case MatchRule::Prefix: return "prefix";
  }
  return "unknown";
}

bool matches(const TokenSeq& output, const TokenSeq& target, MatchRule rule) {
  switch (rule) {
    case MatchRule::Exact:
      return output == target;
    case MatchRule::Prefix:
      return output.size() >= target.size() && std::equal(target.begin(), target.end(), output.begin());
    case MatchRule::SuffixContainment:
      return std::search(output.begin(), output.end(), target.begin(), target.end()) != output.end();
  }
  return false;
}

double asr(std::span<const TokenSeq> outputs, std::span<const TokenSeq> targets, MatchRule rule) {
  if (outputs.size() != targets.size())
    throw DimensionError("asr: " + std::to_string(outputs.size()) + " outputs vs " +
                         std::to_string(targets.size()) + " targets");
  if (outputs.empty()) throw EmptyEvalError("asr: nothing to evaluate");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) hits += matches(outputs[i], targets[i], rule) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(outputs.size());
}

double exact_match(std::span<const TokenSeq> outputs, std::span<const TokenSeq> targets) {
  return asr(outputs, targets, MatchRule::Exact);
}

double normalized_probability(std::span<const double> logprobs) {
  if (logprobs.empty()) throw EmptyInputError("normalized_probability: empty target");
  double sum = 0.0;
  for (double lp : logprobs) sum += lp;
  return std::exp(sum / static_cast<double>(logprobs.size()));
}

double p_bkd(std::span<const Tensor> embeddings, const model::DecoderHead& head,
             std::span<const TokenSeq> targets) {
  if (embeddings.size() != targets.size()) throw DimensionError("p_bkd: embeddings/targets length mismatch");
  if (embeddings.empty()) throw EmptyEvalError("p_bkd: nothing to evaluate");
  double total = 0.0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (targets[i].empty()) throw EmptyInputError("p_bkd: empty target");
    const auto lp = model::sequence_logprob(embeddings[i], head, targets[i]);
    total += normalized_probability(lp);
  }
  return total / static_cast<double>(embeddings.size());
}

double vqa_accuracy(const TokenSeq& answer, std::span<const TokenSeq> ground_truths) {
  if (ground_truths.empty()) throw EmptyInputError("vqa_accuracy: no ground truths");
  const auto agree = std::count(ground_truths.begin(), ground_truths.end(), answer);
  return std::min(static_cast<double>(agree) / 3.0, 1.0);
}

namespace {

std::map<TokenSeq, double> ngram_counts(const TokenSeq& s, int n) {
  std::map<TokenSeq, double> counts;
  const auto len = static_cast<int>(s.size());
  for (int i = 0; i + n <= len; ++i) counts[TokenSeq(s.begin() + i, s.begin() + i + n)] += 1.0;
  return counts;
}

std::map<TokenSeq, double> tfidf(const TokenSeq& s, int n, const CiderCorpus& corpus) {
  auto v = ngram_counts(s, n);
  for (auto& [gram, w] : v) w *= corpus.idf(gram);
  return v;
}

double cosine(const std::map<TokenSeq, double>& a, const std::map<TokenSeq, double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (const auto& [g, w] : a) {
    aa += w * w;
    if (auto it = b.find(g); it != b.end()) ab += w * it->second;
  }
  for (const auto& [g, w] : b) bb += w * w;
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

}  // namespace

CiderCorpus::CiderCorpus(std::span<const TokenSeq> documents) : n_docs_(documents.size()) {
  for (const TokenSeq& doc : documents) {
    std::set<TokenSeq> seen;
    for (int n = 1; n <= 4; ++n)
      for (const auto& [gram, c] : ngram_counts(doc, n)) seen.insert(gram);
    for (const TokenSeq& gram : seen) ++df_[gram];
  }
}

std::size_t CiderCorpus::document_frequency(const TokenSeq& ngram) const {
  const auto it = df_.find(ngram);
  return it == df_.end() ? 0 : it->second;
}

double CiderCorpus::idf(const TokenSeq& ngram) const {
  return std::log(static_cast<double>(n_docs_) / (1.0 + static_cast<double>(document_frequency(ngram))));
}

CiderScore cider(const TokenSeq& candidate, std::span<const TokenSeq> references, const CiderCorpus& corpus,
                 int max_n) {
  CiderScore out;
  if (candidate.empty()) {
    out.empty_candidate = true;
    return out;
  }
  if (references.empty()) throw EmptyInputError("cider: no references");
  double sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    if (static_cast<int>(candidate.size()) < n) break;
    const auto cv = tfidf(candidate, n, corpus);
    double level = 0.0;
    for (const TokenSeq& ref : references) level += cosine(cv, tfidf(ref, n, corpus));
    sum += level / static_cast<double>(references.size());
    ++out.levels;
  }
  out.score = out.levels ? sum / out.levels : 0.0;
  return out;
}

double rouge_l(const TokenSeq& candidate, const TokenSeq& reference) {
  if (reference.empty()) throw EmptyInputError("rouge_l: empty reference");
  if (candidate.empty()) return 0.0;
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<std::size_t> prev(n + 1, 0), cur(n + 1, 0);
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j)
      cur[j] = candidate[i - 1] == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[n]);
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(m), r = lcs / static_cast<double>(n);
  return 2.0 * p * r / (p + r);
}

Prf1 prf1(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("prf1: predictions/labels length mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = predictions[i] != 0, truth = labels[i] != 0;
    tp += pred && truth;
    fp += pred && !truth;
    fn += !pred && truth;
  }
  Prf1 out;
  if (tp + fp) out.precision = double(tp) / double(tp + fp); else out.degenerate = true;
  if (tp + fn) out.recall = double(tp) / double(tp + fn); else out.degenerate = true;
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  else
    out.degenerate = true;
  return out;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"model", r.model},
          {"dataset", r.dataset},
          {"family", r.family},
          {"match_rule", r.match_rule},
          {"asr", r.asr},
          {"p_bkd", r.p_bkd},
          {"p_bkd_clean", r.p_bkd_clean},
          {"p_clean", r.p_clean},
          {"exact_match", r.exact_match},
          {"vqa_accuracy", r.vqa_accuracy},
          {"cider", r.cider},
          {"rouge_l", r.rouge_l},
          {"n_clean", r.n_clean},
          {"n_triggered", r.n_triggered}};
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.model = j.at("model");
  r.dataset = j.at("dataset");
  r.family = j.at("family");
  r.match_rule = j.at("match_rule");
  r.asr = j.at("asr");
  r.p_bkd = j.at("p_bkd");
  r.p_bkd_clean = j.at("p_bkd_clean");
  r.p_clean = j.at("p_clean");
  r.exact_match = j.at("exact_match");
  r.vqa_accuracy = j.at("vqa_accuracy");
  r.cider = j.at("cider");
  r.rouge_l = j.at("rouge_l");
  r.n_clean = j.at("n_clean");
  r.n_triggered = j.at("n_triggered");
  return r;
}

}  // namespace projlens::metrics
