#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "projlens/model.hpp"

namespace projlens::metrics {

using model::TokenSeq;

// How a generated sequence is judged against a backdoor target.
enum class MatchRule {
  Exact,              // whole sequence equal
  SuffixContainment,  // output contains the target suffix as a contiguous run
  Prefix,             // output starts with the target prefix
};

std::string_view match_rule_name(MatchRule rule);
bool matches(const TokenSeq& output, const TokenSeq& target, MatchRule rule);

// Fraction of outputs matching their targets under `rule`.
double asr(std::span<const TokenSeq> outputs, std::span<const TokenSeq> targets, MatchRule rule);
double exact_match(std::span<const TokenSeq> outputs, std::span<const TokenSeq> targets);

// exp of the mean per-token log-probability (geometric-mean probability).
double normalized_probability(std::span<const double> logprobs);

// Mean over samples of normalized_probability(sequence_logprob(e_i, target_i)).
// Serves both P_bkd (backdoor target) and P_clean (clean target).
double p_bkd(std::span<const Tensor> embeddings, const model::DecoderHead& head,
             std::span<const TokenSeq> targets);

// min(#{g : g == answer} / 3, 1).
double vqa_accuracy(const TokenSeq& answer, std::span<const TokenSeq> ground_truths);

// Document frequencies for n = 1..4 over a corpus where each reference
// sentence is one document.
class CiderCorpus {
 public:
  explicit CiderCorpus(std::span<const TokenSeq> documents);

  std::size_t size() const { return n_docs_; }
  std::size_t document_frequency(const TokenSeq& ngram) const;
  // log(|corpus| / (1 + df)).
  double idf(const TokenSeq& ngram) const;

 private:
  std::size_t n_docs_ = 0;
  std::map<TokenSeq, std::size_t> df_;
};

struct CiderScore {
  double score = 0.0;
  int levels = 0;                // n-gram orders that contributed
  bool empty_candidate = false;  // warning flag: score forced to 0
};

// Mean over n of the mean over references of the cosine between TF-IDF
// n-gram vectors. Orders for which the candidate has no n-grams are skipped;
// no length penalty is applied.
CiderScore cider(const TokenSeq& candidate, std::span<const TokenSeq> references, const CiderCorpus& corpus,
                 int max_n = 4);

// LCS-based F-measure with beta = 1.
double rouge_l(const TokenSeq& candidate, const TokenSeq& reference);

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool degenerate = false;  // a zero denominator forced some value to 0
};

// Binary labels; 1 is the positive class.
Prf1 prf1(std::span<const int> predictions, std::span<const int> labels);

struct MetricsReport {
  std::string model;    // e.g. "clean", "backdoor", "surgery_remove_k2"
  std::string dataset;  // e.g. "eval"
  std::string family;
  std::string match_rule;
  double asr = 0.0;
  double p_bkd = 0.0;          // on triggered inputs
  double p_bkd_clean = 0.0;    // backdoor target probability on clean inputs
  double p_clean = 0.0;        // clean target probability on clean inputs
  double exact_match = 0.0;    // clean inputs
  double vqa_accuracy = 0.0;   // clean inputs, single ground truth
  double cider = 0.0;          // clean inputs vs clean target
  double rouge_l = 0.0;        // clean inputs vs clean target
  std::size_t n_clean = 0;
  std::size_t n_triggered = 0;
};

nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

}  // namespace projlens::metrics
