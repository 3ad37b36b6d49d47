#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "aman/attributes.hpp"
#include "json.hpp"

namespace aman {

using Tokens = std::vector<std::string>;

struct EvalPair {
  Tokens candidate;
  std::vector<Tokens> references;  // non-empty
  Attribute attribute = Attribute::kColorAndLighting;
};

// Corpus BLEU over orders 1..n with clipped counts. Orders above one whose
// clipped match count is zero get add-one smoothing on both numerator and
// denominator. The brevity penalty uses the reference length closest to
// each candidate (shorter on ties).
double bleu_n(const std::vector<EvalPair>& pairs, int n);

// LCS F-measure with beta = 1.2, best reference per pair, averaged over pairs.
double rouge_l(const std::vector<EvalPair>& pairs);

/// Document frequencies of 1..4-grams, one document per reference set.
class CiderStats {
 public:
  explicit CiderStats(const std::vector<EvalPair>& pairs);
  double idf(const Tokens& ngram) const;
  std::size_t documents() const { return documents_; }

 private:
  std::map<Tokens, std::size_t> df_;
  std::size_t documents_ = 0;
};

// Mean over pairs of 10 * average over n = 1..4 of the tf-idf cosine between
// the candidate and each reference (averaged over references).
double cider(const std::vector<EvalPair>& pairs, const CiderStats& stats);
double cider(const std::vector<EvalPair>& pairs);

// Unigram alignment (exact, then suffix-stemmed), F = 10PR / (R + 9P),
// penalty 0.5 * (chunks / matches)^3; best reference per pair, mean over pairs.
double meteor_lite(const std::vector<EvalPair>& pairs);
double meteor_sentence(const Tokens& candidate, const Tokens& reference);
std::string stem(std::string_view word);

/// Word classes for rule-based proposition extraction.
struct SpiceLexicon {
  std::set<std::string> nouns, adjectives, relations;
  static SpiceLexicon parse(std::string_view text);
  static const SpiceLexicon& shipped();
};

// Tuples: (noun), (noun, adjective) for an adjective directly before a noun,
// (noun, relation, noun) for a relation word between consecutive nouns.
using Proposition = std::vector<std::string>;
std::multiset<Proposition> extract_propositions(const Tokens& tokens, const SpiceLexicon& lexicon);

struct SpiceScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
SpiceScore spice_lite(const std::vector<EvalPair>& pairs, const SpiceLexicon& lexicon = SpiceLexicon::shipped());

// 2pr / (p + r), zero when p + r = 0.
double f1_combine(double p, double r);

// Mean squared error on aligned lists.
double score_mse(const std::vector<double>& preds, const std::vector<double>& targets);

struct AttributeMetrics {
  std::size_t pairs = 0;
  double bleu[4] = {0, 0, 0, 0};
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
  SpiceScore spice;
  std::optional<double> score_mse;
  std::size_t scored = 0;
};

struct MetricReport {
  std::map<Attribute, AttributeMetrics> per_attribute;
  AttributeMetrics overall;
  std::optional<double> average_predicted_score;  // 0..10 scale

  nlohmann::json to_json() const;
  // Caption metrics as percentages, CIDEr and MSE as raw values.
  std::string render() const;
};

// Caption metrics over the pairs, one group per attribute plus an overall row.
// CIDEr document frequencies come from all references in `pairs`.
MetricReport compute_report(const std::vector<EvalPair>& pairs,
                            const std::map<Attribute, std::pair<std::vector<double>, std::vector<double>>>& scores = {});

}  // namespace aman
