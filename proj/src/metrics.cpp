#include "aman/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "aman/tensor.hpp"

namespace aman {

namespace {

constexpr std::string_view kLexiconData =
#include "aman/spice_lexicon.inc"
    ;

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + n)];
  return out;
}

void check_pairs(const std::vector<EvalPair>& pairs, const char* op) {
  for (const auto& p : pairs) {
    if (p.references.empty()) throw ContractError(std::string(op) + ": every pair needs at least one reference");
  }
}

}  // namespace

double bleu_n(const std::vector<EvalPair>& pairs, int n) {
  if (n < 1 || n > 4) throw ContractError("bleu_n: order must be in 1..4, got " + std::to_string(n));
  check_pairs(pairs, "bleu_n");
  std::vector<double> matched(n, 0.0), total(n, 0.0);
  double cand_len = 0.0, ref_len = 0.0;
  for (const auto& p : pairs) {
    const double c = static_cast<double>(p.candidate.size());
    cand_len += c;
    double best = static_cast<double>(p.references.front().size());
    for (const auto& r : p.references) {
      const double len = static_cast<double>(r.size());
      if (std::abs(len - c) < std::abs(best - c) || (std::abs(len - c) == std::abs(best - c) && len < best)) best = len;
    }
    ref_len += best;
    for (int k = 1; k <= n; ++k) {
      const NgramCounts cand = ngrams(p.candidate, k);
      NgramCounts max_ref;
      for (const auto& r : p.references) {
        for (const auto& [g, cnt] : ngrams(r, k)) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : cand) {
        auto it = max_ref.find(g);
        matched[k - 1] += static_cast<double>(std::min(cnt, it == max_ref.end() ? 0 : it->second));
        total[k - 1] += static_cast<double>(cnt);
      }
    }
  }
  if (cand_len == 0.0 || matched[0] == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    double m = matched[k], t = total[k];
    if (k > 0 && m == 0.0) {
      m += 1.0;
      t += 1.0;
    }
    log_sum += std::log(m / t);
  }
  const double bp = cand_len < ref_len ? std::exp(1.0 - ref_len / cand_len) : 1.0;
  return bp * std::exp(log_sum / n);
}

namespace {

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs, "rouge_l");
  if (pairs.empty()) return 0.0;
  constexpr double beta2 = 1.2 * 1.2;
  double sum = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) {
      const double lcs = static_cast<double>(lcs_length(p.candidate, r));
      if (lcs == 0.0) continue;
      const double prec = lcs / static_cast<double>(p.candidate.size());
      const double rec = lcs / static_cast<double>(r.size());
      best = std::max(best, (1.0 + beta2) * prec * rec / (rec + beta2 * prec));
    }
    sum += best;
  }
  return sum / static_cast<double>(pairs.size());
}

CiderStats::CiderStats(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs, "cider");
  for (const auto& p : pairs) {
    std::set<Tokens> seen;
    for (const auto& r : p.references) {
      for (std::size_t n = 1; n <= 4; ++n) {
        for (const auto& [g, _] : ngrams(r, n)) seen.insert(g);
      }
    }
    for (const auto& g : seen) ++df_[g];
  }
  documents_ = pairs.size();
}

double CiderStats::idf(const Tokens& ngram) const {
  auto it = df_.find(ngram);
  const double df = it == df_.end() ? 1.0 : static_cast<double>(std::max<std::size_t>(1, it->second));
  return std::log(static_cast<double>(documents_) / df);
}

namespace {

using TfIdf = std::map<Tokens, double>;

TfIdf tfidf(const Tokens& t, std::size_t n, const CiderStats& stats) {
  TfIdf v;
  for (const auto& [g, cnt] : ngrams(t, n)) v[g] = static_cast<double>(cnt) * stats.idf(g);
  return v;
}

double cosine(const TfIdf& a, const TfIdf& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, x] : a) {
    na += x * x;
    auto it = b.find(g);
    if (it != b.end()) dot += x * it->second;
  }
  for (const auto& [_, y] : b) nb += y * y;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

double cider(const std::vector<EvalPair>& pairs, const CiderStats& stats) {
  check_pairs(pairs, "cider");
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    double pair_score = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const TfIdf c = tfidf(p.candidate, n, stats);
      double s = 0.0;
      for (const auto& r : p.references) s += cosine(c, tfidf(r, n, stats));
      pair_score += s / static_cast<double>(p.references.size());
    }
    sum += 10.0 * pair_score / 4.0;
  }
  return sum / static_cast<double>(pairs.size());
}

double cider(const std::vector<EvalPair>& pairs) { return cider(pairs, CiderStats(pairs)); }

std::string stem(std::string_view word) {
  static const char* const kSuffixes[] = {"ing", "ed", "es", "ly", "s"};
  for (const char* suf : kSuffixes) {
    const std::string_view s(suf);
    if (word.size() >= s.size() + 3 && word.substr(word.size() - s.size()) == s) {
      return std::string(word.substr(0, word.size() - s.size()));
    }
  }
  return std::string(word);
}

double meteor_sentence(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> align(candidate.size(), kNone);
  std::vector<bool> used(reference.size(), false);
  auto run_stage = [&](auto&& same) {
    for (std::size_t i = 0; i < candidate.size(); ++i) {
      if (align[i] != kNone) continue;
      std::size_t pick = kNone;
      // Prefer the slot that continues the previous word's chunk.
      if (i > 0 && align[i - 1] != kNone && align[i - 1] + 1 < reference.size()) {
        const std::size_t j = align[i - 1] + 1;
        if (!used[j] && same(candidate[i], reference[j])) pick = j;
      }
      for (std::size_t j = 0; pick == kNone && j < reference.size(); ++j) {
        if (!used[j] && same(candidate[i], reference[j])) pick = j;
      }
      if (pick != kNone) {
        align[i] = pick;
        used[pick] = true;
      }
    }
  };
  run_stage([](const std::string& a, const std::string& b) { return a == b; });
  run_stage([](const std::string& a, const std::string& b) { return stem(a) == stem(b); });

  std::size_t matches = 0, chunks = 0;
  std::size_t prev = kNone;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (align[i] == kNone) {
      prev = kNone;
      continue;
    }
    ++matches;
    if (prev == kNone || align[i] != prev + 1) ++chunks;
    prev = align[i];
  }
  if (matches == 0) return 0.0;
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double fmean = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  return fmean * (1.0 - 0.5 * frag * frag * frag);
}

double meteor_lite(const std::vector<EvalPair>& pairs) {
  check_pairs(pairs, "meteor_lite");
  if (pairs.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) best = std::max(best, meteor_sentence(p.candidate, r));
    sum += best;
  }
  return sum / static_cast<double>(pairs.size());
}

SpiceLexicon SpiceLexicon::parse(std::string_view text) {
  SpiceLexicon lex;
  std::set<std::string>* section = nullptr;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line.erase(0, line.find_first_not_of(" \t\r"));
    line.erase(line.find_last_not_of(" \t\r") + 1);
    if (line.empty()) continue;
    if (line == "[nouns]") section = &lex.nouns;
    else if (line == "[adjectives]") section = &lex.adjectives;
    else if (line == "[relations]") section = &lex.relations;
    else if (!section) throw DataError("lexicon line " + std::to_string(line_no) + ": entry outside a section");
    else section->insert(line);
  }
  return lex;
}

const SpiceLexicon& SpiceLexicon::shipped() {
  static const SpiceLexicon lex = parse(kLexiconData);
  return lex;
}

std::multiset<Proposition> extract_propositions(const Tokens& tokens, const SpiceLexicon& lexicon) {
  std::multiset<Proposition> out;
  std::size_t last_noun = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (!lexicon.nouns.count(tokens[i])) continue;
    out.insert({tokens[i]});
    if (i > 0 && lexicon.adjectives.count(tokens[i - 1])) out.insert({tokens[i], tokens[i - 1]});
    if (last_noun != static_cast<std::size_t>(-1)) {
      for (std::size_t j = last_noun + 1; j < i; ++j) {
        if (lexicon.relations.count(tokens[j])) {
          out.insert({tokens[last_noun], tokens[j], tokens[i]});
          break;
        }
      }
    }
    last_noun = i;
  }
  return out;
}

SpiceScore spice_lite(const std::vector<EvalPair>& pairs, const SpiceLexicon& lexicon) {
  check_pairs(pairs, "spice_lite");
  SpiceScore s;
  if (pairs.empty()) return s;
  for (const auto& p : pairs) {
    const auto cand = extract_propositions(p.candidate, lexicon);
    std::map<Proposition, std::size_t> ref;
    for (const auto& r : p.references) {
      std::map<Proposition, std::size_t> counts;
      for (const auto& t : extract_propositions(r, lexicon)) ++counts[t];
      for (const auto& [t, c] : counts) ref[t] = std::max(ref[t], c);
    }
    std::size_t ref_total = 0;
    for (const auto& [_, c] : ref) ref_total += c;
    std::size_t matched = 0;
    for (auto it = cand.begin(); it != cand.end(); it = cand.upper_bound(*it)) {
      auto r = ref.find(*it);
      if (r != ref.end()) matched += std::min(cand.count(*it), r->second);
    }
    const double m = static_cast<double>(matched);
    if (!cand.empty()) s.precision += m / static_cast<double>(cand.size());
    if (ref_total > 0) s.recall += m / static_cast<double>(ref_total);
  }
  s.precision /= static_cast<double>(pairs.size());
  s.recall /= static_cast<double>(pairs.size());
  s.f1 = f1_combine(s.precision, s.recall);
  return s;
}

double f1_combine(double p, double r) {
  if (!(p >= 0.0 && p <= 1.0 && r >= 0.0 && r <= 1.0)) {
    throw DomainError("f1_combine: precision and recall must lie in [0, 1]");
  }
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

double score_mse(const std::vector<double>& preds, const std::vector<double>& targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ContractError("score_mse: need equal, non-zero lengths (got " + std::to_string(preds.size()) + " and " +
                        std::to_string(targets.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  return s / static_cast<double>(preds.size());
}

namespace {

AttributeMetrics caption_metrics(const std::vector<EvalPair>& pairs, const CiderStats& stats) {
  AttributeMetrics m;
  m.pairs = pairs.size();
  if (pairs.empty()) return m;
  for (int n = 1; n <= 4; ++n) m.bleu[n - 1] = bleu_n(pairs, n);
  m.meteor = meteor_lite(pairs);
  m.rouge_l = rouge_l(pairs);
  m.cider = cider(pairs, stats);
  m.spice = spice_lite(pairs);
  return m;
}

nlohmann::json metrics_json(const AttributeMetrics& m) {
  nlohmann::json j{{"pairs", m.pairs},           {"bleu1", m.bleu[0]},          {"bleu2", m.bleu[1]},
                   {"bleu3", m.bleu[2]},         {"bleu4", m.bleu[3]},          {"meteor", m.meteor},
                   {"rouge_l", m.rouge_l},       {"cider", m.cider},            {"spice_p", m.spice.precision},
                   {"spice_r", m.spice.recall},  {"spice_f1", m.spice.f1}};
  j["score_mse"] = m.score_mse ? nlohmann::json(*m.score_mse) : nlohmann::json(nullptr);
  j["scored"] = m.scored;
  return j;
}

}  // namespace

MetricReport compute_report(const std::vector<EvalPair>& pairs,
                            const std::map<Attribute, std::pair<std::vector<double>, std::vector<double>>>& scores) {
  if (pairs.empty() && scores.empty()) throw ContractError("compute_report: nothing to evaluate");
  const CiderStats stats(pairs);
  MetricReport report;
  std::map<Attribute, std::vector<EvalPair>> grouped;
  for (const auto& p : pairs) grouped[p.attribute].push_back(p);
  for (const auto& [a, group] : grouped) report.per_attribute[a] = caption_metrics(group, stats);
  report.overall = caption_metrics(pairs, stats);

  std::vector<double> all_preds, all_targets;
  for (const auto& [a, pt] : scores) {
    if (pt.first.empty()) continue;
    AttributeMetrics& m = report.per_attribute[a];
    m.score_mse = score_mse(pt.first, pt.second);
    m.scored = pt.first.size();
    all_preds.insert(all_preds.end(), pt.first.begin(), pt.first.end());
    all_targets.insert(all_targets.end(), pt.second.begin(), pt.second.end());
  }
  if (!all_preds.empty()) {
    report.overall.score_mse = score_mse(all_preds, all_targets);
    report.overall.scored = all_preds.size();
  }
  return report;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["attributes"] = nlohmann::json::object();
  for (const auto& [a, m] : per_attribute) j["attributes"][std::string(name(a))] = metrics_json(m);
  j["overall"] = metrics_json(overall);
  j["average_predicted_score"] =
      average_predicted_score ? nlohmann::json(*average_predicted_score) : nlohmann::json(nullptr);
  return j;
}

std::string MetricReport::render() const {
  std::ostringstream out;
  out << std::fixed;
  out << std::left << std::setw(22) << "Attribute" << std::right;
  for (const char* h : {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr", "SPICE", "P", "R",
                        "MSE"}) {
    out << std::setw(9) << h;
  }
  out << "\n";
  auto row = [&](const std::string& label_text, const AttributeMetrics& m) {
    out << std::left << std::setw(22) << label_text << std::right << std::setprecision(1);
    for (double b : m.bleu) out << std::setw(9) << 100.0 * b;
    out << std::setw(9) << 100.0 * m.meteor << std::setw(9) << 100.0 * m.rouge_l;
    out << std::setprecision(3) << std::setw(9) << m.cider;
    out << std::setw(9) << m.spice.f1 << std::setw(9) << m.spice.precision << std::setw(9) << m.spice.recall;
    if (m.score_mse) out << std::setw(9) << *m.score_mse;
    else out << std::setw(9) << "-";
    out << "\n";
  };
  for (const auto& [a, m] : per_attribute) row(std::string(label(a)), m);
  row("Overall", overall);
  if (average_predicted_score) {
    out << "Average predicted score: " << std::setprecision(3) << *average_predicted_score << "\n";
  }
  out << "BLEU, METEOR and ROUGE-L in percent; SPICE columns as fractions.\n";
  return out.str();
}

}  // namespace aman
