#include "aman/lgn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "aman/io.hpp"

namespace aman {

namespace {
const char* const kReservedTokens[Vocab::kReserved] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
  for (const char* t : kReservedTokens) {
    ids_.emplace(t, tokens_.size());
    tokens_.emplace_back(t);
  }
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  Vocab v;
  for (const auto& w : words) {
    if (w.empty()) throw DataError("vocabulary entries must be non-empty");
    if (!v.ids_.emplace(w, v.tokens_.size()).second) throw DataError("duplicate vocabulary entry " + w);
    v.tokens_.push_back(w);
  }
  return v;
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& sentences, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : sentences)
    for (const auto& w : s) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, n] : counts) {
    if (n >= min_freq) kept.emplace_back(w, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, _] : kept) words.push_back(w);
  return from_words(words);
}

TokenId Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw ContractError("token id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

std::vector<TokenId> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<TokenId> ids{kBos};
  for (const auto& w : words) ids.push_back(id(w));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<TokenId>& ids) const {
  std::vector<std::string> words;
  for (auto i : ids) {
    if (i == kPad || i == kBos || i == kEos) continue;
    words.push_back(token(i));
  }
  return words;
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kReserved; i < tokens_.size(); ++i) out += tokens_[i] + "\n";
  return out;
}

Vocab Vocab::deserialize(const std::string& text) {
  std::vector<std::string> words;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    words.push_back(line);
  }
  return from_words(words);
}

void Vocab::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }
Vocab Vocab::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

DecoderWeights DecoderWeights::bind(Graph& g, const ModelParams& params, const std::string& prefix) {
  auto p = [&](const char* n) { return g.param(params, prefix + n); };
  return DecoderWeights{p("embed"),  p("lstm.wx"), p("lstm.wh"), p("lstm.b"),
                        p("out.w"), p("out.b"),   CsanWeights::bind(g, params, prefix + "csan.")};
}

std::string decoder_prefix(const ModelConfig& cfg, Attribute a) {
  return cfg.share_decoder ? std::string("lgn.shared.") : "lgn." + std::string(name(a)) + ".";
}

void init_lgn(ModelParams& params, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng) {
  const auto H = cfg.hidden, E = cfg.embedding, C = cfg.attr_channels;
  auto init_one = [&](const std::string& prefix) {
    params.add(prefix + "embed", uniform_init({vocab_size, E}, E, rng));
    // Channel weights sum to one, so the attended context is about 1/C the
    // size of the feature map. Its input columns start C times larger to put
    // it on the same footing as the embedding.
    Tensor wx = uniform_init({4 * H, E + C}, E + C, rng);
    for (std::size_t r = 0; r < 4 * H; ++r) {
      for (std::size_t c = E; c < E + C; ++c) wx.at(r, c) *= static_cast<Real>(C);
    }
    params.add(prefix + "lstm.wx", std::move(wx));
    params.add(prefix + "lstm.wh", uniform_init({4 * H, H}, H, rng));
    params.add(prefix + "lstm.b", uniform_init({4 * H}, H, rng));
    params.add(prefix + "out.w", uniform_init({vocab_size, H}, H, rng));
    params.add(prefix + "out.b", uniform_init({vocab_size}, H, rng));
    init_csan(params, prefix + "csan.", C, cfg.attention_dim, H, rng);
  };
  if (cfg.share_decoder) {
    init_one("lgn.shared.");
  } else {
    for (auto a : kAllAttributes) init_one(decoder_prefix(cfg, a));
  }
}

LstmState lstm_step(Var x, Var h_prev, Var c_prev, Var wx, Var wh, Var b) {
  const std::size_t H = h_prev.value().size();
  if (wx.value().rank() != 2 || wx.value().dim(0) != 4 * H || wh.value().dim(0) != 4 * H ||
      wh.value().dim(1) != H || c_prev.value().size() != H || b.value().size() != 4 * H) {
    throw ContractError("lstm_step: inconsistent shapes for hidden size " + std::to_string(H));
  }
  Var pre = add(add(matvec(wx, x), matvec(wh, h_prev)), b);
  Var i = sigmoid(slice(pre, 0, H));
  Var f = sigmoid(slice(pre, H, H));
  Var o = sigmoid(slice(pre, 2 * H, H));
  Var cand = tanh(slice(pre, 3 * H, H));
  Var c = add(mul(f, c_prev), mul(i, cand));
  Var h = mul(o, tanh(c));
  return {h, c};
}

StepOutput decode_step(const DecoderWeights& w, TokenId prev_token, const LstmState& state, Var attr_map,
                       AttentionOrder order, const DropoutSpec& dropout) {
  if (prev_token >= w.embed.value().dim(0)) {
    throw ContractError("decode_step: token id " + std::to_string(prev_token) + " outside vocabulary");
  }
  Var emb = row(w.embed, prev_token);
  CsanResult att = csan_forward(attr_map, state.h, w.csan, order);
  Var x = concat({emb, att.context});
  if (dropout.active()) x = aman::dropout(x, dropout.rate, *dropout.rng);
  LstmState next = lstm_step(x, state.h, state.c, w.wx, w.wh, w.b);
  Var logits = add(matvec(w.out_w, next.h), w.out_b);
  return {logits, next, att.feature};
}

LstmState initial_state(Graph& g, std::size_t hidden) {
  return {g.constant(Tensor({hidden})), g.constant(Tensor({hidden}))};
}

Var sequence_nll(Graph& g, const DecoderWeights& w, Var attr_map, const std::vector<TokenId>& tokens,
                 std::size_t hidden, AttentionOrder order, const DropoutSpec& dropout) {
  if (tokens.size() < 2 || tokens.front() != Vocab::kBos) {
    throw ContractError("sequence_nll: token list must start with BOS and hold at least one target");
  }
  LstmState state = initial_state(g, hidden);
  Var nll;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    StepOutput out = decode_step(w, tokens[t - 1], state, attr_map, order, dropout);
    state = out.state;
    if (tokens[t] == Vocab::kPad) continue;
    Var lp = pick(log_softmax(out.logits, 0), tokens[t]);
    nll = nll.valid() ? sub(nll, lp) : neg(lp);
  }
  if (!nll.valid()) throw ContractError("sequence_nll: sequence has no non-PAD targets");
  return nll;
}

namespace {

bool emittable(TokenId id) { return id != Vocab::kPad && id != Vocab::kBos; }

}  // namespace

CaptionSequence greedy_decode(const StepFunction& step, const DecoderValueState& init, std::size_t vocab_size,
                              std::size_t max_len) {
  CaptionSequence seq;
  seq.tokens.push_back(Vocab::kBos);
  DecoderValueState state = init;
  for (std::size_t t = 0;; ++t) {
    auto [logp, next] = step(seq.tokens.back(), state);
    if (logp.size() != vocab_size) throw ContractError("greedy_decode: step returned wrong vocabulary size");
    TokenId best = Vocab::kEos;
    if (t < max_len) {
      double best_lp = -std::numeric_limits<double>::infinity();
      for (TokenId v = 0; v < vocab_size; ++v) {
        if (emittable(v) && logp[v] > best_lp) {
          best_lp = logp[v];
          best = v;
        }
      }
    }
    seq.tokens.push_back(best);
    seq.step_probs.push_back(std::exp(logp[best]));
    seq.log_prob += logp[best];
    state = std::move(next);
    if (best == Vocab::kEos) break;
  }
  return seq;
}

CaptionSequence beam_decode(const StepFunction& step, const DecoderValueState& init, std::size_t vocab_size,
                            std::size_t width, std::size_t max_len) {
  if (width == 0) throw ContractError("beam_decode: width must be at least 1");
  struct Hyp {
    std::vector<TokenId> tokens;
    std::vector<double> probs;
    double log_prob = 0.0;
    DecoderValueState state;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.tokens < b.tokens;
  };

  std::vector<Hyp> beam{Hyp{{Vocab::kBos}, {}, 0.0, init}};
  std::vector<Hyp> finished;
  for (std::size_t depth = 0; !beam.empty(); ++depth) {
    std::vector<Hyp> candidates;
    for (const auto& h : beam) {
      auto [logp, next] = step(h.tokens.back(), h.state);
      if (logp.size() != vocab_size) throw ContractError("beam_decode: step returned wrong vocabulary size");
      for (TokenId v = 0; v < vocab_size; ++v) {
        if (!emittable(v) || (depth >= max_len && v != Vocab::kEos)) continue;
        Hyp c;
        c.tokens = h.tokens;
        c.tokens.push_back(v);
        c.probs = h.probs;
        c.probs.push_back(std::exp(logp[v]));
        c.log_prob = h.log_prob + logp[v];
        c.state = next;
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), better);
    candidates.resize(keep);
    beam.clear();
    for (auto& c : candidates) {
      if (c.tokens.back() == Vocab::kEos) finished.push_back(std::move(c));
      else beam.push_back(std::move(c));
    }
  }

  const Hyp* best = nullptr;
  for (const auto& h : finished) {
    const double score = h.log_prob / static_cast<double>(h.probs.size());
    if (!best) {
      best = &h;
      continue;
    }
    const double best_score = best->log_prob / static_cast<double>(best->probs.size());
    if (score > best_score || (score == best_score && h.tokens < best->tokens)) best = &h;
  }
  CaptionSequence seq;
  seq.tokens = best->tokens;
  seq.step_probs = best->probs;
  seq.log_prob = best->log_prob;
  return seq;
}

}  // namespace aman
