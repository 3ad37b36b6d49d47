#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "aman/attributes.hpp"
#include "aman/csan.hpp"
#include "aman/mafn.hpp"
#include "aman/model_config.hpp"

namespace aman {

using TokenId = std::size_t;

/// Token <-> id bijection with PAD/BOS/EOS/UNK fixed at ids 0..3.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();
  // Words are ordered by descending frequency, ties lexicographic.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences, std::size_t min_freq = 2);
  static Vocab from_words(const std::vector<std::string>& words);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(const std::string& token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;

  // BOS + ids + EOS
  std::vector<TokenId> encode(const std::vector<std::string>& words) const;
  // Drops reserved ids.
  std::vector<std::string> decode(const std::vector<TokenId>& ids) const;

  // Non-reserved words, one per line; line n holds id n + kReserved.
  std::string serialize() const;
  static Vocab deserialize(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

/// Per-attribute decoder weights bound into a graph. Parameter names under
/// the attribute prefix: embed [V x E], lstm.wx [4H x (E + C_a)],
/// lstm.wh [4H x H], lstm.b [4H], out.w [V x H], out.b [V], csan.*.
struct DecoderWeights {
  Var embed, wx, wh, b, out_w, out_b;
  CsanWeights csan;

  static DecoderWeights bind(Graph& g, const ModelParams& params, const std::string& prefix);
};

std::string decoder_prefix(const ModelConfig& cfg, Attribute a);
void init_lgn(ModelParams& params, const ModelConfig& cfg, std::size_t vocab_size, Rng& rng);

struct LstmState {
  Var h;
  Var c;
};

// Gate order in the stacked pre-activation: input, forget, output, candidate.
LstmState lstm_step(Var x, Var h_prev, Var c_prev, Var wx, Var wh, Var b);

struct StepOutput {
  Var logits;  // [V]
  LstmState state;
  AttendedFeature attention;
};

// attr_map is the attribute feature map flattened to [C_a x L].
StepOutput decode_step(const DecoderWeights& w, TokenId prev_token, const LstmState& state,
                       Var attr_map, AttentionOrder order, const DropoutSpec& dropout = {});

LstmState initial_state(Graph& g, std::size_t hidden);

// Teacher-forced -sum_t log P(S_t | S_<t); PAD targets are skipped.
Var sequence_nll(Graph& g, const DecoderWeights& w, Var attr_map, const std::vector<TokenId>& tokens,
                 std::size_t hidden, AttentionOrder order, const DropoutSpec& dropout = {});

struct CaptionSequence {
  Attribute attribute = Attribute::kColorAndLighting;
  std::vector<TokenId> tokens;     // BOS ... EOS
  std::vector<double> step_probs;  // probability of each emitted token
  double log_prob = 0.0;

  std::size_t predicted() const { return step_probs.size(); }
  double normalized_log_prob() const { return predicted() ? log_prob / static_cast<double>(predicted()) : 0.0; }
};

/// One decoder step on concrete values: previous token and state in,
/// log-probabilities over the vocabulary and next state out.
struct DecoderValueState {
  Tensor h;
  Tensor c;
};
using StepFunction =
    std::function<std::pair<Tensor, DecoderValueState>(TokenId prev, const DecoderValueState& state)>;

// PAD and BOS are never emitted. At most max_len words are generated; EOS is
// then forced. Ties go to the lowest id.
CaptionSequence greedy_decode(const StepFunction& step, const DecoderValueState& init,
                              std::size_t vocab_size, std::size_t max_len);

// Length-normalized beam search. Candidates are ranked by cumulative
// log-probability, ties by token ids lexicographically; the returned
// hypothesis maximizes log_prob / emitted tokens among finished ones.
CaptionSequence beam_decode(const StepFunction& step, const DecoderValueState& init,
                            std::size_t vocab_size, std::size_t width, std::size_t max_len);

}  // namespace aman
