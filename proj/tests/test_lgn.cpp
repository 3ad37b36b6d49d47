#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "aman/gradcheck.hpp"
#include "aman/lgn.hpp"
#include "aman/model.hpp"
#include "support.hpp"

namespace aman {
namespace {

using testing::random_tensor;
using testing::tiny_config;
using Strings = std::vector<std::string>;
using Ids = std::vector<TokenId>;

Vocab small_vocab(std::size_t words) {
  Strings w;
  for (std::size_t i = 0; i < words; ++i) w.push_back("w" + std::to_string(i));
  return Vocab::from_words(w);
}

// A decoder whose log-probabilities are a fixed pseudo-random function of the
// whole prefix, carried as a hash in the state.
StepFunction hashed_step(std::size_t vocab, std::uint64_t seed, Real spread = 3.0) {
  return [=](TokenId prev, const DecoderValueState& s) {
    const auto h = static_cast<std::uint64_t>(s.h[0]);
    const std::uint64_t next = mix_seed(h, prev) & ((std::uint64_t{1} << 52) - 1);
    Rng rng(mix_seed(seed, next));
    Tensor logits({vocab});
    for (auto& v : logits.data()) v = rng.uniform(-spread, spread);
    Graph g(true);
    Tensor logp = log_softmax(g.constant(logits), 0).value();
    return std::make_pair(logp, DecoderValueState{Tensor({1}, static_cast<Real>(next)), Tensor({1})});
  };
}

DecoderValueState hash_init() { return {Tensor({1}), Tensor({1})}; }

TEST(Vocab, ReservedIdsAndRoundTrip) {
  const Vocab v = Vocab::from_words({"light", "sky"});
  EXPECT_EQ(v.size(), 6u);
  EXPECT_EQ(v.token(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocab::kBos), "<bos>");
  EXPECT_EQ(v.token(Vocab::kEos), "<eos>");
  EXPECT_EQ(v.token(Vocab::kUnk), "<unk>");
  EXPECT_EQ(v.id("light"), 4u);
  EXPECT_EQ(v.id("missing"), Vocab::kUnk);
  EXPECT_EQ(v.encode({"sky", "nope"}), (Ids{Vocab::kBos, 5, Vocab::kUnk, Vocab::kEos}));
  EXPECT_EQ(v.decode({Vocab::kBos, 5, 4, Vocab::kEos, Vocab::kPad}), (Strings{"sky", "light"}));
  EXPECT_EQ(v.serialize(), "light\nsky\n");
  EXPECT_EQ(Vocab::deserialize(v.serialize()), v);
  for (TokenId i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(i)), i);
  EXPECT_THROW(v.token(6), ContractError);
  EXPECT_THROW(Vocab::from_words({"a", "a"}), DataError);
}

TEST(Vocab, BuildOrdersByFrequencyAndCutsRareWords) {
  const Vocab v = Vocab::build({{"b", "a", "c"}, {"b", "a"}, {"b", "d", "d"}}, 2);
  EXPECT_EQ(v.serialize(), "b\na\nd\n");
  EXPECT_EQ(v.id("c"), Vocab::kUnk);
}

TEST(Vocab, SaveAndLoad) {
  const auto dir = testing::scratch_dir("vocab");
  const Vocab v = small_vocab(7);
  v.save(dir / "vocab.txt");
  EXPECT_EQ(Vocab::load(dir / "vocab.txt"), v);
}

TEST(Lstm, ZeroWeightsGiveZeroHidden) {
  Graph g;
  const std::size_t H = 3, I = 4;
  Rng rng(1);
  const auto s = lstm_step(g.constant(random_tensor({I}, rng)), g.constant(random_tensor({H}, rng)),
                           g.constant(Tensor({H})), g.constant(Tensor({4 * H, I})), g.constant(Tensor({4 * H, H})),
                           g.constant(Tensor({4 * H})));
  EXPECT_EQ(s.h.value(), Tensor({H}));
  EXPECT_EQ(s.c.value(), Tensor({H}));
}

TEST(Lstm, GateOrderInputForgetOutputCandidate) {
  // Bias-only cell: i = sigmoid(b0), f = sigmoid(b1), o = sigmoid(b2), g = tanh(b3).
  Graph g;
  const Tensor b = Tensor::vector({0.3, -0.4, 1.1, 0.7});
  const auto s = lstm_step(g.constant(Tensor({1})), g.constant(Tensor({1})), g.constant(Tensor::vector({2.0})),
                           g.constant(Tensor({4, 1})), g.constant(Tensor({4, 1})), g.constant(b));
  auto sig = [](Real x) { return 1.0 / (1.0 + std::exp(-x)); };
  const Real c = sig(-0.4) * 2.0 + sig(0.3) * std::tanh(0.7);
  EXPECT_NEAR(s.c.value()[0], c, 1e-15);
  EXPECT_NEAR(s.h.value()[0], sig(1.1) * std::tanh(c), 1e-15);
}

TEST(Lstm, ShapesAndGradient) {
  Rng rng(2);
  ModelParams p;
  p.add("x", random_tensor({3}, rng));
  p.add("h", random_tensor({2}, rng));
  p.add("c", random_tensor({2}, rng));
  p.add("wx", random_tensor({8, 3}, rng));
  p.add("wh", random_tensor({8, 2}, rng));
  p.add("b", random_tensor({8}, rng));
  LossFn f = [](Graph& g, const ModelParams& q) {
    const auto s = lstm_step(g.param(q, "x"), g.param(q, "h"), g.param(q, "c"), g.param(q, "wx"), g.param(q, "wh"),
                             g.param(q, "b"));
    EXPECT_EQ(s.h.value().shape(), Shape{2});
    return add(sum(mul(s.h, s.h)), sum(s.c));
  };
  EXPECT_LT(finite_diff_check(f, p).max_rel_error, 1e-4);
  Graph g;
  EXPECT_THROW(lstm_step(g.constant(Tensor({3})), g.constant(Tensor({2})), g.constant(Tensor({2})),
                         g.constant(Tensor({6, 3})), g.constant(Tensor({8, 2})), g.constant(Tensor({8}))),
               ContractError);
}

TEST(DecoderParams, OneSetPerAttributeUnlessShared) {
  auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(3));
  for (auto a : kAllAttributes) {
    const auto prefix = decoder_prefix(cfg, a);
    EXPECT_EQ(m.params().at(prefix + "embed").shape(), (Shape{7, cfg.embedding}));
    EXPECT_EQ(m.params().at(prefix + "lstm.wx").shape(), (Shape{4 * cfg.hidden, cfg.embedding + cfg.attr_channels}));
    EXPECT_TRUE(m.params().contains(prefix + "csan.w_s"));
  }
  cfg.share_decoder = true;
  AmanModel shared(cfg, small_vocab(3));
  EXPECT_TRUE(shared.params().contains("lgn.shared.embed"));
  EXPECT_FALSE(shared.params().contains("lgn.Composition.embed"));
}

TEST(DecodeStep, LogitsAreDeterministicAndNormalize) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(5));
  Rng rng(3);
  const auto enc = m.encode_values(random_tensor({3, 16, 16}, rng, 0, 1));
  const auto& map = enc.attribute_maps[index(Attribute::kComposition)];
  const auto step = m.step_function(Attribute::kComposition, map);
  const auto [a, sa] = step(Vocab::kBos, m.initial_value_state());
  const auto [b, sb] = step(Vocab::kBos, m.initial_value_state());
  EXPECT_EQ(a, b);
  EXPECT_EQ(sa.h, sb.h);
  ASSERT_EQ(a.size(), m.vocab().size());
  Real total = 0;
  for (auto v : a.data()) total += std::exp(v);
  EXPECT_NEAR(total, 1.0, 1e-12);

  Graph g(true);
  const auto w = DecoderWeights::bind(g, m.params(), decoder_prefix(cfg, Attribute::kComposition));
  EXPECT_THROW(decode_step(w, 99, initial_state(g, cfg.hidden), g.constant(map), cfg.order), ContractError);
}

TEST(SequenceProb, IdentitiesWithNll) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(4));
  Rng rng(4);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  for (int rep = 0; rep < 20; ++rep) {
    Ids tokens{Vocab::kBos};
    const auto n = rng.below(5);
    for (std::size_t i = 0; i < n; ++i) tokens.push_back(3 + rng.below(5));
    tokens.push_back(Vocab::kEos);
    for (auto a : kAllAttributes) {
      const Real p = m.sequence_prob(a, img, tokens);
      const Real nll = m.sequence_nll(a, img, tokens);
      EXPECT_GT(p, 0.0);
      EXPECT_LE(p, 1.0);
      EXPECT_GE(nll, 0.0);
      EXPECT_NEAR(std::exp(-nll), p, 1e-9);
      EXPECT_NEAR(std::log(p), -nll, 1e-9);
    }
  }
}

TEST(SequenceProb, SingleStepAndThreeTokenProducts) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(4));
  Rng rng(5);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  const auto a = Attribute::kDepthAndFocus;
  const auto enc = m.encode_values(img);
  const auto step = m.step_function(a, enc.attribute_maps[index(a)]);

  const auto [lp0, s1] = step(Vocab::kBos, m.initial_value_state());
  EXPECT_NEAR(m.sequence_prob(a, img, {Vocab::kBos, Vocab::kEos}), std::exp(lp0[Vocab::kEos]), 1e-15);

  const Ids tokens = {Vocab::kBos, 5, 4, Vocab::kEos};
  const auto [lp1, s2] = step(5, s1);
  const auto [lp2, s3] = step(4, s2);
  const Real hand = std::exp(lp0[5]) * std::exp(lp1[4]) * std::exp(lp2[Vocab::kEos]);
  EXPECT_NEAR(m.sequence_prob(a, img, tokens), hand, 1e-15);
  EXPECT_THROW(m.sequence_prob(a, img, {}), ContractError);
  EXPECT_THROW(m.sequence_nll(a, img, {Vocab::kBos}), ContractError);
}

TEST(SequenceProb, PadTargetsAreSkipped) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(4));
  Rng rng(6);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  const auto a = Attribute::kUseOfCamera;
  const auto dists = m.step_distributions(a, img, {Vocab::kBos, 4, Vocab::kPad, Vocab::kEos});
  const Real expected = -std::log(dists[0][4]) - std::log(dists[2][Vocab::kEos]);
  EXPECT_NEAR(m.sequence_nll(a, img, {Vocab::kBos, 4, Vocab::kPad, Vocab::kEos}), expected, 1e-12);
}

TEST(SequenceNll, UniformAndCertainModels) {
  auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(6));
  Rng rng(7);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  const auto a = Attribute::kColorAndLighting;
  const auto prefix = decoder_prefix(cfg, a);
  m.params().at(prefix + "out.w") = Tensor(m.params().at(prefix + "out.w").shape());
  m.params().at(prefix + "out.b") = Tensor(m.params().at(prefix + "out.b").shape());
  const Ids tokens = {Vocab::kBos, 4, 7, 5, Vocab::kEos};
  EXPECT_NEAR(m.sequence_nll(a, img, tokens), 4 * std::log(10.0), 1e-12);

  m.params().at(prefix + "out.b")[Vocab::kEos] = 1000.0;
  EXPECT_EQ(m.sequence_nll(a, img, {Vocab::kBos, Vocab::kEos}), 0.0);
  EXPECT_EQ(m.sequence_prob(a, img, {Vocab::kBos, Vocab::kEos}), 1.0);
}

TEST(SequenceNll, GradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  cfg.share_decoder = true;
  const Vocab vocab = small_vocab(4);
  AmanModel m(cfg, vocab);
  ModelParams p;
  for (const auto& [name, t] : m.params()) {
    if (name.rfind("lgn.", 0) == 0) p.add(name, t);
  }
  Rng rng(8);
  p.add("map", random_tensor({cfg.attr_channels, 16}, rng));
  for (auto order : {AttentionOrder::kChannelFirst, AttentionOrder::kSpatialFirst}) {
    LossFn f = [&](Graph& g, const ModelParams& q) {
      const auto w = DecoderWeights::bind(g, q, "lgn.shared.");
      return sequence_nll(g, w, g.param(q, "map"), {Vocab::kBos, 4, 6, Vocab::kEos}, cfg.hidden, order);
    };
    GradCheckOptions opts;
    opts.max_coords_per_param = 6;
    EXPECT_LT(finite_diff_check(f, p, opts).max_rel_error, 1e-4);
  }
}

TEST(SequenceNll, DecreasesUnderSgdOnOneExample) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(4));
  Rng rng(9);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  const auto a = Attribute::kImpressionAndSubject;
  const Ids tokens = {Vocab::kBos, 6, 4, 7, Vocab::kEos};
  const Real before = m.sequence_nll(a, img, tokens);
  Real prev = before;
  for (int step = 0; step < 60; ++step) {
    Graph g;
    const auto out = encode(g, m.params(), cfg, img);
    Var map = reshape(out.attribute_maps[index(a)], {cfg.attr_channels, cfg.map_height() * cfg.map_width()});
    Var nll = sequence_nll(g, DecoderWeights::bind(g, m.params(), decoder_prefix(cfg, a)), map, tokens, cfg.hidden,
                           cfg.order);
    EXPECT_LE(nll.value()[0], prev + 1e-9) << "step " << step;
    prev = nll.value()[0];
    g.backward(nll);
    sgd_step(m.params(), g.param_grads(), 0.3);
  }
  EXPECT_LT(m.sequence_nll(a, img, tokens), 0.5 * before);
}

TEST(GreedyDecode, ImmediateEosAndLengthBound) {
  const std::size_t V = 6;
  StepFunction eos_first = [&](TokenId, const DecoderValueState& s) {
    Tensor lp({V}, std::log(0.1));
    lp[Vocab::kEos] = std::log(0.5);
    return std::make_pair(lp, s);
  };
  const auto seq = greedy_decode(eos_first, hash_init(), V, 5);
  EXPECT_EQ(seq.tokens, (Ids{Vocab::kBos, Vocab::kEos}));
  EXPECT_NEAR(seq.step_probs[0], 0.5, 1e-15);

  StepFunction never_eos = [&](TokenId, const DecoderValueState& s) {
    Tensor lp({V}, std::log(0.01));
    lp[Vocab::kPad] = lp[Vocab::kBos] = std::log(0.45);
    lp[5] = std::log(0.06);
    return std::make_pair(lp, s);
  };
  for (std::size_t max_len : {0u, 1u, 4u, 9u}) {
    const auto s = greedy_decode(never_eos, hash_init(), V, max_len);
    EXPECT_EQ(s.tokens.size(), max_len + 2);
    EXPECT_EQ(s.tokens.back(), Vocab::kEos);
    for (std::size_t i = 1; i + 1 < s.tokens.size(); ++i) EXPECT_EQ(s.tokens[i], 5u);
  }
}

TEST(GreedyDecode, TiesGoToLowestId) {
  const std::size_t V = 6;
  StepFunction flat = [&](TokenId prev, const DecoderValueState& s) {
    Tensor lp({V}, std::log(1.0 / V));
    if (prev != Vocab::kBos) lp[Vocab::kEos] = 0.0;
    return std::make_pair(lp, s);
  };
  EXPECT_EQ(greedy_decode(flat, hash_init(), V, 5).tokens, (Ids{Vocab::kBos, Vocab::kEos}));
  EXPECT_EQ(beam_decode(flat, hash_init(), V, 1, 5).tokens, (Ids{Vocab::kBos, Vocab::kEos}));
}

TEST(BeamDecode, WidthOneEqualsGreedyOnRandomDecoders) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto step = hashed_step(7, seed);
    const auto g = greedy_decode(step, hash_init(), 7, 6);
    const auto b = beam_decode(step, hash_init(), 7, 1, 6);
    EXPECT_EQ(g.tokens, b.tokens) << seed;
    EXPECT_EQ(g.log_prob, b.log_prob);
  }
}

// Every BOS ... EOS sequence with at most max_len words, scored by the same rule.
CaptionSequence exhaustive_best(const StepFunction& step, std::size_t V, std::size_t max_len) {
  CaptionSequence best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::function<void(Ids, double, DecoderValueState, std::size_t)> walk = [&](Ids prefix, double lp,
                                                                               DecoderValueState s, std::size_t words) {
    const auto [logp, next] = step(prefix.back(), s);
    for (TokenId v = Vocab::kEos; v < V; ++v) {
      if (words == max_len && v != Vocab::kEos) continue;
      Ids t = prefix;
      t.push_back(v);
      const double total = lp + logp[v];
      if (v == Vocab::kEos) {
        const double score = total / static_cast<double>(words + 1);
        if (score > best_score || (score == best_score && t < best.tokens)) {
          best_score = score;
          best.tokens = t;
          best.log_prob = total;
        }
      } else {
        walk(t, total, next, words + 1);
      }
    }
  };
  walk({Vocab::kBos}, 0.0, hash_init(), 0);
  return best;
}

TEST(BeamDecode, WideBeamFindsExhaustiveOptimum) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::size_t V = 5, max_len = 4;
    const auto step = hashed_step(V, seed);
    const auto truth = exhaustive_best(step, V, max_len);
    const auto beam = beam_decode(step, hash_init(), V, 625, max_len);
    EXPECT_EQ(beam.tokens, truth.tokens) << seed;
    EXPECT_NEAR(beam.log_prob, truth.log_prob, 1e-12);
    for (std::size_t w = 1; w <= 8; ++w) {
      const auto narrow = beam_decode(step, hash_init(), V, w, max_len);
      EXPECT_LE(narrow.normalized_log_prob(), beam.normalized_log_prob() + 1e-12);
    }
  }
}

TEST(BeamDecode, NeverEmitsPadOrBosAndRespectsMaxLen) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto step = hashed_step(8, seed, 6.0);
    for (std::size_t w : {1u, 2u, 5u}) {
      const auto s = beam_decode(step, hash_init(), 8, w, 5);
      EXPECT_LE(s.tokens.size(), 7u);
      EXPECT_EQ(s.tokens.front(), Vocab::kBos);
      EXPECT_EQ(s.tokens.back(), Vocab::kEos);
      for (std::size_t i = 1; i < s.tokens.size(); ++i) {
        EXPECT_NE(s.tokens[i], Vocab::kPad);
        EXPECT_NE(s.tokens[i], Vocab::kBos);
      }
      for (auto p : s.step_probs) {
        EXPECT_GT(p, 0.0);
        EXPECT_LE(p, 1.0);
      }
    }
  }
  EXPECT_THROW(beam_decode(hashed_step(8, 0), hash_init(), 8, 0, 5), ContractError);
}

TEST(Predict, FiveCaptionsAndClampedScores) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(5));
  Rng rng(10);
  const auto pred = m.predict(random_tensor({3, 16, 16}, rng, 0, 1), 3);
  Real total = 0;
  for (const auto& c : pred.attributes) {
    EXPECT_GE(c.score, 0.0);
    EXPECT_LE(c.score, 10.0);
    EXPECT_EQ(c.sequence.tokens.front(), Vocab::kBos);
    EXPECT_EQ(c.words, m.vocab().decode(c.sequence.tokens));
    total += c.score;
  }
  EXPECT_NEAR(pred.average_score, total / 5, 1e-12);
}

TEST(Checkpoint, ModelRoundTripAndLayoutCheck) {
  const auto cfg = tiny_config();
  AmanModel m(cfg, small_vocab(5));
  const auto dir = testing::scratch_dir("model_ckpt");
  m.save(dir / "m.ckpt", {{"train.step", "12"}});
  const AmanModel back = AmanModel::load(dir / "m.ckpt");
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.vocab(), m.vocab());
  EXPECT_EQ(back.config().to_kv(), m.config().to_kv());

  auto ckpt = load_checkpoint(dir / "m.ckpt");
  ckpt.params.erase("lgn.Composition.out.b");
  EXPECT_THROW(AmanModel::from_checkpoint(ckpt), IntegrityError);
}

}  // namespace
}  // namespace aman
