#include "aman/model.hpp"

#include <algorithm>
#include <cmath>

namespace aman {

Tensor flatten_map(const Tensor& map) {
  if (map.rank() != 3) throw ContractError("flatten_map: expected [C x h x w], got " + shape_str(map.shape()));
  return map.reshaped({map.dim(0), map.dim(1) * map.dim(2)});
}

AmanModel::AmanModel(ModelConfig config, Vocab vocab) : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  Rng rng(config_.seed);
  init_mafn(params_, config_, rng);
  init_lgn(params_, config_, vocab_.size(), rng);
}

AmanModel::AmanModel(ModelConfig config, Vocab vocab, ModelParams params)
    : config_(std::move(config)), vocab_(std::move(vocab)), params_(std::move(params)) {}

EncodedImage AmanModel::encode_values(const Tensor& image) const {
  Graph g(/*no_grad=*/true);
  EncoderOutput out = encode(g, params_, config_, image);
  EncodedImage enc;
  for (auto a : kAllAttributes) {
    enc.attribute_maps[index(a)] = flatten_map(out.attribute_maps[index(a)].value());
    enc.attribute_scores[index(a)] = out.attribute_scores[index(a)].value()[0];
  }
  enc.global_score = out.global_score.value()[0];
  return enc;
}

DecoderValueState AmanModel::initial_value_state() const {
  return {Tensor({config_.hidden}), Tensor({config_.hidden})};
}

StepFunction AmanModel::step_function(Attribute a, const Tensor& attr_map) const {
  const std::string prefix = decoder_prefix(config_, a);
  return [this, prefix, &attr_map](TokenId prev, const DecoderValueState& state) {
    Graph g(/*no_grad=*/true);
    DecoderWeights w = DecoderWeights::bind(g, params_, prefix);
    LstmState s{g.constant(state.h), g.constant(state.c)};
    StepOutput out = decode_step(w, prev, s, g.constant(attr_map), config_.order);
    Tensor logp = log_softmax(out.logits, 0).value();
    return std::make_pair(std::move(logp), DecoderValueState{out.state.h.value(), out.state.c.value()});
  };
}

std::vector<Tensor> AmanModel::step_distributions(Attribute a, const Tensor& image,
                                                  const std::vector<TokenId>& tokens) const {
  if (tokens.size() < 2 || tokens.front() != Vocab::kBos) {
    throw ContractError("sequence must start with BOS and contain at least one target");
  }
  const EncodedImage enc = encode_values(image);
  const StepFunction step = step_function(a, enc.attribute_maps[index(a)]);
  DecoderValueState state = initial_value_state();
  std::vector<Tensor> dists;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    auto [logp, next] = step(tokens[t - 1], state);
    Tensor p = logp;
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logp[i]);
    dists.push_back(std::move(p));
    state = std::move(next);
  }
  return dists;
}

Real AmanModel::sequence_prob(Attribute a, const Tensor& image, const std::vector<TokenId>& tokens) const {
  const auto dists = step_distributions(a, image, tokens);
  Real prob = 1.0;
  for (std::size_t t = 1; t < tokens.size(); ++t) {
    if (tokens[t] == Vocab::kPad) continue;
    prob *= dists[t - 1][tokens[t]];
  }
  return prob;
}

Real AmanModel::sequence_nll(Attribute a, const Tensor& image, const std::vector<TokenId>& tokens) const {
  Graph g(/*no_grad=*/true);
  EncoderOutput out = encode(g, params_, config_, image);
  Var map = reshape(out.attribute_maps[index(a)],
                    {config_.attr_channels, config_.map_height() * config_.map_width()});
  DecoderWeights w = DecoderWeights::bind(g, params_, decoder_prefix(config_, a));
  return aman::sequence_nll(g, w, map, tokens, config_.hidden, config_.order).value()[0];
}

CaptionSequence AmanModel::decode(Attribute a, const EncodedImage& enc, std::size_t beam_width) const {
  const StepFunction step = step_function(a, enc.attribute_maps[index(a)]);
  CaptionSequence seq = beam_width <= 1
                            ? greedy_decode(step, initial_value_state(), vocab_.size(), config_.max_len)
                            : beam_decode(step, initial_value_state(), vocab_.size(), beam_width, config_.max_len);
  seq.attribute = a;
  return seq;
}

ImagePrediction AmanModel::predict(const Tensor& image, std::size_t beam_width) const {
  const EncodedImage enc = encode_values(image);
  ImagePrediction pred;
  PerAttribute<Real> scores{};
  for (auto a : kAllAttributes) {
    AttributeCaption& c = pred.attributes[index(a)];
    c.sequence = decode(a, enc, beam_width);
    c.words = vocab_.decode(c.sequence.tokens);
    c.score = std::clamp(enc.attribute_scores[index(a)] * kScoreScale, 0.0, kScoreScale);
    scores[index(a)] = c.score;
  }
  pred.average_score = average_attribute_score(scores);
  pred.global_score = std::clamp(enc.global_score * kScoreScale, 0.0, kScoreScale);
  return pred;
}

CheckpointManifest AmanModel::manifest(const std::map<std::string, std::string>& extra) const {
  CheckpointManifest m;
  m.seed = config_.seed;
  for (const auto& [k, v] : config_.to_kv()) m.metadata["model." + k] = v;
  m.metadata["vocab"] = vocab_.serialize();
  for (const auto& [k, v] : extra) m.metadata[k] = v;
  return m;
}

void AmanModel::save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra) const {
  save_checkpoint(path, params_, manifest(extra));
}

AmanModel AmanModel::from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : ckpt.manifest.metadata) {
    if (k.rfind("model.", 0) == 0) kv[k.substr(6)] = v;
  }
  auto vocab_it = ckpt.manifest.metadata.find("vocab");
  if (vocab_it == ckpt.manifest.metadata.end()) throw IntegrityError("checkpoint has no vocabulary");
  ModelConfig cfg = ModelConfig::from_kv(kv);
  cfg.validate();
  Vocab vocab = Vocab::deserialize(vocab_it->second);

  // The stored tensors must match the layout a fresh model of this config has.
  AmanModel reference(cfg, vocab);
  for (const auto& [name, t] : reference.params_) {
    if (!ckpt.params.contains(name)) throw IntegrityError("checkpoint is missing parameter " + name);
    if (ckpt.params.at(name).shape() != t.shape()) {
      throw IntegrityError("checkpoint parameter " + name + " has shape " +
                           shape_str(ckpt.params.at(name).shape()) + ", expected " + shape_str(t.shape()));
    }
  }
  if (ckpt.params.size() != reference.params_.size()) {
    throw IntegrityError("checkpoint holds parameters this model configuration does not define");
  }
  return AmanModel(std::move(cfg), std::move(vocab), ckpt.params);
}

AmanModel AmanModel::load(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

}  // namespace aman
