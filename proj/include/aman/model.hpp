#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aman/lgn.hpp"
#include "aman/mafn.hpp"

namespace aman {

/// Encoder outputs as plain values, ready for value-level decoding.
struct EncodedImage {
  PerAttribute<Tensor> attribute_maps;  // [C_a x L]
  PerAttribute<Real> attribute_scores{};  // raw head outputs, normalized scale
  Real global_score = 0.0;
};

struct AttributeCaption {
  CaptionSequence sequence;
  std::vector<std::string> words;
  Real score = 0.0;  // 0..10 scale
};

struct ImagePrediction {
  PerAttribute<AttributeCaption> attributes;
  Real average_score = 0.0;
  Real global_score = 0.0;
};

/// Full network: encoder, per-attribute decoders and the shared vocabulary.
/// Scores are regressed on the [0, 1] scale and reported on [0, 10], clamped
/// to that range.
class AmanModel {
 public:
  static constexpr Real kScoreScale = 10.0;

  AmanModel(ModelConfig config, Vocab vocab);

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }

  EncodedImage encode_values(const Tensor& image) const;

  // One value-level decoder step for attribute `a` over its feature map.
  StepFunction step_function(Attribute a, const Tensor& attr_map) const;
  DecoderValueState initial_value_state() const;

  // Product of teacher-forced step probabilities; tokens framed BOS ... EOS.
  Real sequence_prob(Attribute a, const Tensor& image, const std::vector<TokenId>& tokens) const;
  Real sequence_nll(Attribute a, const Tensor& image, const std::vector<TokenId>& tokens) const;
  // Teacher-forced per-step distributions, one [V] tensor per target.
  std::vector<Tensor> step_distributions(Attribute a, const Tensor& image,
                                         const std::vector<TokenId>& tokens) const;

  // beam_width <= 1 selects greedy decoding.
  ImagePrediction predict(const Tensor& image, std::size_t beam_width = 1) const;
  CaptionSequence decode(Attribute a, const EncodedImage& enc, std::size_t beam_width = 1) const;

  // Metadata: model config keys prefixed "model.", the vocabulary under "vocab",
  // plus any caller-provided extra entries.
  CheckpointManifest manifest(const std::map<std::string, std::string>& extra = {}) const;
  void save(const std::filesystem::path& path, const std::map<std::string, std::string>& extra = {}) const;
  static AmanModel from_checkpoint(const Checkpoint& ckpt);
  static AmanModel load(const std::filesystem::path& path);

 private:
  AmanModel(ModelConfig config, Vocab vocab, ModelParams params);

  ModelConfig config_;
  Vocab vocab_;
  ModelParams params_;
};

// [C x h x w] -> [C x h*w]
Tensor flatten_map(const Tensor& map);

}  // namespace aman
