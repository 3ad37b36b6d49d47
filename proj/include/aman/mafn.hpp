#pragma once

#include <optional>
#include <span>

#include "aman/attributes.hpp"
#include "aman/autodiff.hpp"
#include "aman/model_config.hpp"

namespace aman {

/// Multi-attribute feature network: a shared convolutional trunk feeding one
/// global branch and five attribute branches, each with its own score head.
///
/// Parameter layout (prefix "mafn."):
///   trunk.conv{i}.w/.b       i = 1.., 3x3 stride-2 convolutions, tanh
///   global.conv.w/.b         1x1 convolution to global_channels, tanh
///   global.fc.w/.b           pooled global features -> score
///   attr.<Name>.conv.w/.b    1x1 convolution to attr_channels, tanh
///   attr.<Name>.fc.w/.b      pooled attribute features -> score
struct EncoderOutput {
  Var dense_map;                      // [C x h x w]
  Var global_features;                // [C_g]
  PerAttribute<Var> attribute_maps;   // [C_a x h x w]
  Var global_score;                   // [1]
  PerAttribute<Var> attribute_scores; // [1] each
};

void init_mafn(ModelParams& params, const ModelConfig& cfg, Rng& rng);

// Dropout, when given, is applied to the pooled features ahead of each score head.
struct DropoutSpec {
  Real rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rng != nullptr && rate > 0.0; }
};

EncoderOutput encode(Graph& g, const ModelParams& params, const ModelConfig& cfg,
                     const Tensor& image, const DropoutSpec& dropout = {});

// (1/2N) * sum_i (pred_i - target_i)^2
Real mse_loss(std::span<const Real> preds, std::span<const Real> targets);
Var mse_loss(const std::vector<Var>& preds, std::span<const Real> targets);

// Which of the six loss terms contributed.
struct LossCoverage {
  PerAttribute<bool> attribute{};
  bool global = false;
  std::size_t present() const;
  std::size_t absent() const { return kNumAttributes + 1 - present(); }
};

// Sum of the present attribute losses plus the global loss; absent terms add nothing.
Real total_loss(const PerAttribute<std::optional<Real>>& attribute_losses,
                std::optional<Real> global_loss, LossCoverage* coverage = nullptr);
Var total_loss(const PerAttribute<std::optional<Var>>& attribute_losses,
               std::optional<Var> global_loss, LossCoverage* coverage = nullptr);

Real average_attribute_score(const PerAttribute<Real>& scores);

}  // namespace aman
