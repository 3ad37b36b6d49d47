#include "aman/mafn.hpp"

#include <cmath>
#include <string>

namespace aman {

namespace {

// Variance-preserving bound for the tanh convolutions.
const Real kConvGain = std::sqrt(3.0);

std::string attr_prefix(Attribute a) { return "mafn.attr." + std::string(name(a)) + "."; }

void add_conv(ModelParams& p, const std::string& prefix, std::size_t cout, std::size_t cin,
              std::size_t k, Rng& rng) {
  const std::size_t fan_in = cin * k * k;
  p.add(prefix + "w", uniform_init({cout, cin, k, k}, fan_in, rng, kConvGain));
  p.add(prefix + "b", uniform_init({cout}, fan_in, rng));
}

void add_fc(ModelParams& p, const std::string& prefix, std::size_t in, Rng& rng) {
  p.add(prefix + "w", uniform_init({1, in}, in, rng));
  p.add(prefix + "b", uniform_init({1}, in, rng));
}

// 1x1 conv + tanh, pool, optional dropout, linear score.
std::pair<Var, Var> branch(Graph& g, const ModelParams& params, const std::string& prefix,
                           Var dense, const DropoutSpec& dropout, Var& pooled_out) {
  Var map = tanh(conv2d(dense, g.param(params, prefix + "conv.w"), g.param(params, prefix + "conv.b"), 1, 0));
  const auto& s = map.shape();
  Var pooled = row_mean(reshape(map, {s[0], s[1] * s[2]}));
  pooled_out = pooled;
  if (dropout.active()) pooled = aman::dropout(pooled, dropout.rate, *dropout.rng);
  Var score = add(matvec(g.param(params, prefix + "fc.w"), pooled), g.param(params, prefix + "fc.b"));
  return {map, score};
}

}  // namespace

void init_mafn(ModelParams& params, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.trunk_widths.size(); ++i) {
    add_conv(params, "mafn.trunk.conv" + std::to_string(i + 1) + ".", cfg.trunk_widths[i], cin, 3, rng);
    cin = cfg.trunk_widths[i];
  }
  add_conv(params, "mafn.global.conv.", cfg.global_channels, cin, 1, rng);
  add_fc(params, "mafn.global.fc.", cfg.global_channels, rng);
  for (auto a : kAllAttributes) {
    add_conv(params, attr_prefix(a) + "conv.", cfg.attr_channels, cin, 1, rng);
    add_fc(params, attr_prefix(a) + "fc.", cfg.attr_channels, rng);
  }
}

EncoderOutput encode(Graph& g, const ModelParams& params, const ModelConfig& cfg,
                     const Tensor& image, const DropoutSpec& dropout) {
  const Shape expected{cfg.in_channels, cfg.image_height, cfg.image_width};
  if (image.shape() != expected) {
    throw ContractError("encode: image shape " + shape_str(image.shape()) + " does not match configured " +
                        shape_str(expected));
  }
  EncoderOutput out;
  Var x = g.constant(image);
  for (std::size_t i = 0; i < cfg.trunk_widths.size(); ++i) {
    const std::string p = "mafn.trunk.conv" + std::to_string(i + 1) + ".";
    x = tanh(conv2d(x, g.param(params, p + "w"), g.param(params, p + "b"), 2, 1));
  }
  out.dense_map = x;
  Var pooled;
  std::tie(std::ignore, out.global_score) = branch(g, params, "mafn.global.", x, dropout, pooled);
  out.global_features = pooled;
  for (auto a : kAllAttributes) {
    Var unused;
    auto [map, score] = branch(g, params, attr_prefix(a), x, dropout, unused);
    out.attribute_maps[index(a)] = map;
    out.attribute_scores[index(a)] = score;
  }
  return out;
}

Real mse_loss(std::span<const Real> preds, std::span<const Real> targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ContractError("mse_loss: need equal, non-zero lengths (got " + std::to_string(preds.size()) +
                        " and " + std::to_string(targets.size()) + ")");
  }
  Real s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - targets[i]) * (preds[i] - targets[i]);
  return s / (2.0 * static_cast<Real>(preds.size()));
}

Var mse_loss(const std::vector<Var>& preds, std::span<const Real> targets) {
  if (preds.size() != targets.size() || preds.empty()) {
    throw ContractError("mse_loss: need equal, non-zero lengths (got " + std::to_string(preds.size()) +
                        " and " + std::to_string(targets.size()) + ")");
  }
  Graph* g = preds.front().graph();
  Var acc;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    Var d = sub(preds[i], g->constant(Tensor::scalar(targets[i])));
    Var sq = mul(d, d);
    acc = acc.valid() ? add(acc, sq) : sq;
  }
  return mul(acc, 1.0 / (2.0 * static_cast<Real>(preds.size())));
}

std::size_t LossCoverage::present() const {
  std::size_t n = global ? 1 : 0;
  for (bool b : attribute) n += b ? 1 : 0;
  return n;
}

Real total_loss(const PerAttribute<std::optional<Real>>& attribute_losses, std::optional<Real> global_loss,
                LossCoverage* coverage) {
  LossCoverage cov;
  Real total = 0;
  for (auto a : kAllAttributes) {
    if (const auto& l = attribute_losses[index(a)]) {
      total += *l;
      cov.attribute[index(a)] = true;
    }
  }
  if (global_loss) {
    total += *global_loss;
    cov.global = true;
  }
  if (cov.present() == 0) throw ContractError("total_loss: no loss component present");
  if (coverage) *coverage = cov;
  return total;
}

Var total_loss(const PerAttribute<std::optional<Var>>& attribute_losses, std::optional<Var> global_loss,
               LossCoverage* coverage) {
  LossCoverage cov;
  Var total;
  auto accumulate_term = [&](Var v) { total = total.valid() ? add(total, v) : v; };
  for (auto a : kAllAttributes) {
    if (const auto& l = attribute_losses[index(a)]) {
      accumulate_term(*l);
      cov.attribute[index(a)] = true;
    }
  }
  if (global_loss) {
    accumulate_term(*global_loss);
    cov.global = true;
  }
  if (cov.present() == 0) throw ContractError("total_loss: no loss component present");
  if (coverage) *coverage = cov;
  return total;
}

Real average_attribute_score(const PerAttribute<Real>& scores) {
  Real s = 0;
  for (Real v : scores) s += v;
  return s / static_cast<Real>(kNumAttributes);
}

}  // namespace aman
