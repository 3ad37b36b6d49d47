#include <gtest/gtest.h>

#include <cmath>

#include "aman/gradcheck.hpp"
#include "aman/mafn.hpp"
#include "support.hpp"

namespace aman {
namespace {

using testing::random_tensor;
using testing::tiny_config;

ModelParams tiny_params(const ModelConfig& cfg, std::uint64_t seed = 1) {
  ModelParams p;
  Rng rng(seed);
  init_mafn(p, cfg, rng);
  return p;
}

TEST(Encode, ShapesAndFiniteOutputs) {
  const auto cfg = tiny_config();
  const auto p = tiny_params(cfg);
  Graph g(true);
  const auto out = encode(g, p, cfg, Tensor({3, 16, 16}));
  EXPECT_EQ(out.dense_map.value().shape(), (Shape{6, cfg.map_height(), cfg.map_width()}));
  EXPECT_EQ(out.global_features.value().shape(), Shape{cfg.global_channels});
  EXPECT_EQ(out.attribute_maps.size(), 5u);
  for (auto a : kAllAttributes) {
    EXPECT_EQ(out.attribute_maps[index(a)].value().shape(),
              (Shape{cfg.attr_channels, cfg.map_height(), cfg.map_width()}));
    EXPECT_TRUE(out.attribute_scores[index(a)].value().all_finite());
  }
  EXPECT_TRUE(out.global_score.value().all_finite());
}

TEST(Encode, PureFunctionOfImageAndParams) {
  const auto cfg = tiny_config();
  const auto p = tiny_params(cfg);
  Rng rng(2);
  const Tensor img = random_tensor({3, 16, 16}, rng, 0, 1);
  Graph g1(true), g2(true);
  const auto a = encode(g1, p, cfg, img), b = encode(g2, p, cfg, img);
  EXPECT_EQ(a.global_score.value(), b.global_score.value());
  for (auto at : kAllAttributes) {
    EXPECT_EQ(a.attribute_maps[index(at)].value(), b.attribute_maps[index(at)].value());
    EXPECT_EQ(a.attribute_scores[index(at)].value(), b.attribute_scores[index(at)].value());
  }
}

TEST(Encode, WrongImageShapeIsContractError) {
  const auto cfg = tiny_config();
  const auto p = tiny_params(cfg);
  Graph g(true);
  EXPECT_THROW(encode(g, p, cfg, Tensor({3, 8, 16})), ContractError);
  EXPECT_THROW(encode(g, p, cfg, Tensor({1, 16, 16})), ContractError);
}

TEST(Encode, ParameterNamesFollowLayout) {
  const auto cfg = tiny_config();
  const auto p = tiny_params(cfg);
  for (const char* n : {"mafn.trunk.conv1.w", "mafn.trunk.conv2.b", "mafn.global.conv.w", "mafn.global.fc.w",
                        "mafn.attr.Composition.conv.w", "mafn.attr.UseOfCamera.fc.b"}) {
    EXPECT_TRUE(p.contains(n)) << n;
  }
  EXPECT_EQ(p.at("mafn.attr.Composition.conv.w").shape(), (Shape{cfg.attr_channels, 6, 1, 1}));
}

TEST(MseLoss, Examples) {
  const std::vector<Real> same = {0.3, 0.7};
  EXPECT_EQ(mse_loss(same, same), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<Real>{1}, std::vector<Real>{0}), 0.5);
  EXPECT_DOUBLE_EQ(mse_loss(std::vector<Real>{1, 3}, std::vector<Real>{0, 1}), 1.25);
  EXPECT_THROW(mse_loss(std::vector<Real>{}, std::vector<Real>{}), ContractError);
  EXPECT_THROW(mse_loss(std::vector<Real>{1}, std::vector<Real>{1, 2}), ContractError);
}

TEST(MseLoss, NonNegativeAndZeroOnlyOnEquality) {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<Real> a(1 + rng.below(6)), b(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform(-5, 5);
      b[i] = rng.below(2) ? a[i] : rng.uniform(-5, 5);
    }
    const Real l = mse_loss(a, b);
    EXPECT_GE(l, 0.0);
    EXPECT_EQ(l == 0.0, a == b);
  }
}

TEST(MseLoss, GraphVersionMatchesValueVersion) {
  Rng rng(4);
  Graph g;
  std::vector<Var> preds;
  std::vector<Real> values, targets;
  for (int i = 0; i < 4; ++i) {
    values.push_back(rng.uniform(-1, 1));
    targets.push_back(rng.uniform(-1, 1));
    preds.push_back(g.constant(Tensor::scalar(values.back())));
  }
  EXPECT_NEAR(mse_loss(preds, targets).value()[0], mse_loss(values, targets), 1e-15);
}

TEST(TotalLoss, Examples) {
  PerAttribute<std::optional<Real>> attrs;
  attrs.fill(0.1);
  EXPECT_NEAR(total_loss(attrs, 0.5), 1.0, 1e-15);
  PerAttribute<std::optional<Real>> none;
  LossCoverage cov;
  EXPECT_DOUBLE_EQ(total_loss(none, 0.3, &cov), 0.3);
  EXPECT_EQ(cov.present(), 1u);
  EXPECT_EQ(cov.absent(), 5u);
  PerAttribute<std::optional<Real>> zeros;
  zeros.fill(0.0);
  EXPECT_EQ(total_loss(zeros, 0.0), 0.0);
  EXPECT_THROW(total_loss(none, std::nullopt), ContractError);
}

TEST(TotalLoss, PermutationInvariant) {
  Rng rng(5);
  for (int rep = 0; rep < 100; ++rep) {
    PerAttribute<std::optional<Real>> a;
    for (auto& v : a) v = rng.uniform(0, 1);
    auto b = a;
    std::reverse(b.begin(), b.end());
    EXPECT_NEAR(total_loss(a, 0.2), total_loss(b, 0.2), 1e-12);
  }
}

TEST(AverageAttributeScore, Examples) {
  EXPECT_DOUBLE_EQ(average_attribute_score({6, 6, 6, 6, 6}), 6.0);
  EXPECT_DOUBLE_EQ(average_attribute_score({5, 5, 5, 5, 10}), 6.0);
  Rng rng(6);
  for (int rep = 0; rep < 100; ++rep) {
    PerAttribute<Real> s;
    Real total = 0;
    for (auto& v : s) total += (v = rng.uniform(0, 10));
    EXPECT_NEAR(average_attribute_score(s), total / 5, 1e-12);
  }
}

// Six-term score loss for a batch of images against fixed targets.
Var batch_score_loss(Graph& g, const ModelParams& q, const ModelConfig& cfg, const std::vector<Tensor>& images,
                     const std::vector<std::vector<Real>>& targets) {
  Var total;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto out = encode(g, q, cfg, images[i]);
    PerAttribute<std::optional<Var>> attr;
    for (auto a : kAllAttributes) {
      attr[index(a)] = mse_loss({out.attribute_scores[index(a)]}, std::vector<Real>{targets[i][index(a)]});
    }
    Var l = total_loss(attr, mse_loss({out.global_score}, std::vector<Real>{targets[i][5]}));
    total = total.valid() ? add(total, l) : l;
  }
  return mul(total, 1.0 / static_cast<Real>(images.size()));
}

TEST(Encode, TwoImageBatchGradientMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  const auto p = tiny_params(cfg, 3);
  Rng rng(7);
  const std::vector<Tensor> images = {random_tensor({3, 16, 16}, rng, 0, 1), random_tensor({3, 16, 16}, rng, 0, 1)};
  std::vector<std::vector<Real>> targets(2, std::vector<Real>(6));
  for (auto& t : targets)
    for (auto& v : t) v = rng.uniform(0, 1);
  LossFn f = [&](Graph& g, const ModelParams& q) { return batch_score_loss(g, q, cfg, images, targets); };
  GradCheckOptions opts;
  opts.max_coords_per_param = 4;
  opts.seed = 11;
  EXPECT_LT(finite_diff_check(f, p, opts).max_rel_error, 1e-4);
}

// All six targets are linear functions of the mean pixel intensity of each channel.
TEST(Encode, HeadsFitLinearTargetsWithinFiveHundredSteps) {
  const auto cfg = tiny_config();
  ModelParams p = tiny_params(cfg, 4);
  Rng rng(8);
  std::vector<Tensor> images;
  std::vector<std::vector<Real>> targets;
  for (int i = 0; i < 8; ++i) {
    Tensor img({3, 16, 16});
    std::vector<Real> level(3);
    for (auto& l : level) l = rng.uniform(0, 1);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < 256; ++k) img[c * 256 + k] = std::clamp(level[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    images.push_back(img);
    std::vector<Real> t(6);
    for (std::size_t j = 0; j < 6; ++j) t[j] = 0.2 + 0.3 * level[j % 3] + 0.2 * level[(j + 1) % 3];
    targets.push_back(t);
  }
  Real initial = 0, last = 0;
  for (int step = 0; step < 500; ++step) {
    Graph g;
    Var loss = batch_score_loss(g, p, cfg, images, targets);
    if (step == 0) initial = loss.value()[0];
    last = loss.value()[0];
    g.backward(loss);
    sgd_step(p, g.param_grads(), 0.1);
  }
  EXPECT_LT(last, 0.1 * initial) << "initial " << initial << " final " << last;
}

}  // namespace
}  // namespace aman
