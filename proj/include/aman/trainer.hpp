#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aman/dataset.hpp"
#include "aman/metrics.hpp"
#include "aman/model.hpp"

namespace aman {

struct TrainConfig {
  Real lr = 0.01;
  std::size_t batch_full = 16;
  std::size_t batch_weak = 64;
  std::size_t epochs_pretrain = 1;
  std::size_t epochs_finetune = 1;
  Real dropout = 0.5;
  std::uint64_t seed = 7;
  Real score_weight = 1.0;
  Real caption_weight = 1.0;
  bool freeze_encoder = false;
  // 0 disables periodic checkpoints.
  std::size_t checkpoint_every = 0;
  // 0 means no cap; otherwise training stops after this many steps in total.
  std::size_t max_steps = 0;
  // Rescales the batch gradient when its global norm exceeds this; 0 disables.
  Real grad_clip = 0.0;
  std::size_t vocab_min_freq = 2;
  // Worker threads for batch members; 0 picks the hardware concurrency.
  std::size_t threads = 0;
  // Wall time makes logs differ between runs, so it is opt-in.
  bool record_wall_time = false;

  void validate() const;
  std::map<std::string, std::string> to_kv() const;
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

enum class Stage { kPretrain, kFinetune };
std::string_view stage_name(Stage s);

/// A record prepared for training: pixels, encoded captions and normalized scores.
struct TrainExample {
  std::string image_id;
  Tensor image;
  PerAttribute<std::vector<std::vector<TokenId>>> captions;
  PerAttribute<std::optional<Real>> scores{};  // [0, 1]
  std::optional<Real> global_score;            // [0, 1]
};

struct ImageSource {
  std::filesystem::path base_dir;
};

std::vector<std::string> caption_words(const std::string& caption);
std::vector<TrainExample> prepare_examples(const std::vector<AttributedRecord>& records, const Vocab& vocab,
                                           const ModelConfig& cfg, const ImageSource& images = {});
Vocab build_vocab(const std::vector<AttributedRecord>& records, std::size_t min_freq);

struct StepLog {
  std::size_t step = 0;
  Stage stage = Stage::kPretrain;
  Real loss = 0.0;
  std::optional<Real> global_mse;
  PerAttribute<std::optional<Real>> attribute_mse{};
  PerAttribute<std::optional<Real>> attribute_nll{};
  std::size_t tokens = 0;
  std::optional<double> wall_ms;

  nlohmann::json to_json() const;
};

/// Losses of one example under the current parameters, plus gradients when requested.
struct ExampleLoss {
  Real loss = 0.0;
  std::optional<Real> global_mse;
  PerAttribute<std::optional<Real>> attribute_mse{};
  PerAttribute<std::optional<Real>> attribute_nll{};
  std::size_t tokens = 0;
  Gradients grads;
};

// Loss for one example: score_weight * total_loss(present score terms) +
// caption_weight * sum over present attributes of one sampled caption's NLL.
// `member_seed` drives both the dropout masks and the caption choice.
ExampleLoss example_loss(const AmanModel& model, const TrainExample& ex, const TrainConfig& cfg,
                         std::uint64_t member_seed, bool with_grad, Real dropout_rate);

struct TrainState {
  std::size_t step = 0;  // completed steps across both stages
};

using StepCallback = std::function<void(const StepLog&)>;

class Trainer {
 public:
  Trainer(AmanModel& model, TrainConfig cfg);

  // Checkpoints go to `dir`/step_<n>.ckpt; nothing is written when dir is empty.
  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }
  void set_callback(StepCallback cb) { callback_ = std::move(cb); }

  // Joint score and caption training on a fully-annotated corpus.
  // Refuses (DataError) when no record carries any score.
  void pretrain(const std::vector<TrainExample>& corpus);
  // Caption training on a weakly-annotated corpus; score terms only where targets exist.
  void finetune(const std::vector<TrainExample>& corpus);

  // Steps numbered before `step` are skipped, so a resumed run follows the
  // same schedule as an uninterrupted one.
  void resume_from(std::size_t step) { resume_step_ = step; }

  const std::vector<StepLog>& log() const { return log_; }
  std::size_t step() const { return state_.step; }
  std::string log_jsonl() const;

  static std::size_t steps_for(std::size_t examples, std::size_t batch, std::size_t epochs);

 private:
  void run_stage(Stage stage, const std::vector<TrainExample>& corpus, std::size_t batch, std::size_t epochs);
  StepLog train_step(Stage stage, const std::vector<TrainExample>& corpus, const std::vector<std::size_t>& batch);
  bool budget_left() const { return cfg_.max_steps == 0 || state_.step < cfg_.max_steps; }

  AmanModel& model_;
  TrainConfig cfg_;
  TrainState state_;
  std::size_t resume_step_ = 0;
  std::filesystem::path checkpoint_dir_;
  StepCallback callback_;
  std::vector<StepLog> log_;
};

struct EvalOptions {
  std::size_t beam_width = 1;
};

// Decodes every attribute with reference captions and scores every attribute
// with a target. Dropout is never applied here.
MetricReport evaluate(const AmanModel& model, const std::vector<AttributedRecord>& testset,
                      const ImageSource& images = {}, const EvalOptions& opts = {});

}  // namespace aman
