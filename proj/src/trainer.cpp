#include "aman/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "aman/image.hpp"

namespace aman {

namespace {

std::string format_real(Real v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Real parse_real(const std::string& key, const std::string& v) {
  Real x = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("train." + key + ": expected a number, got '" + v + "'");
  }
  return x;
}

std::size_t parse_count(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("train." + key + ": expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("train." + key + ": expected a boolean, got '" + v + "'");
}

const Tokenizer& caption_tokenizer() {
  static const Tokenizer tok = Tokenizer::for_captions();
  return tok;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive, got " + format_real(lr));
  if (batch_full == 0 || batch_weak == 0) throw ConfigError("train batch sizes must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (score_weight < 0.0 || caption_weight < 0.0) throw ConfigError("train loss weights must be non-negative");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be non-negative");
  if (vocab_min_freq == 0) throw ConfigError("train.vocab_min_freq must be at least 1");
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {
      {"lr", format_real(lr)},
      {"batch_full", std::to_string(batch_full)},
      {"batch_weak", std::to_string(batch_weak)},
      {"epochs_pretrain", std::to_string(epochs_pretrain)},
      {"epochs_finetune", std::to_string(epochs_finetune)},
      {"dropout", format_real(dropout)},
      {"seed", std::to_string(seed)},
      {"score_weight", format_real(score_weight)},
      {"caption_weight", format_real(caption_weight)},
      {"freeze_encoder", freeze_encoder ? "true" : "false"},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"max_steps", std::to_string(max_steps)},
      {"grad_clip", format_real(grad_clip)},
      {"vocab_min_freq", std::to_string(vocab_min_freq)},
      {"threads", std::to_string(threads)},
      {"record_wall_time", record_wall_time ? "true" : "false"},
  };
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "lr") c.lr = parse_real(k, v);
    else if (k == "batch_full") c.batch_full = parse_count(k, v);
    else if (k == "batch_weak") c.batch_weak = parse_count(k, v);
    else if (k == "epochs_pretrain") c.epochs_pretrain = parse_count(k, v);
    else if (k == "epochs_finetune") c.epochs_finetune = parse_count(k, v);
    else if (k == "dropout") c.dropout = parse_real(k, v);
    else if (k == "seed") c.seed = parse_count(k, v);
    else if (k == "score_weight") c.score_weight = parse_real(k, v);
    else if (k == "caption_weight") c.caption_weight = parse_real(k, v);
    else if (k == "freeze_encoder") c.freeze_encoder = parse_flag(k, v);
    else if (k == "checkpoint_every") c.checkpoint_every = parse_count(k, v);
    else if (k == "max_steps") c.max_steps = parse_count(k, v);
    else if (k == "grad_clip") c.grad_clip = parse_real(k, v);
    else if (k == "vocab_min_freq") c.vocab_min_freq = parse_count(k, v);
    else if (k == "threads") c.threads = parse_count(k, v);
    else if (k == "record_wall_time") c.record_wall_time = parse_flag(k, v);
    else throw ConfigError("unknown train key '" + k + "'");
  }
  c.validate();
  return c;
}

std::string_view stage_name(Stage s) { return s == Stage::kPretrain ? "pretrain" : "finetune"; }

std::vector<std::string> caption_words(const std::string& caption) { return caption_tokenizer().tokenize(caption); }

Vocab build_vocab(const std::vector<AttributedRecord>& records, std::size_t min_freq) {
  std::vector<std::vector<std::string>> sentences;
  for (const auto& r : records) {
    for (const auto& caps : r.captions) {
      for (const auto& c : caps) sentences.push_back(caption_words(c));
    }
  }
  return Vocab::build(sentences, min_freq);
}

std::vector<TrainExample> prepare_examples(const std::vector<AttributedRecord>& records, const Vocab& vocab,
                                           const ModelConfig& cfg, const ImageSource& images) {
  std::vector<TrainExample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    TrainExample ex;
    ex.image_id = r.image_id;
    ex.image = resolve_image(r.image_path, r.image_id, images.base_dir, cfg.image_height, cfg.image_width);
    for (auto a : kAllAttributes) {
      for (const auto& c : r.captions[index(a)]) {
        auto words = caption_words(c);
        if (words.empty()) continue;
        if (words.size() > cfg.max_len) words.resize(cfg.max_len);
        ex.captions[index(a)].push_back(vocab.encode(words));
      }
      if (const auto& s = r.scores[index(a)]) ex.scores[index(a)] = *s / AmanModel::kScoreScale;
    }
    if (r.global_score) ex.global_score = *r.global_score / AmanModel::kScoreScale;
    out.push_back(std::move(ex));
  }
  return out;
}

nlohmann::json StepLog::to_json() const {
  nlohmann::json j;
  j["step"] = step;
  j["stage"] = std::string(stage_name(stage));
  j["loss"] = loss;
  if (global_mse) j["global_mse"] = *global_mse;
  nlohmann::json mse = nlohmann::json::object(), nll = nlohmann::json::object();
  for (auto a : kAllAttributes) {
    if (attribute_mse[index(a)]) mse[std::string(name(a))] = *attribute_mse[index(a)];
    if (attribute_nll[index(a)]) nll[std::string(name(a))] = *attribute_nll[index(a)];
  }
  j["attribute_mse"] = mse;
  j["attribute_nll"] = nll;
  j["tokens"] = tokens;
  if (wall_ms) j["wall_ms"] = *wall_ms;
  return j;
}

ExampleLoss example_loss(const AmanModel& model, const TrainExample& ex, const TrainConfig& cfg,
                         std::uint64_t member_seed, bool with_grad, Real dropout_rate) {
  const ModelConfig& mc = model.config();
  Rng dropout_rng(mix_seed(member_seed, 1));
  Rng caption_rng(mix_seed(member_seed, 2));
  const DropoutSpec drop{dropout_rate, &dropout_rng};

  Graph g(!with_grad);
  EncoderOutput enc = encode(g, model.params(), mc, ex.image, drop);

  ExampleLoss out;
  PerAttribute<std::optional<Var>> attr_terms;
  std::optional<Var> global_term;
  bool any_score = false;
  for (auto a : kAllAttributes) {
    if (const auto& s = ex.scores[index(a)]) {
      Var l = mse_loss({enc.attribute_scores[index(a)]}, std::span<const Real>(&*s, 1));
      attr_terms[index(a)] = l;
      out.attribute_mse[index(a)] = l.value()[0];
      any_score = true;
    }
  }
  if (ex.global_score) {
    global_term = mse_loss({enc.global_score}, std::span<const Real>(&*ex.global_score, 1));
    out.global_mse = global_term->value()[0];
    any_score = true;
  }

  Var total;
  if (any_score) total = mul(total_loss(attr_terms, global_term), cfg.score_weight);

  const std::size_t L = mc.map_height() * mc.map_width();
  for (auto a : kAllAttributes) {
    const auto& caps = ex.captions[index(a)];
    if (caps.empty()) continue;
    const auto& tokens = caps[caption_rng.below(caps.size())];
    Var map = reshape(enc.attribute_maps[index(a)], {mc.attr_channels, L});
    DecoderWeights w = DecoderWeights::bind(g, model.params(), decoder_prefix(mc, a));
    Var nll = sequence_nll(g, w, map, tokens, mc.hidden, mc.order, drop);
    out.attribute_nll[index(a)] = nll.value()[0];
    out.tokens += tokens.size() - 1;
    Var term = mul(nll, cfg.caption_weight);
    total = total.valid() ? add(total, term) : term;
  }
  if (!total.valid()) throw DataError("record " + ex.image_id + " has neither scores nor captions");
  out.loss = total.value()[0];
  if (with_grad) {
    g.backward(total);
    out.grads = g.param_grads();
  }
  return out;
}

Trainer::Trainer(AmanModel& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) { cfg_.validate(); }

std::size_t Trainer::steps_for(std::size_t examples, std::size_t batch, std::size_t epochs) {
  return epochs * ((examples + batch - 1) / batch);
}

void Trainer::pretrain(const std::vector<TrainExample>& corpus) {
  if (cfg_.epochs_pretrain == 0) return;
  bool any_score = false;
  for (const auto& ex : corpus) {
    any_score = any_score || ex.global_score.has_value();
    for (const auto& s : ex.scores) any_score = any_score || s.has_value();
  }
  if (!any_score) throw DataError("pretraining needs a fully-annotated corpus, but no record carries a score");
  run_stage(Stage::kPretrain, corpus, cfg_.batch_full, cfg_.epochs_pretrain);
}

void Trainer::finetune(const std::vector<TrainExample>& corpus) {
  if (cfg_.epochs_finetune == 0) return;
  run_stage(Stage::kFinetune, corpus, cfg_.batch_weak, cfg_.epochs_finetune);
}

void Trainer::run_stage(Stage stage, const std::vector<TrainExample>& corpus, std::size_t batch,
                        std::size_t epochs) {
  if (corpus.empty()) throw DataError(std::string(stage_name(stage)) + ": no training examples");
  const std::uint64_t stage_seed = mix_seed(cfg_.seed, stage == Stage::kPretrain ? 1 : 2);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(stage_seed, epoch));
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      if (!budget_left()) return;
      const std::size_t step_no = state_.step + 1;
      if (step_no <= resume_step_) {
        state_.step = step_no;
        continue;
      }
      std::vector<std::size_t> members(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(start + batch, order.size())));
      StepLog entry = train_step(stage, corpus, members);
      state_.step = step_no;
      log_.push_back(entry);
      if (callback_) callback_(entry);
      if (!checkpoint_dir_.empty() && cfg_.checkpoint_every > 0 && step_no % cfg_.checkpoint_every == 0) {
        model_.save(checkpoint_dir_ / ("step_" + std::to_string(step_no) + ".ckpt"),
                    {{"train.step", std::to_string(step_no)}, {"train.stage", std::string(stage_name(stage))}});
      }
    }
  }
}

StepLog Trainer::train_step(Stage stage, const std::vector<TrainExample>& corpus,
                            const std::vector<std::size_t>& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t step_no = state_.step + 1;
  const std::uint64_t step_seed = mix_seed(cfg_.seed, step_no);
  std::vector<ExampleLoss> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto work = [&](std::size_t i) {
    try {
      results[i] = example_loss(model_, corpus[batch[i]], cfg_, mix_seed(step_seed, i), true, cfg_.dropout);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  std::size_t workers = cfg_.threads ? cfg_.threads : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) work(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Reduction in member order keeps the sum bit-identical for any thread count.
  const Real inv = 1.0 / static_cast<Real>(batch.size());
  Gradients grads;
  StepLog entry;
  entry.step = step_no;
  entry.stage = stage;
  PerAttribute<std::size_t> mse_n{}, nll_n{};
  std::size_t global_n = 0;
  for (auto& r : results) {
    accumulate(grads, r.grads, inv);
    entry.loss += r.loss * inv;
    entry.tokens += r.tokens;
    if (r.global_mse) {
      entry.global_mse = entry.global_mse.value_or(0.0) + *r.global_mse;
      ++global_n;
    }
    for (auto a : kAllAttributes) {
      const auto i = index(a);
      if (r.attribute_mse[i]) {
        entry.attribute_mse[i] = entry.attribute_mse[i].value_or(0.0) + *r.attribute_mse[i];
        ++mse_n[i];
      }
      if (r.attribute_nll[i]) {
        entry.attribute_nll[i] = entry.attribute_nll[i].value_or(0.0) + *r.attribute_nll[i];
        ++nll_n[i];
      }
    }
  }
  if (entry.global_mse) *entry.global_mse /= static_cast<Real>(global_n);
  for (auto a : kAllAttributes) {
    const auto i = index(a);
    if (entry.attribute_mse[i]) *entry.attribute_mse[i] /= static_cast<Real>(mse_n[i]);
    if (entry.attribute_nll[i]) *entry.attribute_nll[i] /= static_cast<Real>(nll_n[i]);
  }

  if (stage == Stage::kFinetune && cfg_.freeze_encoder) {
    std::vector<std::string> frozen;
    for (const auto& [name, _] : grads) {
      if (name.rfind("mafn.", 0) == 0) frozen.push_back(name);
    }
    for (const auto& n : frozen) grads.erase(n);
  }
  if (cfg_.grad_clip > 0.0) {
    const Real norm = global_norm(grads);
    if (norm > cfg_.grad_clip) {
      Gradients scaled;
      accumulate(scaled, grads, cfg_.grad_clip / norm);
      grads = std::move(scaled);
    }
  }
  sgd_step(model_.params(), grads, cfg_.lr);

  if (cfg_.record_wall_time) {
    entry.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  return entry;
}

std::string Trainer::log_jsonl() const {
  std::string out;
  for (const auto& e : log_) out += e.to_json().dump() + "\n";
  return out;
}

MetricReport evaluate(const AmanModel& model, const std::vector<AttributedRecord>& testset,
                      const ImageSource& images, const EvalOptions& opts) {
  if (testset.empty()) throw DataError("evaluate: the test set is empty");
  const ModelConfig& cfg = model.config();
  std::vector<EvalPair> pairs;
  std::map<Attribute, std::pair<std::vector<double>, std::vector<double>>> scores;
  double avg_sum = 0.0;
  for (const auto& r : testset) {
    const Tensor image = resolve_image(r.image_path, r.image_id, images.base_dir, cfg.image_height, cfg.image_width);
    const EncodedImage enc = model.encode_values(image);
    PerAttribute<Real> predicted{};
    for (auto a : kAllAttributes) {
      const auto i = index(a);
      predicted[i] = std::clamp(enc.attribute_scores[i] * AmanModel::kScoreScale, 0.0, AmanModel::kScoreScale);
      if (r.has_captions(a)) {
        EvalPair p;
        p.attribute = a;
        p.candidate = model.vocab().decode(model.decode(a, enc, opts.beam_width).tokens);
        for (const auto& c : r.captions[i]) p.references.push_back(caption_words(c));
        pairs.push_back(std::move(p));
      }
      if (const auto& s = r.scores[i]) {
        scores[a].first.push_back(enc.attribute_scores[i]);
        scores[a].second.push_back(*s / AmanModel::kScoreScale);
      }
    }
    avg_sum += average_attribute_score(predicted);
  }
  MetricReport report = compute_report(pairs, scores);
  report.average_predicted_score = avg_sum / static_cast<double>(testset.size());
  return report;
}

}  // namespace aman
