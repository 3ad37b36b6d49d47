#include "aman/cli.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <chrono>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "aman/gradcheck.hpp"
#include "aman/image.hpp"
#include "aman/io.hpp"

namespace aman {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_relative() ? base / path : path;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& ini_text, const fs::path& base_dir) {
  boost::property_tree::ptree tree;
  std::istringstream in(ini_text);
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  std::map<std::string, std::string> model_kv, train_kv, data_kv;
  for (const auto& [section, body] : tree) {
    std::map<std::string, std::string>* target = nullptr;
    if (section == "model") target = &model_kv;
    else if (section == "train") target = &train_kv;
    else if (section == "data") target = &data_kv;
    else throw ConfigError("unknown config section [" + section + "]");
    if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a section");
    for (const auto& [key, value] : body) (*target)[key] = value.get_value<std::string>();
  }
  RunConfig rc;
  rc.model = ModelConfig::from_kv(model_kv);
  rc.train = TrainConfig::from_kv(train_kv);
  rc.image_dir = base_dir;
  for (const auto& [k, v] : data_kv) {
    if (k == "full_corpus") rc.full_corpus = resolve(base_dir, v);
    else if (k == "weak_corpus") rc.weak_corpus = resolve(base_dir, v);
    else if (k == "image_dir") rc.image_dir = resolve(base_dir, v);
    else if (k == "out_dir") rc.out_dir = resolve(base_dir, v);
    else throw ConfigError("unknown data key '" + k + "'");
  }
  if (!data_kv.count("out_dir")) rc.out_dir = base_dir / "run";
  return rc;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("input not found: " + path.string());
  return parse(read_file(path), path.parent_path());
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  out << "[model]\n";
  for (const auto& [k, v] : model.to_kv()) out << k << " = " << v << "\n";
  out << "\n[train]\n";
  for (const auto& [k, v] : train.to_kv()) out << k << " = " << v << "\n";
  out << "\n[data]\n";
  out << "full_corpus = " << full_corpus.string() << "\n";
  out << "weak_corpus = " << weak_corpus.string() << "\n";
  out << "image_dir = " << image_dir.string() << "\n";
  out << "out_dir = " << out_dir.string() << "\n";
  return out.str();
}

Real GradcheckSummary::worst() const { return std::max({mafn, csan, lgn}); }

GradcheckSummary run_gradcheck(const ModelConfig& base, const GradcheckSettings& settings) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig cfg = base;
  cfg.image_height = 16;
  cfg.image_width = 16;
  cfg.validate();
  const std::size_t C = cfg.attr_channels, L = cfg.map_height() * cfg.map_width(), H = cfg.hidden;
  constexpr std::size_t kVocab = 12;

  GradcheckSummary summary;
  summary.instances = settings.instances;
  for (std::size_t inst = 0; inst < settings.instances; ++inst) {
    Rng rng(mix_seed(settings.seed, inst));
    GradCheckOptions opts;
    opts.max_coords_per_param = settings.coords_per_param;
    opts.seed = rng.next();
    opts.corrupt_analytic = settings.corrupt_analytic;

    // Encoder: six masked score losses over a random image.
    {
      ModelParams params;
      init_mafn(params, cfg, rng);
      Tensor image({3, cfg.image_height, cfg.image_width});
      for (auto& v : image.data()) v = rng.uniform();
      PerAttribute<Real> targets{};
      for (auto& t : targets) t = rng.uniform();
      const Real global_target = rng.uniform();
      auto loss = [&](Graph& g, const ModelParams& p) {
        EncoderOutput enc = encode(g, p, cfg, image);
        PerAttribute<std::optional<Var>> terms;
        for (auto a : kAllAttributes) {
          terms[index(a)] = mse_loss({enc.attribute_scores[index(a)]}, std::span<const Real>(&targets[index(a)], 1));
        }
        return total_loss(terms, mse_loss({enc.global_score}, std::span<const Real>(&global_target, 1)));
      };
      auto r = finite_diff_check(loss, params, opts);
      summary.mafn = std::max(summary.mafn, r.max_rel_error);
      summary.coords += r.coords_checked;
    }
    // Attention: both orders, random map and hidden state, random readout.
    {
      ModelParams params;
      init_csan(params, "csan.", C, cfg.attention_dim, H, rng);
      Tensor map({C, L}), h({H}), readout({C});
      for (auto& v : map.data()) v = rng.uniform(-1, 1);
      for (auto& v : h.data()) v = rng.uniform(-1, 1);
      for (auto& v : readout.data()) v = rng.uniform(-1, 1);
      const AttentionOrder order = inst % 2 ? AttentionOrder::kSpatialFirst : AttentionOrder::kChannelFirst;
      auto loss = [&](Graph& g, const ModelParams& p) {
        CsanWeights w = CsanWeights::bind(g, p, "csan.");
        CsanResult r = csan_forward(g.constant(map), g.constant(h), w, order);
        return sum(mul(r.context, g.constant(readout)));
      };
      auto r = finite_diff_check(loss, params, opts);
      summary.csan = std::max(summary.csan, r.max_rel_error);
      summary.coords += r.coords_checked;
    }
    // Decoder: teacher-forced NLL of a random sequence.
    {
      ModelConfig dcfg = cfg;
      dcfg.share_decoder = true;
      ModelParams params;
      init_lgn(params, dcfg, kVocab, rng);
      Tensor map({C, L});
      for (auto& v : map.data()) v = rng.uniform(-1, 1);
      std::vector<TokenId> tokens{Vocab::kBos};
      const std::size_t len = 1 + rng.below(4);
      for (std::size_t t = 0; t < len; ++t) tokens.push_back(Vocab::kReserved + rng.below(kVocab - Vocab::kReserved));
      tokens.push_back(Vocab::kEos);
      const AttentionOrder order = inst % 2 ? AttentionOrder::kChannelFirst : AttentionOrder::kSpatialFirst;
      auto loss = [&](Graph& g, const ModelParams& p) {
        DecoderWeights w = DecoderWeights::bind(g, p, "lgn.shared.");
        return sequence_nll(g, w, g.constant(map), tokens, H, order);
      };
      auto r = finite_diff_check(loss, params, opts);
      summary.lgn = std::max(summary.lgn, r.max_rel_error);
      summary.coords += r.coords_checked;
    }
  }
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return summary;
}

namespace {

constexpr Real kGradTolerance = 1e-4;

json caption_line(const std::string& image_id, const ImagePrediction& pred) {
  json attrs = json::array();
  for (auto a : kAllAttributes) {
    const auto& c = pred.attributes[index(a)];
    attrs.push_back({{"attribute", std::string(name(a))}, {"caption", join_tokens(c.words)}, {"score", c.score}});
  }
  return {{"image_id", image_id}, {"attributes", attrs}, {"average_score", pred.average_score}};
}

struct ImageEntry {
  std::string image_id;
  std::optional<std::string> image_path;
};

std::vector<ImageEntry> read_image_list(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("input not found: " + path.string());
  std::vector<ImageEntry> entries;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    try {
      json j = json::parse(line);
      if (!j.contains("image_id") || !j["image_id"].is_string()) throw DataError("missing string field image_id");
      ImageEntry e{j["image_id"].get<std::string>(), std::nullopt};
      if (j.contains("image_path") && j["image_path"].is_string()) e.image_path = j["image_path"].get<std::string>();
      entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  });
  return entries;
}

int cmd_build_dataset(const fs::path& full, const fs::path& weak, const fs::path& out_dir, std::size_t k,
                      std::ostream& out) {
  KeywordTable table;
  if (full.empty()) {
    table = KeywordTable::reference();
  } else {
    MiningResult mined = mine_keywords(read_full_corpus(full), k);
    for (auto a : mined.missing) out << "warning: no captions for source attribute " << name(a) << "\n";
    table = mined.table;
  }
  BuildResult built = build_dataset(read_raw_corpus(weak), table);
  const std::string stats = render_stats(dataset_stats(built.records));
  write_file_atomic(out_dir / "keywords.json", table.to_json().dump(2) + "\n");
  write_attributed(out_dir / "dataset.jsonl", built.records);
  write_file_atomic(out_dir / "stats.txt", stats);
  const auto& r = built.report;
  out << stats;
  out << "records: " << r.input_records << " in, " << built.records.size() << " kept, " << r.dropped_records
      << " dropped; comments: " << r.tagged_comments << " tagged, " << r.untagged_comments << " untagged, "
      << r.multi_assigned_comments << " multi-assigned\n";
  return kExitOk;
}

int cmd_stats(const fs::path& dataset, std::ostream& out) {
  out << render_stats(dataset_stats(read_attributed(dataset)));
  return kExitOk;
}

std::string read_existing_log(const fs::path& path, std::size_t up_to_step) {
  if (!fs::exists(path)) return {};
  std::string kept;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    json j = json::parse(line);
    if (j.at("step").get<std::size_t>() <= up_to_step) kept += line + "\n";
  });
  return kept;
}

int cmd_train(const fs::path& config_path, const fs::path& resume, std::ostream& out) {
  RunConfig rc = RunConfig::load(config_path);
  if (rc.full_corpus.empty() && rc.weak_corpus.empty()) {
    throw ConfigError("config names neither data.full_corpus nor data.weak_corpus");
  }
  std::vector<AttributedRecord> full, weak;
  if (!rc.full_corpus.empty()) {
    for (const auto& r : read_full_corpus(rc.full_corpus)) full.push_back(merge_full_record(r));
  }
  if (!rc.weak_corpus.empty()) weak = read_attributed(rc.weak_corpus);

  std::optional<AmanModel> model;
  std::size_t start_step = 0;
  if (!resume.empty()) {
    Checkpoint ckpt = load_checkpoint(resume);
    model.emplace(AmanModel::from_checkpoint(ckpt));
    auto it = ckpt.manifest.metadata.find("train.step");
    if (it == ckpt.manifest.metadata.end()) throw IntegrityError("checkpoint carries no training step");
    start_step = std::stoull(it->second);
  } else {
    std::vector<AttributedRecord> all = full;
    all.insert(all.end(), weak.begin(), weak.end());
    model.emplace(rc.model, build_vocab(all, rc.train.vocab_min_freq));
  }

  const ImageSource images{rc.image_dir};
  const auto full_ex = prepare_examples(full, model->vocab(), model->config(), images);
  const auto weak_ex = prepare_examples(weak, model->vocab(), model->config(), images);

  fs::create_directories(rc.out_dir);
  const fs::path log_path = rc.out_dir / "train_log.jsonl";
  const std::string prior_log = start_step ? read_existing_log(log_path, start_step) : std::string();

  Trainer trainer(*model, rc.train);
  trainer.resume_from(start_step);
  if (rc.train.checkpoint_every) trainer.set_checkpoint_dir(rc.out_dir / "checkpoints");
  if (!full_ex.empty()) trainer.pretrain(full_ex);
  if (!weak_ex.empty()) trainer.finetune(weak_ex);

  write_file_atomic(log_path, prior_log + trainer.log_jsonl());
  model->vocab().save(rc.out_dir / "vocab.txt");
  const std::string last_stage = weak_ex.empty() ? "pretrain" : "finetune";
  model->save(rc.out_dir / "final.ckpt",
              {{"train.step", std::to_string(trainer.step())}, {"train.stage", last_stage}});
  out << "trained " << trainer.step() - start_step << " steps (total " << trainer.step() << "); checkpoint "
      << (rc.out_dir / "final.ckpt").string() << "\n";
  return kExitOk;
}

int cmd_caption(const fs::path& ckpt, const fs::path& image, const fs::path& input, const fs::path& image_dir,
                const fs::path& out_path, std::size_t beam_width, std::ostream& out) {
  const AmanModel model = AmanModel::load(ckpt);
  const ModelConfig& cfg = model.config();
  std::vector<ImageEntry> entries;
  fs::path base = image_dir;
  if (!image.empty()) {
    if (!fs::exists(image)) throw DataError("input not found: " + image.string());
    entries.push_back({image.stem().string(), fs::absolute(image).string()});
  } else {
    entries = read_image_list(input);
    if (base.empty()) base = input.parent_path();
  }
  std::string lines;
  for (const auto& e : entries) {
    const Tensor pixels = resolve_image(e.image_path, e.image_id, base, cfg.image_height, cfg.image_width);
    lines += caption_line(e.image_id, model.predict(pixels, beam_width)).dump() + "\n";
  }
  if (out_path.empty()) out << lines;
  else write_file_atomic(out_path, lines);
  return kExitOk;
}

MetricReport metrics_from_captions(const fs::path& captions, const std::vector<AttributedRecord>& testset) {
  std::map<std::string, const AttributedRecord*> by_id;
  for (const auto& r : testset) by_id[r.image_id] = &r;
  std::vector<EvalPair> pairs;
  std::map<Attribute, std::pair<std::vector<double>, std::vector<double>>> scores;
  double avg_sum = 0.0;
  std::size_t images = 0;
  if (!fs::exists(captions)) throw DataError("input not found: " + captions.string());
  for_each_line(captions, [&](const std::string& line, std::size_t n) {
    const std::string where = captions.string() + ":" + std::to_string(n) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    }
    if (!j.contains("image_id") || !j.contains("attributes")) throw DataError(where + "expected image_id and attributes");
    auto it = by_id.find(j["image_id"].get<std::string>());
    if (it == by_id.end()) return;
    const AttributedRecord& ref = *it->second;
    ++images;
    if (j.contains("average_score")) avg_sum += j["average_score"].get<double>();
    for (const auto& entry : j["attributes"]) {
      auto a = parse_attribute(entry.at("attribute").get<std::string>());
      if (!a) throw DataError(where + "unknown attribute");
      if (ref.has_captions(*a)) {
        EvalPair p;
        p.attribute = *a;
        p.candidate = caption_words(entry.at("caption").get<std::string>());
        for (const auto& c : ref.captions[index(*a)]) p.references.push_back(caption_words(c));
        pairs.push_back(std::move(p));
      }
      if (const auto& s = ref.scores[index(*a)]; s && entry.contains("score")) {
        scores[*a].first.push_back(entry["score"].get<double>() / AmanModel::kScoreScale);
        scores[*a].second.push_back(*s / AmanModel::kScoreScale);
      }
    }
  });
  if (images == 0) throw DataError("no caption line matches a test-set image");
  MetricReport report = compute_report(pairs, scores);
  report.average_predicted_score = avg_sum / static_cast<double>(images);
  return report;
}

int cmd_evaluate(const fs::path& ckpt, const fs::path& testset_path, const fs::path& captions,
                 const fs::path& image_dir, const fs::path& out_path, std::size_t beam_width, std::ostream& out) {
  const auto testset = read_attributed(testset_path);
  MetricReport report;
  if (!captions.empty()) {
    report = metrics_from_captions(captions, testset);
  } else {
    if (ckpt.empty()) throw ConfigError("evaluate needs --checkpoint unless --captions is given");
    const AmanModel model = AmanModel::load(ckpt);
    const fs::path base = image_dir.empty() ? testset_path.parent_path() : image_dir;
    report = evaluate(model, testset, ImageSource{base}, EvalOptions{beam_width});
  }
  const std::string table = report.render();
  if (!out_path.empty()) {
    write_file_atomic(out_path, report.to_json().dump(2) + "\n");
    fs::path table_path = out_path;
    table_path.replace_extension(".txt");
    write_file_atomic(table_path, table);
  }
  out << table;
  return kExitOk;
}

int cmd_gradcheck(const std::string& preset, const GradcheckSettings& settings, std::ostream& out) {
  const GradcheckSummary s = run_gradcheck(ModelConfig::preset_named(preset), settings);
  out << std::scientific << std::setprecision(3);
  out << "mafn max relative error: " << s.mafn << "\n";
  out << "csan max relative error: " << s.csan << "\n";
  out << "lgn  max relative error: " << s.lgn << "\n";
  out << std::defaultfloat << "instances: " << s.instances << ", coordinates: " << s.coords
      << ", seconds: " << std::setprecision(3) << s.seconds << "\n";
  const bool ok = s.worst() < kGradTolerance;
  out << (ok ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance 1e-4)\n";
  return ok ? kExitOk : kExitInvariant;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Aesthetic attribute captioning toolkit"};
  app.require_subcommand(1);
  std::string preset = "desk";

  auto* build = app.add_subcommand("build-dataset", "Mine keywords and attribute-label a weakly-annotated corpus");
  std::string full_path, weak_path, build_out;
  std::size_t k = 5;
  build->add_option("--full", full_path, "Fully-annotated corpus (JSON lines); the shipped keyword table is used when omitted");
  build->add_option("--weak", weak_path, "Raw comment corpus (JSON lines)")->required();
  build->add_option("--out", build_out, "Output directory")->required();
  build->add_option("-k,--keywords", k, "Keywords kept per source attribute")->check(CLI::PositiveNumber);

  auto* stats = app.add_subcommand("stats", "Print per-attribute image and comment counts");
  std::string stats_path;
  stats->add_option("dataset", stats_path, "Attributed dataset (JSON lines)")->required();

  auto* train = app.add_subcommand("train", "Pretrain and fine-tune from an INI config");
  std::string config_path, resume_path;
  train->add_option("config", config_path, "INI config file")->required();
  train->add_option("--resume", resume_path, "Checkpoint to continue from");

  auto* caption = app.add_subcommand("caption", "Caption and score images");
  std::string cap_ckpt, cap_image, cap_input, cap_out, cap_images;
  std::size_t beam_width = 1;
  bool greedy = false;
  caption->add_option("--checkpoint", cap_ckpt, "Model checkpoint")->required();
  auto* img_opt = caption->add_option("--image", cap_image, "A single PPM image");
  auto* in_opt = caption->add_option("--input", cap_input, "JSON-lines list of {image_id, image_path}");
  img_opt->excludes(in_opt);
  caption->add_option("--image-dir", cap_images, "Base directory for relative image paths");
  caption->add_option("--out", cap_out, "Output JSON-lines path (stdout when omitted)");
  caption->add_option("--beam-width", beam_width, "Beam width; 1 decodes greedily")->check(CLI::PositiveNumber);
  caption->add_flag("--greedy", greedy, "Greedy decoding (same as --beam-width 1)");

  auto* eval = app.add_subcommand("evaluate", "Score captions against references");
  std::string ev_ckpt, ev_test, ev_captions, ev_out, ev_images;
  std::size_t ev_beam = 1;
  eval->add_option("--checkpoint", ev_ckpt, "Model checkpoint");
  eval->add_option("--testset", ev_test, "Attributed test set (JSON lines)")->required();
  eval->add_option("--captions", ev_captions, "Precomputed captions; skips the model");
  eval->add_option("--image-dir", ev_images, "Base directory for relative image paths");
  eval->add_option("--out", ev_out, "Report JSON path; the text table goes next to it as .txt");
  eval->add_option("--beam-width", ev_beam, "Beam width; 1 decodes greedily")->check(CLI::PositiveNumber);

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every network block");
  GradcheckSettings gs;
  grad->add_option("--preset", preset, "Model preset (desk or paper-faithful)");
  grad->add_option("--instances", gs.instances, "Random instances");
  grad->add_option("--seed", gs.seed, "Seed");
  grad->add_option("--coords", gs.coords_per_param, "Coordinates sampled per parameter tensor");
  grad->add_option("--corrupt", gs.corrupt_analytic, "Offset added to analytic gradients")->group("");

  auto* dump = app.add_subcommand("config-dump", "Print every config key with its default");
  dump->add_option("--preset", preset, "Model preset (desk or paper-faithful)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*build) return cmd_build_dataset(full_path, weak_path, build_out, k, out);
    if (*stats) return cmd_stats(stats_path, out);
    if (*train) return cmd_train(config_path, resume_path, out);
    if (*caption) {
      if (cap_image.empty() && cap_input.empty()) throw ConfigError("caption needs --image or --input");
      return cmd_caption(cap_ckpt, cap_image, cap_input, cap_images, cap_out, greedy ? 1 : beam_width, out);
    }
    if (*eval) return cmd_evaluate(ev_ckpt, ev_test, ev_captions, ev_images, ev_out, ev_beam, out);
    if (*grad) return cmd_gradcheck(preset, gs, out);
    if (*dump) {
      RunConfig rc;
      rc.model = ModelConfig::preset_named(preset);
      out << rc.to_ini();
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IntegrityError& e) {
    err << "integrity error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "file error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "invariant failure: " << e.what() << "\n";
    return kExitInvariant;
  }
  return kExitUsage;
}

}  // namespace aman
