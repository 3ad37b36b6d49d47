#include <gtest/gtest.h>

#include <sstream>

#include "aman/cli.hpp"
#include "aman/io.hpp"
#include "support.hpp"

namespace aman {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::scratch_dir;
using testing::synthetic_corpus;
using testing::tiny_config;

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "aman");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<json> json_lines(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

void write_lines(const fs::path& path, const std::vector<json>& lines) {
  std::string text;
  for (const auto& j : lines) text += j.dump() + "\n";
  write_file_atomic(path, text);
}

// A run directory with images, an attributed corpus and an INI config.
struct RunDir {
  fs::path dir;
  fs::path config;
  fs::path testset;

  explicit RunDir(const std::string& name, std::size_t epochs = 2) : dir(scratch_dir(name)) {
    const auto corpus = synthetic_corpus(6, 4, dir, 16, 16);
    write_attributed(dir / "train.jsonl", corpus.records);
    testset = dir / "test.jsonl";
    write_attributed(testset, std::vector<AttributedRecord>(corpus.records.begin(), corpus.records.begin() + 2));
    RunConfig rc;
    rc.model = tiny_config();
    rc.train.lr = 0.1;
    rc.train.batch_weak = 2;
    rc.train.epochs_finetune = epochs;
    rc.train.dropout = 0.0;
    rc.train.vocab_min_freq = 1;
    rc.train.checkpoint_every = 3;
    rc.weak_corpus = "train.jsonl";
    rc.image_dir = ".";
    rc.out_dir = "run";
    config = dir / "run.ini";
    write_file_atomic(config, rc.to_ini());
  }

  fs::path checkpoint() const { return dir / "run" / "final.ckpt"; }
};

TEST(Cli, NoSubcommandIsUsageError) {
  EXPECT_EQ(run({}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(run({"--help"}).code, kExitOk);
}

TEST(Cli, ConfigDumpParsesBack) {
  const auto r = run({"config-dump"});
  ASSERT_EQ(r.code, kExitOk);
  const RunConfig rc = RunConfig::parse(r.out, "/base");
  EXPECT_EQ(rc.model.to_kv(), ModelConfig::desk().to_kv());
  EXPECT_EQ(rc.train.to_kv(), TrainConfig{}.to_kv());
  EXPECT_EQ(run({"config-dump", "--preset", "nope"}).code, kExitUsage);
}

TEST(Cli, RunConfigRejectsUnknownSectionsAndKeys) {
  EXPECT_THROW(RunConfig::parse("[extra]\na = 1\n", "."), ConfigError);
  EXPECT_THROW(RunConfig::parse("[data]\ncolour = 1\n", "."), ConfigError);
  const RunConfig rc = RunConfig::parse("[data]\nweak_corpus = w.jsonl\n", "/base");
  EXPECT_EQ(rc.weak_corpus, fs::path("/base/w.jsonl"));
  EXPECT_EQ(rc.out_dir, fs::path("/base/run"));
}

TEST(Cli, BuildDatasetWritesOutputs) {
  const auto dir = scratch_dir("cli_build");
  write_lines(dir / "weak.jsonl",
              {{{"image_id", "a"}, {"comments", {"great colors and light", "nice composition"}}},
               {{"image_id", "b"}, {"comments", {"sharp focus on the eye"}}},
               {{"image_id", "c"}, {"comments", {"wow"}}}});
  const auto r = run({"build-dataset", "--weak", (dir / "weak.jsonl").string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(dir / "out" / "keywords.json"));
  EXPECT_TRUE(fs::exists(dir / "out" / "stats.txt"));
  const auto ds = read_attributed(dir / "out" / "dataset.jsonl");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds[0].image_id, "a");
  EXPECT_NE(r.out.find("1 dropped"), std::string::npos) << r.out;
  EXPECT_EQ(run({"stats", (dir / "out" / "dataset.jsonl").string()}).out, read_file(dir / "out" / "stats.txt"));
}

TEST(Cli, BuildDatasetMinesFiveKeywordsByDefault) {
  const auto dir = scratch_dir("cli_mine");
  json captions = json::object();
  captions["ColorLighting"] = {"the red of it", "the blue of it", "the green of it", "the pink of it",
                               "the gold of it", "the grey of it", "the teal of it"};
  captions["Composition"] = {"strong lines"};
  write_lines(dir / "full.jsonl", {{{"image_id", "f"}, {"captions", captions}}});
  write_lines(dir / "weak.jsonl", {{{"image_id", "a"}, {"comments", {"red sky"}}}});
  const auto r = run({"build-dataset", "--full", (dir / "full.jsonl").string(), "--weak",
                      (dir / "weak.jsonl").string(), "--out", (dir / "out").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json table = json::parse(read_file(dir / "out" / "keywords.json"));
  EXPECT_EQ(table.at("ColorLighting").size(), 5u);
  EXPECT_NE(r.out.find("warning: no captions for source attribute Focus"), std::string::npos);
}

TEST(Cli, MissingInputNamesThePath) {
  const auto dir = scratch_dir("cli_missing");
  const std::string missing = (dir / "absent.jsonl").string();
  const auto r = run({"build-dataset", "--weak", missing, "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
  EXPECT_EQ(run({"build-dataset", "--weak", missing, "--out", (dir / "out").string(), "-k", "0"}).code, kExitUsage);
}

TEST(Cli, MalformedLineIsDataErrorWithLocation) {
  const auto dir = scratch_dir("cli_malformed");
  write_file_atomic(dir / "weak.jsonl", "{\"image_id\": \"a\", \"comments\": [\"x\"]}\n{not json\n");
  const auto r = run({"build-dataset", "--weak", (dir / "weak.jsonl").string(), "--out", (dir / "out").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_NE(r.err.find("weak.jsonl:2"), std::string::npos) << r.err;
}

TEST(Cli, TrainWritesCheckpointLogAndVocab) {
  RunDir rd("cli_train");
  const auto r = run({"train", rd.config.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(rd.checkpoint()));
  EXPECT_TRUE(fs::exists(rd.dir / "run" / "vocab.txt"));
  EXPECT_TRUE(fs::exists(rd.dir / "run" / "checkpoints" / "step_3.ckpt"));
  const auto log = json_lines(read_file(rd.dir / "run" / "train_log.jsonl"));
  ASSERT_EQ(log.size(), 6u);
  for (std::size_t i = 0; i < log.size(); ++i) EXPECT_EQ(log[i].at("step"), i + 1);
}

TEST(Cli, ResumeContinuesStepNumberingAndMatchesFullRun) {
  RunDir full("cli_resume_full", 4), part("cli_resume_part", 4);
  ASSERT_EQ(run({"train", full.config.string()}).code, kExitOk);
  // The partial run stops after six steps, then resumes from its step-6 checkpoint.
  std::string ini = read_file(part.config);
  ini.replace(ini.find("max_steps = 0"), 13, "max_steps = 6");
  write_file_atomic(part.config, ini);
  ASSERT_EQ(run({"train", part.config.string()}).code, kExitOk);
  ini.replace(ini.find("max_steps = 6"), 13, "max_steps = 0");
  write_file_atomic(part.config, ini);
  const auto r = run({"train", part.config.string(), "--resume", (part.dir / "run/checkpoints/step_6.ckpt").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("trained 6 steps (total 12)"), std::string::npos) << r.out;
  EXPECT_EQ(read_file(part.dir / "run" / "train_log.jsonl"), read_file(full.dir / "run" / "train_log.jsonl"));
  EXPECT_EQ(load_checkpoint(part.checkpoint()).params, load_checkpoint(full.checkpoint()).params);
}

TEST(Cli, NonPositiveLearningRateIsConfigError) {
  RunDir rd("cli_bad_lr");
  std::string ini = read_file(rd.config);
  ini.replace(ini.find("lr = "), 8, "lr = -0.5\n#");
  write_file_atomic(rd.config, ini);
  const auto r = run({"train", rd.config.string()});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("lr"), std::string::npos) << r.err;
}

TEST(Cli, CaptionPrintsFiveAttributesAndAverage) {
  RunDir rd("cli_caption");
  ASSERT_EQ(run({"train", rd.config.string()}).code, kExitOk);
  const auto r = run({"caption", "--checkpoint", rd.checkpoint().string(), "--image", (rd.dir / "img0.ppm").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0].at("image_id"), "img0");
  ASSERT_EQ(lines[0].at("attributes").size(), 5u);
  double total = 0;
  for (const auto& a : lines[0].at("attributes")) {
    const double s = a.at("score").get<double>();
    EXPECT_TRUE(s >= 0.0 && s <= 10.0);
    total += s;
  }
  EXPECT_NEAR(lines[0].at("average_score").get<double>(), total / 5, 1e-12);
}

TEST(Cli, BeamWidthOneEqualsGreedy) {
  RunDir rd("cli_beam");
  ASSERT_EQ(run({"train", rd.config.string()}).code, kExitOk);
  write_lines(rd.dir / "list.jsonl", {{{"image_id", "img0"}, {"image_path", "img0.ppm"}},
                                      {{"image_id", "img3"}, {"image_path", "img3.ppm"}}});
  const std::string ckpt = rd.checkpoint().string(), list = (rd.dir / "list.jsonl").string();
  const auto beam = run({"caption", "--checkpoint", ckpt, "--input", list, "--beam-width", "1"});
  const auto greedy = run({"caption", "--checkpoint", ckpt, "--input", list, "--greedy"});
  ASSERT_EQ(beam.code, kExitOk) << beam.err;
  EXPECT_EQ(beam.out, greedy.out);
  EXPECT_EQ(json_lines(beam.out).size(), 2u);
  EXPECT_EQ(run({"caption", "--checkpoint", ckpt, "--input", list, "--beam-width", "0"}).code, kExitUsage);
}

TEST(Cli, CorruptCheckpointIsDataError) {
  RunDir rd("cli_corrupt");
  ASSERT_EQ(run({"train", rd.config.string()}).code, kExitOk);
  std::string bytes = read_file(rd.checkpoint());
  bytes[bytes.size() / 2] ^= 0x5a;
  write_file_atomic(rd.dir / "bad.ckpt", bytes);
  const auto r = run({"caption", "--checkpoint", (rd.dir / "bad.ckpt").string(), "--image",
                      (rd.dir / "img0.ppm").string()});
  EXPECT_EQ(r.code, kExitData);
  EXPECT_FALSE(r.err.empty());
}

TEST(Cli, EvaluateIsDeterministicAndAgreesWithCaptionsMode) {
  RunDir rd("cli_eval");
  ASSERT_EQ(run({"train", rd.config.string()}).code, kExitOk);
  const std::string ckpt = rd.checkpoint().string(), test = rd.testset.string();
  const auto a = run({"evaluate", "--checkpoint", ckpt, "--testset", test, "--out", (rd.dir / "a.json").string()});
  const auto b = run({"evaluate", "--checkpoint", ckpt, "--testset", test, "--out", (rd.dir / "b.json").string()});
  ASSERT_EQ(a.code, kExitOk) << a.err;
  EXPECT_EQ(read_file(rd.dir / "a.json"), read_file(rd.dir / "b.json"));
  EXPECT_TRUE(fs::exists(rd.dir / "a.txt"));
  EXPECT_EQ(a.out, b.out);

  const auto cap = run({"caption", "--checkpoint", ckpt, "--input", test, "--out", (rd.dir / "caps.jsonl").string()});
  ASSERT_EQ(cap.code, kExitOk) << cap.err;
  const auto m = run({"evaluate", "--testset", test, "--captions", (rd.dir / "caps.jsonl").string(), "--out",
                      (rd.dir / "m.json").string()});
  ASSERT_EQ(m.code, kExitOk) << m.err;
  const json from_model = json::parse(read_file(rd.dir / "a.json"));
  const json from_captions = json::parse(read_file(rd.dir / "m.json"));
  for (const char* key : {"bleu1", "bleu4", "meteor", "rouge_l", "cider", "spice_f1", "pairs"}) {
    EXPECT_EQ(from_model.at("overall").at(key), from_captions.at("overall").at(key)) << key;
  }
}

TEST(Cli, EvaluateWithoutModelOrCaptionsIsConfigError) {
  RunDir rd("cli_eval_usage");
  EXPECT_EQ(run({"evaluate", "--testset", rd.testset.string()}).code, kExitUsage);
}

TEST(Cli, GradcheckPassesAndCorruptionFails) {
  const auto ok = run({"gradcheck", "--instances", "3"});
  EXPECT_EQ(ok.code, kExitOk) << ok.out;
  EXPECT_NE(ok.out.find("gradcheck passed"), std::string::npos);
  const auto bad = run({"gradcheck", "--instances", "1", "--corrupt", "0.01"});
  EXPECT_EQ(bad.code, kExitInvariant);
  EXPECT_NE(bad.out.find("FAILED"), std::string::npos);
}

}  // namespace
}  // namespace aman
