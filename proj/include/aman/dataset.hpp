#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "aman/attributes.hpp"
#include "aman/tokenizer.hpp"
#include "json.hpp"

namespace aman {

/// One image of a weakly-annotated corpus: free-form comments, no attribute labels.
struct RawRecord {
  std::string image_id;
  std::optional<std::string> image_path;
  std::vector<std::string> comments;
  std::optional<double> global_score;
};

/// One image of a fully-annotated corpus, labelled with the seven source attributes.
struct FullRecord {
  std::string image_id;
  std::optional<std::string> image_path;
  std::array<std::vector<std::string>, kNumSourceAttributes> captions;
  std::array<std::optional<double>, kNumSourceAttributes> scores;
  std::optional<double> global_score;
};

/// One image with captions (and optionally scores) for a subset of the five attributes.
struct AttributedRecord {
  std::string image_id;
  std::optional<std::string> image_path;
  PerAttribute<std::vector<std::string>> captions;
  PerAttribute<std::optional<double>> scores;
  std::optional<double> global_score;

  bool has_captions(Attribute a) const { return !captions[index(a)].empty(); }
  bool has_any_caption() const;
  bool has_any_score() const;
};

struct KeywordEntry {
  std::string keyword;
  std::size_t count = 0;
  friend bool operator==(const KeywordEntry&, const KeywordEntry&) = default;
};

/// Ranked keyword lists per source attribute.
class KeywordTable {
 public:
  using List = std::vector<KeywordEntry>;

  List& at(SourceAttribute a) { return lists_[index(a)]; }
  const List& at(SourceAttribute a) const { return lists_[index(a)]; }
  bool empty() const;

  // The shipped table mined from the reference fully-annotated corpus.
  static KeywordTable reference();

  nlohmann::json to_json() const;
  static KeywordTable from_json(const nlohmann::json& j);

  friend bool operator==(const KeywordTable&, const KeywordTable&) = default;

 private:
  std::array<List, kNumSourceAttributes> lists_;
};

struct MiningResult {
  KeywordTable table;
  // Source attributes that had no captions; their lists are left empty.
  std::vector<SourceAttribute> missing;
};

// Top-k most frequent tokens per source attribute, ties broken lexicographically.
MiningResult mine_keywords(const std::vector<FullRecord>& corpus, std::size_t k,
                           const Tokenizer& tokenizer = Tokenizer());

std::set<Attribute> assign_attributes(std::string_view comment, const KeywordTable& table,
                                      const Tokenizer& tokenizer = Tokenizer());

struct BuildReport {
  std::size_t input_records = 0;
  std::size_t dropped_records = 0;
  std::size_t tagged_comments = 0;
  std::size_t untagged_comments = 0;
  // Comments that landed in two or more attributes.
  std::size_t multi_assigned_comments = 0;
  PerAttribute<std::size_t> images_per_attribute{};
  PerAttribute<std::size_t> comments_per_attribute{};
};

struct BuildResult {
  std::vector<AttributedRecord> records;
  BuildReport report;
};

BuildResult build_dataset(const std::vector<RawRecord>& raw, const KeywordTable& table,
                          const Tokenizer& tokenizer = Tokenizer());

// Collapses the seven source attributes onto the five: captions are concatenated
// and scores of merged pairs averaged (a single present score is used as-is).
AttributedRecord merge_full_record(const FullRecord& rec);

struct AttributeSplit {
  std::vector<std::size_t> train, val, test;  // indices into the dataset
  bool fallback = false;  // too few records; val/test shrunk proportionally
};
using DatasetSplit = PerAttribute<AttributeSplit>;

// For each attribute, shuffles the records carrying it and carves out val/test.
// When fewer than val_n + test_n records exist, half of them are split between
// val and test in the val_n:test_n ratio and the split is flagged.
DatasetSplit split_dataset(const std::vector<AttributedRecord>& ds, std::int64_t val_n,
                           std::int64_t test_n, std::uint64_t seed);

struct AttributeStats {
  std::size_t images = 0;
  std::size_t comments = 0;
  double average = 0.0;  // comments / images, rounded to 2 decimals
};

struct DatasetStats {
  PerAttribute<AttributeStats> per_attribute{};
  AttributeStats total;  // distinct comments per image, each counted once
};

DatasetStats dataset_stats(const std::vector<AttributedRecord>& ds);
std::string render_stats(const DatasetStats& stats);

// JSON-lines I/O. Parse errors are DataError tagged "<path>:<line>".
RawRecord raw_record_from_json(const nlohmann::json& j);
FullRecord full_record_from_json(const nlohmann::json& j);
AttributedRecord attributed_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttributedRecord& r);

std::vector<RawRecord> read_raw_corpus(const std::filesystem::path& path);
std::vector<FullRecord> read_full_corpus(const std::filesystem::path& path);
std::vector<AttributedRecord> read_attributed(const std::filesystem::path& path);
void write_attributed(const std::filesystem::path& path, const std::vector<AttributedRecord>& ds);

}  // namespace aman
