#include "aman/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <unordered_set>

#include "aman/io.hpp"
#include "aman/rng.hpp"
#include "aman/tensor.hpp"

namespace aman {

using nlohmann::json;

namespace {
constexpr std::string_view kReferenceKeywords =
#include "aman/keywords_pccd.inc"
    ;

double checked_score(const json& v, const std::string& what) {
  if (!v.is_number()) throw DataError(what + " must be a number");
  const double s = v.get<double>();
  if (!(s >= 0.0 && s <= 10.0)) throw DataError(what + " out of range [0,10]: " + std::to_string(s));
  return s;
}

std::vector<std::string> string_list(const json& v, const std::string& what) {
  if (!v.is_array()) throw DataError(what + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw DataError(what + " must be an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::string required_id(const json& j) {
  if (!j.is_object()) throw DataError("record must be a JSON object");
  if (!j.contains("image_id") || !j["image_id"].is_string()) throw DataError("missing string field image_id");
  auto id = j["image_id"].get<std::string>();
  if (id.empty()) throw DataError("image_id must be non-empty");
  return id;
}

std::optional<std::string> optional_path(const json& j) {
  if (j.contains("image_path") && !j["image_path"].is_null()) {
    if (!j["image_path"].is_string()) throw DataError("image_path must be a string");
    return j["image_path"].get<std::string>();
  }
  return std::nullopt;
}

std::optional<double> optional_score(const json& j, const char* key) {
  if (j.contains(key) && !j[key].is_null()) return checked_score(j[key], key);
  return std::nullopt;
}

template <class T, class Parse>
std::vector<T> read_jsonl(const std::filesystem::path& path, Parse parse) {
  if (!std::filesystem::exists(path)) throw DataError("input not found: " + path.string());
  std::vector<T> out;
  std::unordered_set<std::string> ids;
  for_each_line(path, [&](const std::string& line, std::size_t lineno) {
    try {
      T rec = parse(json::parse(line));
      if (!ids.insert(rec.image_id).second) throw DataError("duplicate image_id " + rec.image_id);
      out.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace

bool AttributedRecord::has_any_caption() const {
  return std::any_of(captions.begin(), captions.end(), [](const auto& c) { return !c.empty(); });
}

bool AttributedRecord::has_any_score() const {
  return global_score.has_value() ||
         std::any_of(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); });
}

bool KeywordTable::empty() const {
  return std::all_of(lists_.begin(), lists_.end(), [](const List& l) { return l.empty(); });
}

KeywordTable KeywordTable::reference() { return from_json(json::parse(kReferenceKeywords)); }

json KeywordTable::to_json() const {
  json j = json::object();
  for (auto a : kAllSourceAttributes) {
    json list = json::array();
    for (const auto& e : at(a)) list.push_back(json::array({e.keyword, e.count}));
    j[std::string(name(a))] = std::move(list);
  }
  return j;
}

KeywordTable KeywordTable::from_json(const json& j) {
  if (!j.is_object()) throw DataError("keyword table must be a JSON object");
  KeywordTable t;
  for (const auto& [key, list] : j.items()) {
    auto a = parse_source_attribute(key);
    if (!a) throw DataError("unknown attribute in keyword table: " + key);
    for (const auto& e : list) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_number_unsigned()) {
        throw DataError("keyword entries must be [keyword, count] pairs");
      }
      t.at(*a).push_back({e[0].get<std::string>(), e[1].get<std::size_t>()});
    }
  }
  return t;
}

MiningResult mine_keywords(const std::vector<FullRecord>& corpus, std::size_t k,
                           const Tokenizer& tokenizer) {
  MiningResult result;
  for (auto a : kAllSourceAttributes) {
    std::map<std::string, std::size_t> counts;
    std::size_t captions = 0;
    for (const auto& rec : corpus) {
      for (const auto& cap : rec.captions[index(a)]) {
        ++captions;
        for (auto& tok : tokenizer.tokenize(cap)) ++counts[tok];
      }
    }
    if (captions == 0) {
      result.missing.push_back(a);
      continue;
    }
    std::vector<KeywordEntry> ranked;
    ranked.reserve(counts.size());
    for (auto& [tok, n] : counts) ranked.push_back({tok, n});
    // counts is ordered by token, so a stable sort by count keeps ties lexicographic
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const KeywordEntry& x, const KeywordEntry& y) { return x.count > y.count; });
    if (ranked.size() > k) ranked.resize(k);
    result.table.at(a) = std::move(ranked);
  }
  return result;
}

std::set<Attribute> assign_attributes(std::string_view comment, const KeywordTable& table,
                                      const Tokenizer& tokenizer) {
  if (table.empty()) throw ContractError("assign_attributes: keyword table is empty");
  const auto tokens = tokenizer.tokenize(comment);
  const std::set<std::string> bag(tokens.begin(), tokens.end());
  std::set<Attribute> out;
  for (auto a : kAllSourceAttributes) {
    for (const auto& e : table.at(a)) {
      if (bag.count(e.keyword)) {
        out.insert(merge(a));
        break;
      }
    }
  }
  return out;
}

BuildResult build_dataset(const std::vector<RawRecord>& raw, const KeywordTable& table,
                          const Tokenizer& tokenizer) {
  BuildResult result;
  auto& rep = result.report;
  rep.input_records = raw.size();
  std::unordered_set<std::string> seen;
  for (const auto& rec : raw) {
    if (!seen.insert(rec.image_id).second) throw DataError("duplicate image_id " + rec.image_id);
  }
  for (const auto& rec : raw) {
    AttributedRecord out;
    out.image_id = rec.image_id;
    out.image_path = rec.image_path;
    out.global_score = rec.global_score;
    for (const auto& comment : rec.comments) {
      const auto attrs = assign_attributes(comment, table, tokenizer);
      if (attrs.empty()) {
        ++rep.untagged_comments;
        continue;
      }
      ++rep.tagged_comments;
      if (attrs.size() > 1) ++rep.multi_assigned_comments;
      for (auto a : attrs) {
        out.captions[index(a)].push_back(comment);
        ++rep.comments_per_attribute[index(a)];
      }
    }
    if (!out.has_any_caption()) {
      ++rep.dropped_records;
      continue;
    }
    for (auto a : kAllAttributes) {
      if (out.has_captions(a)) ++rep.images_per_attribute[index(a)];
    }
    result.records.push_back(std::move(out));
  }
  return result;
}

AttributedRecord merge_full_record(const FullRecord& rec) {
  AttributedRecord out;
  out.image_id = rec.image_id;
  out.image_path = rec.image_path;
  out.global_score = rec.global_score;
  PerAttribute<double> score_sum{};
  PerAttribute<int> score_n{};
  for (auto s : kAllSourceAttributes) {
    const auto a = index(merge(s));
    const auto& caps = rec.captions[index(s)];
    out.captions[a].insert(out.captions[a].end(), caps.begin(), caps.end());
    if (rec.scores[index(s)]) {
      score_sum[a] += *rec.scores[index(s)];
      ++score_n[a];
    }
  }
  for (auto a : kAllAttributes) {
    if (score_n[index(a)] > 0) out.scores[index(a)] = score_sum[index(a)] / score_n[index(a)];
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<AttributedRecord>& ds, std::int64_t val_n,
                           std::int64_t test_n, std::uint64_t seed) {
  if (val_n < 0 || test_n < 0) throw ContractError("split sizes must be non-negative");
  DatasetSplit split;
  for (auto a : kAllAttributes) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds[i].has_captions(a)) members.push_back(i);
    }
    Rng rng(mix_seed(seed, index(a)));
    rng.shuffle(members);
    auto& s = split[index(a)];
    const auto n = static_cast<std::int64_t>(members.size());
    std::int64_t nv = val_n, nt = test_n;
    if (n < val_n + test_n) {
      s.fallback = true;
      const std::int64_t want = val_n + test_n;
      nv = want == 0 ? 0 : (n / 2) * val_n / want;
      nt = want == 0 ? 0 : (n / 2) * test_n / want;
    }
    const auto bv = members.begin();
    s.val.assign(bv, bv + nv);
    s.test.assign(bv + nv, bv + nv + nt);
    s.train.assign(bv + nv + nt, members.end());
  }
  return split;
}

DatasetStats dataset_stats(const std::vector<AttributedRecord>& ds) {
  DatasetStats st;
  auto finish = [](AttributeStats& s) {
    s.average = s.images ? std::round(100.0 * static_cast<double>(s.comments) / static_cast<double>(s.images)) / 100.0
                         : 0.0;
  };
  for (const auto& rec : ds) {
    std::set<std::string> distinct;
    for (auto a : kAllAttributes) {
      const auto& caps = rec.captions[index(a)];
      if (caps.empty()) continue;
      auto& s = st.per_attribute[index(a)];
      ++s.images;
      s.comments += caps.size();
      distinct.insert(caps.begin(), caps.end());
    }
    if (!distinct.empty()) {
      ++st.total.images;
      st.total.comments += distinct.size();
    }
  }
  for (auto& s : st.per_attribute) finish(s);
  finish(st.total);
  return st;
}

std::string render_stats(const DatasetStats& stats) {
  std::ostringstream os;
  os << std::left << std::setw(26) << "Attribute" << std::right << std::setw(18) << "Number of Images"
     << std::setw(20) << "Number of Comments" << std::setw(10) << "Average" << '\n';
  auto row = [&](std::string_view label_text, const AttributeStats& s) {
    os << std::left << std::setw(26) << label_text << std::right << std::setw(18) << s.images
       << std::setw(20) << s.comments << std::setw(10) << std::fixed << std::setprecision(2)
       << s.average << '\n';
  };
  for (auto a : kAllAttributes) row(label(a), stats.per_attribute[index(a)]);
  row("Total", stats.total);
  return os.str();
}

RawRecord raw_record_from_json(const json& j) {
  RawRecord r;
  r.image_id = required_id(j);
  r.image_path = optional_path(j);
  if (!j.contains("comments")) throw DataError("missing field comments");
  r.comments = string_list(j["comments"], "comments");
  r.global_score = optional_score(j, "global_score");
  return r;
}

FullRecord full_record_from_json(const json& j) {
  FullRecord r;
  r.image_id = required_id(j);
  r.image_path = optional_path(j);
  r.global_score = optional_score(j, "global_score");
  if (j.contains("captions")) {
    if (!j["captions"].is_object()) throw DataError("captions must be an object");
    for (const auto& [key, v] : j["captions"].items()) {
      auto a = parse_source_attribute(key);
      if (!a) throw DataError("unknown source attribute " + key);
      r.captions[index(*a)] = string_list(v, "captions." + key);
    }
  }
  if (j.contains("scores")) {
    if (!j["scores"].is_object()) throw DataError("scores must be an object");
    for (const auto& [key, v] : j["scores"].items()) {
      auto a = parse_source_attribute(key);
      if (!a) throw DataError("unknown source attribute " + key);
      if (!v.is_null()) r.scores[index(*a)] = checked_score(v, "scores." + key);
    }
  }
  return r;
}

AttributedRecord attributed_record_from_json(const json& j) {
  AttributedRecord r;
  r.image_id = required_id(j);
  r.image_path = optional_path(j);
  r.global_score = optional_score(j, "global_score");
  if (j.contains("captions")) {
    if (!j["captions"].is_object()) throw DataError("captions must be an object");
    for (const auto& [key, v] : j["captions"].items()) {
      auto a = parse_attribute(key);
      if (!a) throw DataError("unknown attribute " + key);
      r.captions[index(*a)] = string_list(v, "captions." + key);
    }
  }
  if (j.contains("scores")) {
    if (!j["scores"].is_object()) throw DataError("scores must be an object");
    for (const auto& [key, v] : j["scores"].items()) {
      auto a = parse_attribute(key);
      if (!a) throw DataError("unknown attribute " + key);
      if (!v.is_null()) r.scores[index(*a)] = checked_score(v, "scores." + key);
    }
  }
  if (!r.has_any_caption()) throw DataError("record " + r.image_id + " has no captions");
  return r;
}

json to_json(const AttributedRecord& r) {
  json j;
  j["image_id"] = r.image_id;
  if (r.image_path) j["image_path"] = *r.image_path;
  json caps = json::object();
  json scores = json::object();
  for (auto a : kAllAttributes) {
    if (r.has_captions(a)) caps[std::string(name(a))] = r.captions[index(a)];
    if (r.scores[index(a)]) scores[std::string(name(a))] = *r.scores[index(a)];
  }
  j["captions"] = std::move(caps);
  if (!scores.empty()) j["scores"] = std::move(scores);
  if (r.global_score) j["global_score"] = *r.global_score;
  return j;
}

std::vector<RawRecord> read_raw_corpus(const std::filesystem::path& path) {
  return read_jsonl<RawRecord>(path, raw_record_from_json);
}

std::vector<FullRecord> read_full_corpus(const std::filesystem::path& path) {
  return read_jsonl<FullRecord>(path, full_record_from_json);
}

std::vector<AttributedRecord> read_attributed(const std::filesystem::path& path) {
  return read_jsonl<AttributedRecord>(path, attributed_record_from_json);
}

void write_attributed(const std::filesystem::path& path, const std::vector<AttributedRecord>& ds) {
  std::string out;
  for (const auto& r : ds) {
    out += to_json(r).dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace aman
