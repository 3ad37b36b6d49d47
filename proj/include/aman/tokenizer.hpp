#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace aman {

/// Lowercases, strips punctuation, splits on whitespace, drops stopwords and
/// applies a synonym map. Apostrophes are deleted ("it's" -> "its"); every
/// other ASCII non-alphanumeric byte separates tokens. Bytes >= 0x80 are kept
/// so UTF-8 words survive intact.
class Tokenizer {
 public:
  // Shipped stopword list and synonym map.
  Tokenizer();
  Tokenizer(std::set<std::string> stopwords, std::map<std::string, std::string> synonyms,
            bool remove_stopwords = true);

  // Same normalization but keeps function words; used for caption modelling
  // and evaluation where sentence structure matters.
  static Tokenizer for_captions();

  std::vector<std::string> tokenize(std::string_view text) const;

  const std::set<std::string>& stopwords() const { return stopwords_; }
  const std::map<std::string, std::string>& synonyms() const { return synonyms_; }
  bool removes_stopwords() const { return remove_stopwords_; }

 private:
  std::set<std::string> stopwords_;
  std::map<std::string, std::string> synonyms_;
  bool remove_stopwords_ = true;
};

std::set<std::string> default_stopwords();
std::map<std::string, std::string> default_synonyms();

// One word per line, '#' starts a comment.
std::set<std::string> parse_word_list(std::string_view text);
// "variant<TAB or space>canonical" per line.
std::map<std::string, std::string> parse_synonyms(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

}  // namespace aman
