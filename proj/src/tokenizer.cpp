#include "aman/tokenizer.hpp"

#include <sstream>

namespace aman {

namespace {
constexpr std::string_view kStopwordData =
#include "aman/stopwords.inc"
    ;
constexpr std::string_view kSynonymData =
#include "aman/synonyms.inc"
    ;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}
}  // namespace

std::set<std::string> parse_word_list(std::string_view text) {
  std::set<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto w = trim(line);
    if (!w.empty()) out.insert(w);
  }
  return out;
}

std::map<std::string, std::string> parse_synonyms(std::string_view text) {
  std::map<std::string, std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string from, to;
    if (fields >> from >> to) out[from] = to;
  }
  return out;
}

std::set<std::string> default_stopwords() { return parse_word_list(kStopwordData); }
std::map<std::string, std::string> default_synonyms() { return parse_synonyms(kSynonymData); }

Tokenizer::Tokenizer() : Tokenizer(default_stopwords(), default_synonyms(), true) {}

Tokenizer::Tokenizer(std::set<std::string> stopwords, std::map<std::string, std::string> synonyms,
                     bool remove_stopwords)
    : stopwords_(std::move(stopwords)),
      synonyms_(std::move(synonyms)),
      remove_stopwords_(remove_stopwords) {}

Tokenizer Tokenizer::for_captions() { return Tokenizer(default_stopwords(), default_synonyms(), false); }

std::vector<std::string> Tokenizer::tokenize(std::string_view text) const {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (auto it = synonyms_.find(cur); it != synonyms_.end()) cur = it->second;
    if (!(remove_stopwords_ && stopwords_.count(cur))) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c >= 0x80 || (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z')) {
      cur.push_back(ch);
    } else if (c >= 'A' && c <= 'Z') {
      cur.push_back(static_cast<char>(c - 'A' + 'a'));
    } else if (c == '\'') {
      continue;
    } else {
      flush();
    }
  }
  flush();
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

}  // namespace aman
