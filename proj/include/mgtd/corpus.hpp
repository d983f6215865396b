#pragma once

// Corpus handling: JSON-lines loading, subtask-B -> A relabeling, merge with
// deduplication, seeded train/validation split, boundary <-> tag conversion,
// and the word/char lookup tables used by the taggers and the tiny encoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/types.hpp"
#include "mgtd/unicode.hpp"

namespace mgtd::corpus {

struct TextRecord {
  std::string id;
  std::string text;
  /// 0/1 for subtask A, 0..5 for subtask B, boundary token index for subtask C.
  int label = 0;
  std::string generator;
  std::string source;
  std::string language;

  int boundary_index() const { return label; }
};

using RecordList = std::vector<TextRecord>;

struct DatasetSplit {
  RecordList train;
  RecordList validation;
  std::uint64_t seed = 0;
  double ratio = 0.8;
};

struct TokenTagSequence {
  std::vector<std::string> tokens;
  std::vector<int> tags;
};

/// Corpus error carrying the 1-based line number it was raised at (0 if none).
class CorpusError : public Error {
 public:
  CorpusError(std::size_t line, const std::string& what)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline void validate_record(const TextRecord& r, Task task, std::size_t line = 0) {
  if (unicode::is_blank(r.text)) throw CorpusError(line, "empty text for id " + r.id);
  if (task == Task::C) {
    const auto n = static_cast<int>(unicode::count_tokens(r.text));
    if (r.label < 0 || r.label > n)
      throw CorpusError(line, "boundary index " + std::to_string(r.label) + " outside [0, " + std::to_string(n) + "]");
  } else if (r.label < 0 || r.label >= num_labels(task)) {
    throw CorpusError(line, "label " + std::to_string(r.label) + " outside label set of task " +
                                std::string(task_name(task)));
  }
}

inline TextRecord parse_record(const nlohmann::json& obj, Task task, std::size_t line = 0) {
  if (!obj.is_object()) throw CorpusError(line, "expected a JSON object");
  for (const char* key : {"id", "text", "label"})
    if (!obj.contains(key)) throw CorpusError(line, std::string("missing field: ") + key);

  TextRecord r;
  const auto& id = obj.at("id");
  r.id = id.is_string() ? id.get<std::string>() : id.dump();
  if (!obj.at("text").is_string()) throw CorpusError(line, "field text must be a string");
  r.text = obj.at("text").get<std::string>();
  if (!obj.at("label").is_number_integer()) throw CorpusError(line, "field label must be an integer");
  r.label = obj.at("label").get<int>();
  auto optional_string = [&](const char* key) -> std::string {
    if (!obj.contains(key) || obj.at(key).is_null()) return {};
    const auto& v = obj.at(key);
    return v.is_string() ? v.get<std::string>() : v.dump();
  };
  r.generator = optional_string("model");
  r.source = optional_string("source");
  r.language = optional_string("language");
  validate_record(r, task, line);
  return r;
}

/// One record per non-blank line, order preserved; `model` is exposed as `generator`.
inline RecordList load_corpus(const std::filesystem::path& path, Task task) {
  std::ifstream in(path);
  if (!in) throw CorpusError(0, "cannot open corpus file " + path.string());
  RecordList out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (unicode::is_blank(line)) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw CorpusError(lineno, std::string("malformed JSON: ") + e.what());
    }
    out.push_back(parse_record(obj, task, lineno));
  }
  return out;
}

inline nlohmann::json record_to_json(const TextRecord& r) {
  nlohmann::json obj = {{"id", r.id}, {"text", r.text}, {"label", r.label}, {"model", r.generator}, {"source", r.source}};
  if (!r.language.empty()) obj["language"] = r.language;
  return obj;
}

inline void write_corpus(const std::filesystem::path& path, const RecordList& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

/// Collapses generator labels to the binary scheme: "human" -> 0, anything else -> 1.
inline RecordList relabel_to_binary(RecordList records) {
  for (auto& r : records) r.label = unicode::to_lower(r.generator) == "human" ? 0 : 1;
  return records;
}

/// Dedup key: NFC-normalized, whitespace-collapsed text.
inline std::string dedup_key(std::string_view text) { return unicode::collapse_whitespace(unicode::nfc(text)); }

/// primary ++ extra with duplicate texts removed, first occurrence wins.  An
/// extra record whose id is already taken gets a "#n" suffix so ids stay unique.
inline RecordList merge_dedup(const RecordList& primary, const RecordList& extra) {
  RecordList out;
  out.reserve(primary.size() + extra.size());
  std::unordered_set<std::string> seen_text;
  std::unordered_set<std::string> seen_id;
  auto push = [&](const TextRecord& r) {
    if (!seen_text.insert(dedup_key(r.text)).second) return;
    TextRecord copy = r;
    if (seen_id.contains(copy.id)) {
      for (int n = 1;; ++n) {
        std::string candidate = r.id + "#" + std::to_string(n);
        if (!seen_id.contains(candidate)) {
          copy.id = std::move(candidate);
          break;
        }
      }
    }
    seen_id.insert(copy.id);
    out.push_back(std::move(copy));
  };
  for (const auto& r : primary) push(r);
  for (const auto& r : extra) push(r);
  return out;
}

/// Fisher-Yates permutation of [0, n) driven by a 64-bit Mersenne twister.
/// Written out so that the permutation is identical across standard libraries.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline std::size_t train_size(std::size_t n, double ratio) {
  auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9));
  return std::clamp<std::size_t>(k, 1, n - 1);
}

inline DatasetSplit split_dataset(const RecordList& records, double ratio, std::uint64_t seed) {
  if (records.size() < 2) throw Error("split needs at least 2 records, got " + std::to_string(records.size()));
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error("split ratio must be in (0, 1)");
  std::unordered_set<std::string> ids;
  for (const auto& r : records)
    if (!ids.insert(r.id).second) throw Error("duplicate record id in split input: " + r.id);

  const auto perm = seeded_permutation(records.size(), seed);
  const auto k = train_size(records.size(), ratio);
  DatasetSplit split;
  split.seed = seed;
  split.ratio = ratio;
  split.train.reserve(k);
  split.validation.reserve(records.size() - k);
  for (std::size_t i = 0; i < perm.size(); ++i)
    (i < k ? split.train : split.validation).push_back(records[perm[i]]);
  return split;
}

inline nlohmann::json split_manifest(const DatasetSplit& split) {
  nlohmann::json train_ids = nlohmann::json::array();
  nlohmann::json val_ids = nlohmann::json::array();
  for (const auto& r : split.train) train_ids.push_back(r.id);
  for (const auto& r : split.validation) val_ids.push_back(r.id);
  return {{"seed", split.seed},
          {"ratio", split.ratio},
          {"train_ids", train_ids},
          {"validation_ids", val_ids}};
}

inline TokenTagSequence boundary_to_tags(std::string_view text, int boundary_index) {
  TokenTagSequence seq;
  seq.tokens = unicode::split_whitespace(text);
  const auto n = static_cast<int>(seq.tokens.size());
  if (boundary_index < 0 || boundary_index > n)
    throw Error("boundary index " + std::to_string(boundary_index) + " outside [0, " + std::to_string(n) + "]");
  seq.tags.resize(seq.tokens.size());
  for (int i = 0; i < n; ++i) seq.tags[static_cast<std::size_t>(i)] = i < boundary_index ? 0 : 1;
  return seq;
}

/// Word and character lookup tables.  Ids 0 and 1 are PAD and UNK in both tables.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;

  Vocab() : words_{"[PAD]", "[UNK]"}, chars_{"[PAD]", "[UNK]"} {}

  TokenId word_id(const std::string& word) const {
    auto it = word_index_.find(word);
    return it == word_index_.end() ? kUnk : it->second;
  }
  TokenId char_id(char32_t cp) const {
    auto it = char_index_.find(cp);
    return it == char_index_.end() ? kUnk : it->second;
  }
  const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::string& char_symbol(TokenId id) const { return chars_.at(static_cast<std::size_t>(id)); }
  std::size_t word_count() const { return words_.size(); }
  std::size_t char_count() const { return chars_.size(); }
  bool contains_word(const std::string& w) const { return word_index_.contains(w); }

  void add_word(const std::string& w) {
    if (word_index_.contains(w)) return;
    word_index_.emplace(w, static_cast<TokenId>(words_.size()));
    words_.push_back(w);
  }
  void add_char(char32_t cp) {
    if (char_index_.contains(cp)) return;
    char_index_.emplace(cp, static_cast<TokenId>(chars_.size()));
    chars_.push_back(unicode::to_utf8(cp));
  }

  nlohmann::json to_json() const {
    return {{"words", std::vector<std::string>(words_.begin() + 2, words_.end())},
            {"chars", std::vector<std::string>(chars_.begin() + 2, chars_.end())}};
  }
  static Vocab from_json(const nlohmann::json& j) {
    Vocab v;
    for (const auto& w : j.at("words")) v.add_word(w.get<std::string>());
    for (const auto& c : j.at("chars")) {
      const auto cps = unicode::code_points(c.get<std::string>());
      if (cps.size() != 1) throw Error("vocab char entry must be a single code point");
      v.add_char(cps.front());
    }
    return v;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> word_index_;
  std::vector<std::string> chars_;
  std::unordered_map<char32_t, TokenId> char_index_;
};

/// Words with frequency >= min_freq, ordered by descending frequency then
/// bytewise; every character seen in the corpus gets a char id, same ordering.
inline Vocab build_vocab(const RecordList& records, int min_freq = 1) {
  std::unordered_map<std::string, std::size_t> word_freq;
  std::unordered_map<char32_t, std::size_t> char_freq;
  for (const auto& r : records) {
    for (const auto& tok : unicode::split_whitespace(r.text)) {
      ++word_freq[tok];
      for (char32_t cp : unicode::code_points(tok)) ++char_freq[cp];
    }
  }
  if (word_freq.empty()) throw Error("cannot build a vocabulary from an empty corpus");

  std::vector<std::pair<std::string, std::size_t>> words(word_freq.begin(), word_freq.end());
  std::sort(words.begin(), words.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::pair<char32_t, std::size_t>> chars(char_freq.begin(), char_freq.end());
  std::sort(chars.begin(), chars.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocab v;
  for (const auto& [w, f] : words)
    if (f >= static_cast<std::size_t>(std::max(min_freq, 1))) v.add_word(w);
  for (const auto& [c, f] : chars) v.add_char(c);
  return v;
}

}  // namespace mgtd::corpus
