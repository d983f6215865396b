#pragma once

// Text preprocessing levels and long-input handling (truncation, chunking,
// chunk pooling).

#include <algorithm>
#include <array>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mgtd/types.hpp"
#include "mgtd/unicode.hpp"

namespace mgtd::textprep {

enum class PreprocessLevel { None, Light, Heavy };

inline PreprocessLevel parse_level(std::string_view s) {
  if (s == "none" || s == "None") return PreprocessLevel::None;
  if (s == "light" || s == "Light") return PreprocessLevel::Light;
  if (s == "heavy" || s == "Heavy") return PreprocessLevel::Heavy;
  throw Error("unknown preprocess level: " + std::string(s));
}

inline std::string_view level_name(PreprocessLevel level) {
  switch (level) {
    case PreprocessLevel::None: return "none";
    case PreprocessLevel::Light: return "light";
    case PreprocessLevel::Heavy: return "heavy";
  }
  return "?";
}

namespace detail {

inline constexpr std::array<std::string_view, 12> kControlTokens = {
    "<pad>", "<s>", "</s>", "<unk>", "<mask>", "<|endoftext|>", "<sep>", "[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]"};

inline std::string strip_control_tokens(std::string text) {
  for (auto tok : kControlTokens) {
    std::size_t pos = 0;
    while ((pos = text.find(tok, pos)) != std::string::npos) text.replace(pos, tok.size(), " ");
  }
  return text;
}

inline std::string strip_urls_and_emails(const std::string& text) {
  static const std::regex url(R"((?:https?|ftp)://\S+|www\.\S+)", std::regex::icase);
  static const std::regex email(R"([A-Za-z0-9._%+\-]+@[A-Za-z0-9.\-]+\.[A-Za-z]{2,})");
  return std::regex_replace(std::regex_replace(text, url, " "), email, " ");
}

inline std::string below_thousand(int n) {
  static constexpr std::array<std::string_view, 20> ones = {
      "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
      "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen"};
  static constexpr std::array<std::string_view, 10> tens = {
      "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"};
  std::string out;
  if (n >= 100) {
    out += ones[static_cast<std::size_t>(n / 100)];
    out += " hundred";
    n %= 100;
    if (n == 0) return out;
    out += ' ';
  }
  if (n < 20) {
    out += ones[static_cast<std::size_t>(n)];
  } else {
    out += tens[static_cast<std::size_t>(n / 10)];
    if (n % 10) {
      out += ' ';
      out += ones[static_cast<std::size_t>(n % 10)];
    }
  }
  return out;
}

}  // namespace detail

/// English cardinal words for a base-10 digit string; nullopt above 10^18.
inline std::optional<std::string> number_to_words(std::string_view digits) {
  if (digits.empty() || !std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; }))
    return std::nullopt;
  auto first = digits.find_first_not_of('0');
  if (first == std::string_view::npos) return std::string("zero");
  digits = digits.substr(first);
  if (digits.size() > 18) return std::nullopt;
  unsigned long long value = std::stoull(std::string(digits));
  static constexpr std::array<std::string_view, 6> scales = {"", " thousand", " million", " billion", " trillion",
                                                             " quadrillion"};
  std::vector<std::string> groups;
  for (std::size_t scale = 0; value > 0; ++scale, value /= 1000) {
    const int part = static_cast<int>(value % 1000);
    if (part) groups.push_back(detail::below_thousand(part) + std::string(scales[scale]));
  }
  std::reverse(groups.begin(), groups.end());
  return unicode::join(groups);
}

/// None: identity.  Light: lowercase, then drop every character that is not
/// a letter or whitespace.  Heavy: drop model control tokens, URLs and emails,
/// drop special characters (decimal points between digits are kept), and
/// spell out standalone integers.  Light and Heavy collapse whitespace.
inline std::string preprocess(std::string_view text, PreprocessLevel level) {
  if (level == PreprocessLevel::None) return std::string(text);

  if (level == PreprocessLevel::Light) {
    std::string out;
    for (char32_t cp : unicode::code_points(unicode::to_lower(text))) {
      if (unicode::is_space(cp)) out += ' ';
      else if (unicode::is_alnum(cp) && !unicode::is_digit(cp)) unicode::append_utf8(out, cp);
    }
    return unicode::collapse_whitespace(out);
  }

  std::string stage = detail::strip_urls_and_emails(detail::strip_control_tokens(std::string(text)));
  const auto cps = unicode::code_points(stage);
  std::string cleaned;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t cp = cps[i];
    if (unicode::is_space(cp)) {
      cleaned += ' ';
    } else if (unicode::is_alnum(cp)) {
      unicode::append_utf8(cleaned, cp);
    } else if (cp == U'.' && i > 0 && i + 1 < cps.size() && unicode::is_digit(cps[i - 1]) &&
               unicode::is_digit(cps[i + 1])) {
      cleaned += '.';
    }
  }
  auto tokens = unicode::split_whitespace(cleaned);
  for (auto& tok : tokens)
    if (auto words = number_to_words(tok)) tok = *words;
  return unicode::join(tokens);
}

enum class TruncationKind { HeadOnly, TailOnly, HeadAndTail, Hierarchical };
enum class PoolMode { Mean, Max };

struct TruncationStrategy {
  TruncationKind kind = TruncationKind::HeadOnly;
  int head_len = 128;
  int tail_len = 384;
  int chunk_len = 512;
  PoolMode pool = PoolMode::Mean;

  static TruncationStrategy head_only() { return {TruncationKind::HeadOnly}; }
  static TruncationStrategy tail_only() { return {TruncationKind::TailOnly}; }
  static TruncationStrategy head_and_tail(int head = 128, int tail = 384) {
    return {TruncationKind::HeadAndTail, head, tail};
  }
  static TruncationStrategy hierarchical(PoolMode pool, int chunk_len = 512) {
    return {TruncationKind::Hierarchical, 128, 384, chunk_len, pool};
  }

  void validate() const {
    if (kind == TruncationKind::HeadAndTail && (head_len < 0 || tail_len < 0 || head_len + tail_len <= 0))
      throw Error("head-and-tail lengths must be non-negative with a positive sum");
    if (kind == TruncationKind::Hierarchical && chunk_len <= 0) throw Error("chunk_len must be positive");
  }
};

inline constexpr int kDefaultBudget = 510;

inline TruncationKind parse_truncation(std::string_view s) {
  if (s == "head" || s == "head_only") return TruncationKind::HeadOnly;
  if (s == "tail" || s == "tail_only") return TruncationKind::TailOnly;
  if (s == "head_tail" || s == "head_and_tail") return TruncationKind::HeadAndTail;
  if (s == "hierarchical") return TruncationKind::Hierarchical;
  throw Error("unknown long-text strategy: " + std::string(s));
}

inline std::string_view truncation_name(TruncationKind k) {
  switch (k) {
    case TruncationKind::HeadOnly: return "head";
    case TruncationKind::TailOnly: return "tail";
    case TruncationKind::HeadAndTail: return "head_tail";
    case TruncationKind::Hierarchical: return "hierarchical";
  }
  return "?";
}

inline PoolMode parse_pool(std::string_view s) {
  if (s == "mean") return PoolMode::Mean;
  if (s == "max") return PoolMode::Max;
  throw Error("unknown pool mode: " + std::string(s));
}

inline std::string_view pool_name(PoolMode m) { return m == PoolMode::Mean ? "mean" : "max"; }

/// Effective content budget of a truncation strategy: `budget` (default 510)
/// for head/tail, head_len + tail_len for head-and-tail.
inline int effective_budget(const TruncationStrategy& s, std::optional<int> budget = std::nullopt) {
  if (s.kind == TruncationKind::HeadAndTail) {
    const int sum = s.head_len + s.tail_len;
    if (budget && *budget != sum)
      throw Error("head-and-tail budget " + std::to_string(*budget) + " differs from head_len + tail_len = " +
                  std::to_string(sum));
    return sum;
  }
  const int b = budget.value_or(kDefaultBudget);
  if (b <= 0) throw Error("truncation budget must be positive");
  return b;
}

inline std::vector<TokenId> truncate(std::span<const TokenId> ids, const TruncationStrategy& strategy,
                                     std::optional<int> budget = std::nullopt) {
  strategy.validate();
  if (strategy.kind == TruncationKind::Hierarchical)
    throw Error("hierarchical strategy is not a truncation; use chunk() and pool_chunks()");
  const auto b = static_cast<std::size_t>(effective_budget(strategy, budget));
  if (ids.size() <= b) return {ids.begin(), ids.end()};
  switch (strategy.kind) {
    case TruncationKind::HeadOnly: return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(b)};
    case TruncationKind::TailOnly: return {ids.end() - static_cast<std::ptrdiff_t>(b), ids.end()};
    case TruncationKind::HeadAndTail: {
      std::vector<TokenId> out(ids.begin(), ids.begin() + strategy.head_len);
      out.insert(out.end(), ids.end() - strategy.tail_len, ids.end());
      return out;
    }
    default: break;
  }
  throw Error("unknown truncation strategy");
}

/// ceil(L / chunk_len) consecutive chunks; only the last may be short.
inline std::vector<std::vector<TokenId>> chunk(std::span<const TokenId> ids, int chunk_len = 512) {
  if (chunk_len <= 0) throw Error("chunk_len must be positive");
  if (ids.empty()) throw Error("cannot chunk an empty id sequence");
  std::vector<std::vector<TokenId>> out;
  const auto step = static_cast<std::size_t>(chunk_len);
  out.reserve((ids.size() + step - 1) / step);
  for (std::size_t start = 0; start < ids.size(); start += step) {
    const auto end = std::min(ids.size(), start + step);
    out.emplace_back(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

inline Eigen::VectorXd pool_chunks(const std::vector<Eigen::VectorXd>& chunks, PoolMode mode) {
  if (chunks.empty()) throw Error("pool_chunks needs at least one vector");
  const auto dim = chunks.front().size();
  for (const auto& v : chunks)
    if (v.size() != dim) throw Error("pool_chunks dimension mismatch");
  Eigen::VectorXd out = chunks.front();
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    if (mode == PoolMode::Mean) out += chunks[i];
    else out = out.cwiseMax(chunks[i]);
  }
  if (mode == PoolMode::Mean) out /= static_cast<double>(chunks.size());
  return out;
}

/// Gradient of pool_chunks w.r.t. each chunk.  Max routes to the first chunk
/// attaining the maximum.
inline std::vector<Eigen::VectorXd> pool_chunks_backward(const std::vector<Eigen::VectorXd>& chunks, PoolMode mode,
                                                         const Eigen::VectorXd& grad) {
  std::vector<Eigen::VectorXd> out(chunks.size(), Eigen::VectorXd::Zero(grad.size()));
  if (mode == PoolMode::Mean) {
    for (auto& g : out) g = grad / static_cast<double>(chunks.size());
    return out;
  }
  for (Eigen::Index d = 0; d < grad.size(); ++d) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < chunks.size(); ++i)
      if (chunks[i](d) > chunks[best](d)) best = i;
    out[best](d) = grad(d);
  }
  return out;
}

}  // namespace mgtd::textprep
