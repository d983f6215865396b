#pragma once

// Small synthetic corpora with learnable structure: every class (or the
// machine-written part of a boundary text) draws part of its tokens from its
// own pseudo-word pool, the rest from a shared pool.

#include <random>
#include <string>
#include <vector>

#include "mgtd/corpus.hpp"
#include "mgtd/types.hpp"

namespace mgtd::toy {

inline const std::vector<std::string>& generator_names() {
  static const std::vector<std::string> names{"human", "chatGPT", "cohere", "davinci", "bloomz", "dolly"};
  return names;
}

struct ToyOptions {
  int min_tokens = 20;
  int max_tokens = 60;
  double signature_rate = 0.5;
  int pool_size = 10;
};

namespace detail {

inline std::string pseudo_word(int pool, int index) {
  static const char* syllables[] = {"ka", "lo", "mi", "ne", "su", "ta", "ro", "vi", "de", "pa", "zu", "fe"};
  std::string w;
  int x = pool * 97 + index * 13 + 7;
  for (int i = 0; i < 3; ++i) {
    w += syllables[x % 12];
    x = x / 12 + (i + 1) * 5 + pool;
  }
  return w + std::to_string(pool) + std::to_string(index);
}

inline std::string draw(std::mt19937_64& rng, int pool, const ToyOptions& o) {
  return pseudo_word(pool, static_cast<int>(rng() % static_cast<std::uint64_t>(o.pool_size)));
}

inline int draw_length(std::mt19937_64& rng, const ToyOptions& o) {
  return o.min_tokens + static_cast<int>(rng() % static_cast<std::uint64_t>(o.max_tokens - o.min_tokens + 1));
}

/// Token from the class pool with probability signature_rate, else from the shared pool (-1 -> pool 0).
inline std::string token_for(std::mt19937_64& rng, int cls, const ToyOptions& o) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return u < o.signature_rate ? draw(rng, cls + 1, o) : draw(rng, 0, o);
}

}  // namespace detail

/// Balanced classification corpus for tasks A-mono, A-multi and B.
inline corpus::RecordList classification(Task task, std::size_t n, std::uint64_t seed, const ToyOptions& o = {}) {
  if (task == Task::C) throw Error("use toy::boundary for the boundary task");
  std::mt19937_64 rng(seed);
  const int classes = num_labels(task);
  const auto& gens = generator_names();
  const std::vector<std::string> languages{"english", "indonesian", "russian", "urdu"};
  corpus::RecordList out;
  for (std::size_t i = 0; i < n; ++i) {
    corpus::TextRecord r;
    r.id = "toy-" + std::to_string(i);
    r.label = static_cast<int>(i % static_cast<std::size_t>(classes));
    r.generator = task == Task::B ? gens[static_cast<std::size_t>(r.label)]
                  : r.label == 0  ? "human"
                                  : gens[1 + (i / 2) % 5];
    r.source = "toy";
    if (task == Task::AMulti) r.language = languages[(i / 2) % languages.size()];
    const int len = detail::draw_length(rng, o);
    std::vector<std::string> tokens;
    for (int t = 0; t < len; ++t) tokens.push_back(detail::token_for(rng, r.label, o));
    r.text = unicode::join(tokens);
    out.push_back(std::move(r));
  }
  return out;
}

/// Boundary corpus: human tokens up to the boundary, machine tokens after it.
inline corpus::RecordList boundary(std::size_t n, std::uint64_t seed, const ToyOptions& o = {}) {
  std::mt19937_64 rng(seed);
  corpus::RecordList out;
  for (std::size_t i = 0; i < n; ++i) {
    corpus::TextRecord r;
    r.id = "toy-c-" + std::to_string(i);
    r.generator = generator_names()[1 + i % 5];
    r.source = "toy";
    const int len = detail::draw_length(rng, o);
    r.label = static_cast<int>(rng() % static_cast<std::uint64_t>(len + 1));
    std::vector<std::string> tokens;
    for (int t = 0; t < len; ++t) tokens.push_back(detail::token_for(rng, t < r.label ? 0 : 1, o));
    r.text = unicode::join(tokens);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mgtd::toy
