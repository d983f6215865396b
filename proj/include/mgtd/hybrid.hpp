#pragma once

// Token tagger for human -> machine boundary detection: character CNN
// features concatenated with word embeddings, a stacked bidirectional LSTM,
// the fully connected block, and either per-token argmax or CRF decoding.

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/clshead.hpp"
#include "mgtd/corpus.hpp"
#include "mgtd/crf.hpp"
#include "mgtd/nn.hpp"
#include "mgtd/types.hpp"
#include "mgtd/unicode.hpp"

namespace mgtd::hybrid {

using nn::Matrix;
using nn::Vector;

enum class DecodeMethod { Direct, Crf };

inline DecodeMethod parse_method(std::string_view s) {
  if (s == "direct" || s == "method1") return DecodeMethod::Direct;
  if (s == "crf" || s == "method2") return DecodeMethod::Crf;
  throw Error("unknown decode method: " + std::string(s));
}
inline std::string_view method_name(DecodeMethod m) { return m == DecodeMethod::Direct ? "direct" : "crf"; }

struct HybridConfig {
  int char_emb_dim = 10;
  int char_conv_kernel = 3;
  int char_conv_filters = 20;
  double char_dropout = 0.5;
  int word_emb_dim = 300;
  int lstm_layers = 2;
  int lstm_hidden = 32;
  int fc_hidden = 32;
  double fc_dropout = 0.5;
  nn::NormKind fc_norm = nn::NormKind::Layer;
  int num_tags = 2;
  int max_tokens = 1024;
  int max_chars_per_token = 25;
  double init_range = 0.5;
  DecodeMethod method = DecodeMethod::Crf;

  void validate() const {
    for (int v : {char_emb_dim, char_conv_kernel, char_conv_filters, word_emb_dim, lstm_layers, lstm_hidden, fc_hidden,
                  max_tokens, max_chars_per_token})
      if (v <= 0) throw Error("hybrid tagger dimensions must be positive");
    if (max_chars_per_token < char_conv_kernel) throw Error("max_chars_per_token must be >= char_conv_kernel");
    if (num_tags != 2) throw Error("the boundary tagger uses exactly 2 tags");
    if (char_dropout < 0 || char_dropout >= 1 || fc_dropout < 0 || fc_dropout >= 1)
      throw Error("dropout probabilities must be in [0, 1)");
    if (init_range <= 0) throw Error("init_range must be positive");
  }

  nlohmann::json to_json() const {
    return {{"char_emb_dim", char_emb_dim},   {"char_conv_kernel", char_conv_kernel},
            {"char_conv_filters", char_conv_filters}, {"char_dropout", char_dropout},
            {"word_emb_dim", word_emb_dim},   {"lstm_layers", lstm_layers},
            {"lstm_hidden", lstm_hidden},     {"fc_hidden", fc_hidden},
            {"fc_dropout", fc_dropout},       {"fc_norm", nn::norm_name(fc_norm)},
            {"num_tags", num_tags},           {"max_tokens", max_tokens},
            {"max_chars_per_token", max_chars_per_token}, {"init_range", init_range},
            {"method", method_name(method)}};
  }

  static HybridConfig from_json(const nlohmann::json& j) {
    HybridConfig c;
    c.char_emb_dim = j.value("char_emb_dim", c.char_emb_dim);
    c.char_conv_kernel = j.value("char_conv_kernel", c.char_conv_kernel);
    c.char_conv_filters = j.value("char_conv_filters", c.char_conv_filters);
    c.char_dropout = j.value("char_dropout", c.char_dropout);
    c.word_emb_dim = j.value("word_emb_dim", c.word_emb_dim);
    c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
    c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
    c.fc_hidden = j.value("fc_hidden", c.fc_hidden);
    c.fc_dropout = j.value("fc_dropout", c.fc_dropout);
    c.fc_norm = nn::parse_norm(j.value("fc_norm", std::string(nn::norm_name(c.fc_norm))));
    c.num_tags = j.value("num_tags", c.num_tags);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.max_chars_per_token = j.value("max_chars_per_token", c.max_chars_per_token);
    c.init_range = j.value("init_range", c.init_range);
    c.method = parse_method(j.value("method", std::string(method_name(c.method))));
    return c;
  }
};

// ---------------------------------------------------------------------------
// Input encoding.

struct EncodedTokens {
  std::vector<TokenId> word_ids;
  /// One row per token, padded with PAD to max_chars_per_token.
  std::vector<std::vector<TokenId>> char_ids;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return word_ids.size(); }
};

inline EncodedTokens encode_tokens(std::span<const std::string> tokens, const corpus::Vocab& vocab,
                                   const HybridConfig& config) {
  if (tokens.empty()) throw Error("cannot encode an empty token list");
  const auto n = std::min(tokens.size(), static_cast<std::size_t>(config.max_tokens));
  const auto width = static_cast<std::size_t>(config.max_chars_per_token);
  EncodedTokens out;
  out.word_ids.reserve(n);
  out.char_ids.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    out.word_ids.push_back(vocab.word_id(tokens[t]));
    std::vector<TokenId> row(width, corpus::Vocab::kPad);
    const auto cps = unicode::code_points(tokens[t]);
    for (std::size_t c = 0; c < std::min(width, cps.size()); ++c) row[c] = vocab.char_id(cps[c]);
    out.char_ids.push_back(std::move(row));
  }
  out.mask.assign(n, 1);
  return out;
}

/// Number of real characters in a padded row (everything before the first PAD).
inline int char_row_length(std::span<const TokenId> row) {
  const auto it = std::find(row.begin(), row.end(), corpus::Vocab::kPad);
  return static_cast<int>(it - row.begin());
}

// ---------------------------------------------------------------------------
// Character CNN: embed, 1D convolution over characters, max over windows.
// Max pooling covers the windows starting inside the token; a token shorter
// than the kernel still gets one window, padded with the PAD embedding.

class CharCnn {
 public:
  nn::Embedding embedding;
  nn::Param weight;  // filters x (kernel * char_dim), window laid out char-major
  nn::Param bias;    // filters x 1

  struct Cache {
    std::vector<int> argmax;  // per token, per filter: window start
    std::vector<std::vector<TokenId>> rows;
  };

  CharCnn() = default;
  CharCnn(const HybridConfig& cfg, Eigen::Index char_count, nn::Rng& rng)
      : embedding("tagger.char_emb", cfg.char_emb_dim, char_count, rng, -cfg.init_range, cfg.init_range),
        weight("tagger.char_conv.weight", cfg.char_conv_filters, cfg.char_conv_kernel * cfg.char_emb_dim),
        bias("tagger.char_conv.bias", cfg.char_conv_filters, 1),
        kernel_(cfg.char_conv_kernel) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.char_conv_kernel * cfg.char_emb_dim));
    nn::init_uniform(weight, rng, -bound, bound);
    nn::init_uniform(bias, rng, -bound, bound);
  }

  int kernel() const { return kernel_; }
  int filters() const { return static_cast<int>(weight.value.rows()); }

  /// Feature vector for one padded character row.
  Vector features(std::span<const TokenId> row, int* argmax_out = nullptr) const {
    const int k = kernel_;
    const auto dim = embedding.dim();
    if (static_cast<int>(row.size()) < k) throw Error("character row shorter than the convolution kernel");
    const int windows = std::max(char_row_length(row) - k + 1, 1);
    Matrix win(k * dim, windows);
    for (int p = 0; p < windows; ++p)
      for (int c = 0; c < k; ++c)
        win.block(c * dim, p, dim, 1) = embedding.table.value.col(row[static_cast<std::size_t>(p + c)]);
    const Matrix scores = (weight.value * win).colwise() + bias.value.col(0);
    Vector out(filters());
    for (Eigen::Index f = 0; f < scores.rows(); ++f) {
      Eigen::Index best = 0;
      for (Eigen::Index p = 1; p < scores.cols(); ++p)
        if (scores(f, p) > scores(f, best)) best = p;
      out(f) = scores(f, best);
      if (argmax_out) argmax_out[f] = static_cast<int>(best);
    }
    return out;
  }

  Matrix forward(const std::vector<std::vector<TokenId>>& rows, Cache* cache) const {
    Matrix out(filters(), static_cast<Eigen::Index>(rows.size()));
    if (cache) {
      cache->argmax.assign(rows.size() * static_cast<std::size_t>(filters()), 0);
      cache->rows = rows;
    }
    for (std::size_t t = 0; t < rows.size(); ++t)
      out.col(static_cast<Eigen::Index>(t)) =
          features(rows[t], cache ? cache->argmax.data() + t * static_cast<std::size_t>(filters()) : nullptr);
    return out;
  }

  void backward(const Cache& cache, const Matrix& dy) {
    const int k = kernel_;
    const auto dim = embedding.dim();
    const auto F = static_cast<std::size_t>(filters());
    for (std::size_t t = 0; t < cache.rows.size(); ++t) {
      const auto& row = cache.rows[t];
      for (std::size_t f = 0; f < F; ++f) {
        const double g = dy(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t));
        if (g == 0.0) continue;
        const int p = cache.argmax[t * F + f];
        bias.grad(static_cast<Eigen::Index>(f), 0) += g;
        for (int c = 0; c < k; ++c) {
          const TokenId id = row[static_cast<std::size_t>(p + c)];
          weight.grad.block(static_cast<Eigen::Index>(f), c * dim, 1, dim) += g * embedding.table.value.col(id).transpose();
          embedding.table.grad.col(id) +=
              g * weight.value.block(static_cast<Eigen::Index>(f), c * dim, 1, dim).transpose();
        }
      }
    }
  }

  void collect(nn::ParamList& out) {
    embedding.collect(out);
    out.push_back(&weight);
    out.push_back(&bias);
  }

 private:
  int kernel_ = 3;
};

// ---------------------------------------------------------------------------
// LSTM.  Gate rows are laid out [input; forget; cell; output].

class LstmDirection {
 public:
  nn::Param w;  // 4H x in
  nn::Param u;  // 4H x H
  nn::Param b;  // 4H x 1

  struct Cache {
    Matrix x;
    Matrix gates;  // 4H x T, post-activation
    Matrix c;      // H x T
    Matrix h;      // H x T
  };

  LstmDirection() = default;
  LstmDirection(const std::string& name, Eigen::Index in, Eigen::Index hidden, bool reverse, nn::Rng& rng)
      : w(name + ".w", 4 * hidden, in), u(name + ".u", 4 * hidden, hidden), b(name + ".b", 4 * hidden, 1),
        reverse_(reverse) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    nn::init_uniform(w, rng, -bound, bound);
    nn::init_uniform(u, rng, -bound, bound);
    nn::init_uniform(b, rng, -bound, bound);
  }

  Eigen::Index hidden() const { return u.value.cols(); }

  Matrix forward(const Matrix& x, Cache* cache) const {
    const auto H = hidden();
    const auto T = x.cols();
    Cache local;
    Cache& c = cache ? *cache : local;
    c.x = x;
    c.gates.resize(4 * H, T);
    c.c.resize(H, T);
    c.h.resize(H, T);
    const Matrix wx = (w.value * x).colwise() + b.value.col(0);
    Vector h_prev = Vector::Zero(H);
    Vector c_prev = Vector::Zero(H);
    for (Eigen::Index s = 0; s < T; ++s) {
      const Eigen::Index t = reverse_ ? T - 1 - s : s;
      Vector z = wx.col(t) + u.value * h_prev;
      auto sig = [](double v) { return nn::logistic(v); };
      Vector i = z.segment(0, H).unaryExpr(sig);
      Vector f = z.segment(H, H).unaryExpr(sig);
      Vector g = z.segment(2 * H, H).array().tanh().matrix();
      Vector o = z.segment(3 * H, H).unaryExpr(sig);
      Vector cell = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
      Vector h = o.cwiseProduct(cell.array().tanh().matrix());
      c.gates.col(t) << i, f, g, o;
      c.c.col(t) = cell;
      c.h.col(t) = h;
      h_prev = h;
      c_prev = cell;
    }
    return c.h;
  }

  Matrix backward(const Cache& c, const Matrix& dh_out) {
    const auto H = hidden();
    const auto T = c.x.cols();
    Matrix dz_all(4 * H, T);
    Vector dh_next = Vector::Zero(H);
    Vector dc_next = Vector::Zero(H);
    for (Eigen::Index s = T; s-- > 0;) {
      const Eigen::Index t = reverse_ ? T - 1 - s : s;
      const Eigen::Index t_prev = reverse_ ? t + 1 : t - 1;
      const bool has_prev = s > 0;
      const auto i = c.gates.col(t).segment(0, H).array();
      const auto f = c.gates.col(t).segment(H, H).array();
      const auto g = c.gates.col(t).segment(2 * H, H).array();
      const auto o = c.gates.col(t).segment(3 * H, H).array();
      const Eigen::ArrayXd tanh_c = c.c.col(t).array().tanh();
      const Eigen::ArrayXd c_prev = has_prev ? Eigen::ArrayXd(c.c.col(t_prev).array()) : Eigen::ArrayXd::Zero(H);
      const Eigen::ArrayXd dh = dh_out.col(t).array() + dh_next.array();
      const Eigen::ArrayXd dc = dh * o * (1.0 - tanh_c.square()) + dc_next.array();
      Vector dz(4 * H);
      dz.segment(0, H) = (dc * g * i * (1.0 - i)).matrix();
      dz.segment(H, H) = (dc * c_prev * f * (1.0 - f)).matrix();
      dz.segment(2 * H, H) = (dc * i * (1.0 - g.square())).matrix();
      dz.segment(3 * H, H) = (dh * tanh_c * o * (1.0 - o)).matrix();
      dz_all.col(t) = dz;
      if (has_prev) u.grad.noalias() += dz * c.h.col(t_prev).transpose();
      dh_next = u.value.transpose() * dz;
      dc_next = (dc * f).matrix();
    }
    w.grad.noalias() += dz_all * c.x.transpose();
    b.grad.col(0) += dz_all.rowwise().sum();
    return w.value.transpose() * dz_all;
  }

  void collect(nn::ParamList& out) { out.insert(out.end(), {&w, &u, &b}); }

 private:
  bool reverse_ = false;
};

struct BiLstmLayer {
  LstmDirection forward_dir;
  LstmDirection backward_dir;

  struct Cache {
    LstmDirection::Cache fwd;
    LstmDirection::Cache bwd;
  };

  BiLstmLayer() = default;
  BiLstmLayer(const std::string& name, Eigen::Index in, Eigen::Index hidden, nn::Rng& rng)
      : forward_dir(name + ".fwd", in, hidden, false, rng), backward_dir(name + ".bwd", in, hidden, true, rng) {}

  Matrix forward(const Matrix& x, Cache* cache) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    const Matrix hf = forward_dir.forward(x, &c.fwd);
    const Matrix hb = backward_dir.forward(x, &c.bwd);
    Matrix out(hf.rows() + hb.rows(), x.cols());
    out << hf, hb;
    return out;
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    const auto H = forward_dir.hidden();
    return forward_dir.backward(c.fwd, dy.topRows(H)) + backward_dir.backward(c.bwd, dy.bottomRows(H));
  }

  void collect(nn::ParamList& out) {
    forward_dir.collect(out);
    backward_dir.collect(out);
  }
};

// ---------------------------------------------------------------------------
// Decoding helpers.

/// Index of the first 1, or the length when there is none.
inline int tags_to_boundary(std::span<const int> tags) {
  const auto it = std::find(tags.begin(), tags.end(), 1);
  return static_cast<int>(it - tags.begin());
}

inline std::vector<int> argmax_rows(const crf::EmissionMatrix& emissions) {
  std::vector<int> out(static_cast<std::size_t>(emissions.rows()));
  for (Eigen::Index t = 0; t < emissions.rows(); ++t) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < emissions.cols(); ++k)
      if (emissions(t, k) > emissions(t, best)) best = k;
    out[static_cast<std::size_t>(t)] = static_cast<int>(best);
  }
  return out;
}

inline std::vector<int> decode(const crf::EmissionMatrix& emissions, DecodeMethod method,
                               const crf::CrfParams* crf_params = nullptr) {
  if (method == DecodeMethod::Direct) return argmax_rows(emissions);
  if (!crf_params) throw Error("CRF decoding requires transition parameters");
  return crf::viterbi(emissions, *crf_params);
}

/// Extends predicted tags to the full token count by repeating the last tag.
inline std::vector<int> extend_tags(std::vector<int> tags, std::size_t full_length) {
  if (!tags.empty() && tags.size() < full_length) tags.resize(full_length, tags.back());
  return tags;
}

// ---------------------------------------------------------------------------
// The tagger.

class HybridTagger {
 public:
  struct Example {
    std::string id;
    EncodedTokens inputs;
    std::vector<int> tags;  // gold tags for the kept tokens
    int boundary = 0;       // gold boundary on the full text
    std::size_t full_length = 0;
    std::string generator;
  };

  struct Cache {
    Matrix word;
    CharCnn::Cache chars;
    Matrix char_mask;
    std::vector<BiLstmLayer::Cache> lstm;
    clshead::FCBlock::Cache fc;
  };

  HybridTagger(corpus::Vocab vocab, HybridConfig config, nn::Rng& rng) : vocab_(std::move(vocab)), config_(config) {
    config_.validate();
    word_emb_ = nn::Embedding("tagger.word_emb", config_.word_emb_dim, static_cast<Eigen::Index>(vocab_.word_count()),
                              rng, -config_.init_range, config_.init_range);
    chars_ = CharCnn(config_, static_cast<Eigen::Index>(vocab_.char_count()), rng);
    Eigen::Index width = config_.word_emb_dim + config_.char_conv_filters;
    for (int l = 0; l < config_.lstm_layers; ++l) {
      lstm_.emplace_back("tagger.lstm." + std::to_string(l), width, config_.lstm_hidden, rng);
      width = 2 * config_.lstm_hidden;
    }
    clshead::FCBlockConfig fc;
    fc.hidden_sizes = {config_.fc_hidden};
    fc.dropout = config_.fc_dropout;
    fc.feature_dropout = 0.0;
    fc.norm = config_.fc_norm;
    fc.output_size = config_.num_tags;
    fc_ = clshead::FCBlock("tagger.fc", static_cast<int>(width), fc, rng);
    transitions_ = nn::Param("tagger.crf.transitions", config_.num_tags, config_.num_tags);
    start_ = nn::Param("tagger.crf.start", config_.num_tags, 1);
    end_ = nn::Param("tagger.crf.end", config_.num_tags, 1);
  }

  const HybridConfig& config() const { return config_; }
  const corpus::Vocab& vocab() const { return vocab_; }
  CharCnn& char_cnn() { return chars_; }
  clshead::FCBlock& fc() { return fc_; }

  crf::CrfParams crf_params() const { return {transitions_.value, start_.value.col(0), end_.value.col(0)}; }
  void set_crf_params(const crf::CrfParams& p) {
    transitions_.value = p.transitions;
    start_.value.col(0) = p.start_scores;
    end_.value.col(0) = p.end_scores;
  }

  LossKind expected_loss() const {
    return config_.method == DecodeMethod::Crf ? LossKind::CrfNll : LossKind::CrossEntropy;
  }

  Example prepare(const corpus::TextRecord& r) const {
    const auto seq = corpus::boundary_to_tags(r.text, r.boundary_index());
    Example ex;
    ex.id = r.id;
    ex.inputs = encode_tokens(seq.tokens, vocab_, config_);
    ex.tags.assign(seq.tags.begin(), seq.tags.begin() + static_cast<std::ptrdiff_t>(ex.inputs.size()));
    ex.boundary = r.boundary_index();
    ex.full_length = seq.tokens.size();
    ex.generator = r.generator;
    return ex;
  }

  /// Emission scores, one row per unmasked token.
  crf::EmissionMatrix emissions(const EncodedTokens& in, Mode mode, nn::Rng& rng, Cache* cache = nullptr) {
    if (in.word_ids.size() != in.char_ids.size() || in.mask.size() != in.word_ids.size())
      throw Error("encoded token arrays disagree in length");
    std::vector<TokenId> words;
    std::vector<std::vector<TokenId>> rows;
    for (std::size_t t = 0; t < in.size(); ++t) {
      if (!in.mask[t]) continue;
      if (static_cast<int>(in.char_ids[t].size()) != config_.max_chars_per_token)
        throw Error("character rows must have max_chars_per_token entries");
      words.push_back(in.word_ids[t]);
      rows.push_back(in.char_ids[t]);
    }
    if (words.empty()) throw Error("no unmasked tokens");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.word = word_emb_.lookup(words);
    const Matrix char_feat = chars_.forward(rows, &c.chars);
    const Matrix char_drop = nn::dropout_forward(char_feat, config_.char_dropout, mode, rng, &c.char_mask);
    Matrix h(c.word.rows() + char_drop.rows(), c.word.cols());
    h << c.word, char_drop;
    c.lstm.assign(lstm_.size(), {});
    for (std::size_t l = 0; l < lstm_.size(); ++l) h = lstm_[l].forward(h, &c.lstm[l]);
    const Matrix logits = fc_.forward(h, mode, rng, &c.fc);
    c.chars.rows = std::move(rows);
    word_ids_cache_ = std::move(words);
    return logits.transpose();
  }

  crf::EmissionMatrix infer_emissions(const EncodedTokens& in) const {
    nn::Rng unused(0);
    return const_cast<HybridTagger&>(*this).emissions(in, Mode::Eval, unused);
  }

  std::vector<int> decode_tags(const crf::EmissionMatrix& e) const {
    const auto params = crf_params();
    return decode(e, config_.method, &params);
  }

  /// Tags over the full text (kept tokens decoded, the rest continue the last tag).
  std::vector<int> predict_tags(const Example& ex) const {
    return extend_tags(decode_tags(infer_emissions(ex.inputs)), ex.full_length);
  }

  int predict_boundary(const Example& ex) const { return tags_to_boundary(predict_tags(ex)); }

  /// Loss of one example; with `backprop` it also accumulates parameter gradients
  /// scaled by `weight`.  CE is summed over tokens, CRF NLL is per sequence.
  double example_loss(const Example& ex, Mode mode, nn::Rng& rng, bool backprop, double weight = 1.0) {
    Cache cache;
    const crf::EmissionMatrix e = emissions(ex.inputs, mode, rng, &cache);
    const auto T = e.rows();
    if (static_cast<std::size_t>(T) != ex.tags.size()) throw Error("gold tags do not match emission rows");
    double loss = 0;
    Matrix demissions(T, e.cols());
    if (config_.method == DecodeMethod::Crf) {
      crf::CrfGradients g;
      loss = crf::nll_with_gradient(e, ex.tags, crf_params(), g);
      if (backprop) {
        demissions = g.emissions;
        transitions_.grad += weight * g.transitions;
        start_.grad.col(0) += weight * g.start_scores;
        end_.grad.col(0) += weight * g.end_scores;
      }
    } else {
      for (Eigen::Index t = 0; t < T; ++t) {
        Vector g;
        loss += clshead::cross_entropy(e.row(t).transpose(), ex.tags[static_cast<std::size_t>(t)], backprop ? &g : nullptr);
        if (backprop) demissions.row(t) = g.transpose();
      }
    }
    if (backprop) backward(cache, weight * demissions);
    return loss;
  }

  /// Mean loss over the batch (per token for CE, per sequence for CRF) with gradients.
  double accumulate_gradients(std::span<const Example* const> batch, int /*lowest_encoder_layer*/, nn::Rng& rng) {
    double denom = 0;
    for (const Example* ex : batch)
      denom += config_.method == DecodeMethod::Crf ? 1.0 : static_cast<double>(ex->tags.size());
    double total = 0;
    for (const Example* ex : batch) total += example_loss(*ex, Mode::Train, rng, true, 1.0 / denom);
    return total / denom;
  }

  EvalStats evaluate(std::span<const Example> examples) const {
    EvalStats stats;
    auto& self = const_cast<HybridTagger&>(*this);
    nn::Rng unused(0);
    double loss = 0, denom = 0, abs_err = 0;
    std::size_t correct = 0, tokens = 0;
    for (const auto& ex : examples) {
      loss += self.example_loss(ex, Mode::Eval, unused, false);
      denom += config_.method == DecodeMethod::Crf ? 1.0 : static_cast<double>(ex.tags.size());
      const auto tags = decode_tags(infer_emissions(ex.inputs));
      for (std::size_t t = 0; t < tags.size(); ++t) correct += tags[t] == ex.tags[t] ? 1 : 0;
      tokens += tags.size();
      abs_err += std::abs(tags_to_boundary(extend_tags(tags, ex.full_length)) - ex.boundary);
    }
    stats.count = examples.size();
    if (!examples.empty()) {
      stats.loss = loss / denom;
      stats.accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
      stats.mae = abs_err / static_cast<double>(examples.size());
    }
    return stats;
  }

  /// Parameter groups by name, used by gradient checks and the trainer.
  std::vector<std::pair<std::string, nn::ParamList>> named_groups() {
    std::vector<std::pair<std::string, nn::ParamList>> out;
    out.push_back({"word_emb", {&word_emb_.table}});
    out.push_back({"char_emb", {&chars_.embedding.table}});
    out.push_back({"char_conv", {&chars_.weight, &chars_.bias}});
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      nn::ParamList fwd, bwd;
      lstm_[l].forward_dir.collect(fwd);
      lstm_[l].backward_dir.collect(bwd);
      out.push_back({"lstm." + std::to_string(l) + ".fwd", fwd});
      out.push_back({"lstm." + std::to_string(l) + ".bwd", bwd});
    }
    out.push_back({"fc", fc_.params()});
    if (config_.method == DecodeMethod::Crf) out.push_back({"crf", {&transitions_, &start_, &end_}});
    return out;
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (auto& [name, group] : named_groups()) out.insert(out.end(), group.begin(), group.end());
    return out;
  }

  /// The tagger has no frozen encoder: "head" covers every parameter.
  nn::ParamList param_group(std::string_view id) {
    if (id == "head") return params();
    throw Error("unknown parameter group: " + std::string(id));
  }
  nn::ParamList all_params() { return params(); }
  std::vector<int> selected_layers() const { return {}; }

  nlohmann::json to_json() const {
    auto& self = const_cast<HybridTagger&>(*this);
    nn::ParamList all = self.params();
    if (config_.method != DecodeMethod::Crf) all.insert(all.end(), {&self.transitions_, &self.start_, &self.end_});
    return {{"model", "tagger"},
            {"config", config_.to_json()},
            {"vocab", vocab_.to_json()},
            {"params", nn::params_to_json(all)},
            {"fc_buffers", fc_.buffers_to_json()}};
  }

  static HybridTagger from_json(const nlohmann::json& j) {
    nn::Rng rng(0);
    HybridTagger t(corpus::Vocab::from_json(j.at("vocab")), HybridConfig::from_json(j.at("config")), rng);
    nn::ParamList all = t.params();
    if (t.config_.method != DecodeMethod::Crf) all.insert(all.end(), {&t.transitions_, &t.start_, &t.end_});
    nn::params_from_json(all, j.at("params"));
    t.fc_.buffers_from_json(j.at("fc_buffers"));
    return t;
  }

 private:
  void backward(const Cache& c, const Matrix& demissions) {
    Matrix g = fc_.backward(c.fc, demissions.transpose());
    for (std::size_t l = lstm_.size(); l-- > 0;) g = lstm_[l].backward(c.lstm[l], g);
    const auto wd = static_cast<Eigen::Index>(config_.word_emb_dim);
    word_emb_.backward(word_ids_cache_, g.topRows(wd));
    chars_.backward(c.chars, nn::dropout_backward(c.char_mask, g.bottomRows(g.rows() - wd)));
  }

  corpus::Vocab vocab_;
  HybridConfig config_;
  nn::Embedding word_emb_;
  CharCnn chars_;
  std::vector<BiLstmLayer> lstm_;
  clshead::FCBlock fc_;
  nn::Param transitions_;
  nn::Param start_;
  nn::Param end_;
  std::vector<TokenId> word_ids_cache_;
};

}  // namespace mgtd::hybrid
