#pragma once

// Sequence encoder interface used as a feature extractor by the classifier,
// plus a small trainable substitute for a pre-trained transformer.

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/corpus.hpp"
#include "mgtd/nn.hpp"
#include "mgtd/types.hpp"
#include "mgtd/unicode.hpp"

namespace mgtd {

/// Per-layer sequence representations.  layers[0] is the embedding output,
/// layers[1..depth] the encoder layers; each is hidden_size x positions and
/// position 0 is the sequence-initial classification token.
struct HiddenStates {
  std::vector<nn::Matrix> layers;
};

class Encoder {
 public:
  virtual ~Encoder() = default;

  virtual std::string_view backend() const = 0;
  /// Number of encoder layers, excluding the embedding layer.
  virtual int depth() const = 0;
  virtual int hidden_size() const = 0;

  /// Content token ids for a text, without delimiter tokens.
  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;

  /// Encodes content ids wrapped in the classification and separator tokens.
  virtual HiddenStates encode(std::span<const TokenId> content_ids) const = 0;

  /// Backpropagates `grads` (one entry per hidden-state layer, empty = zero)
  /// and accumulates parameter gradients for layers >= lowest_layer only.
  virtual void backward(std::span<const TokenId> content_ids, const HiddenStates& states,
                        const std::vector<nn::Matrix>& grads, int lowest_layer) = 0;

  /// Parameters of one layer; layer 0 is the embedding table.
  virtual nn::ParamList layer_params(int layer) = 0;

  virtual nlohmann::json to_json() const = 0;

  nn::ParamList all_params() {
    nn::ParamList out;
    for (int l = 0; l <= depth(); ++l) {
      auto p = layer_params(l);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
};

struct TinyEncoderConfig {
  int hidden_size = 64;
  int layers = 4;
  double embedding_range = 0.5;
};

/// Residual token-mixing encoder:
///   h_l[t] = h_{l-1}[t] + tanh(W_l h_{l-1}[t] + U_l mean_s h_{l-1}[s] + b_l)
/// over a whitespace word vocabulary with two extra ids for the delimiters.
class TinyEncoder final : public Encoder {
 public:
  TinyEncoder(corpus::Vocab vocab, TinyEncoderConfig config, nn::Rng& rng)
      : vocab_(std::move(vocab)), config_(config) {
    if (config_.hidden_size <= 0 || config_.layers <= 0) throw Error("tiny encoder dims must be positive");
    const auto d = static_cast<Eigen::Index>(config_.hidden_size);
    embedding_ = nn::Embedding("encoder.embeddings", d, static_cast<Eigen::Index>(vocab_.word_count() + 2), rng,
                               -config_.embedding_range, config_.embedding_range);
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 1; l <= config_.layers; ++l) {
      Layer layer;
      const std::string prefix = "encoder.layer." + std::to_string(l);
      layer.token = nn::Param(prefix + ".token", d, d);
      layer.context = nn::Param(prefix + ".context", d, d);
      layer.bias = nn::Param(prefix + ".bias", d, 1);
      nn::init_uniform(layer.token, rng, -bound, bound);
      nn::init_uniform(layer.context, rng, -bound, bound);
      nn::init_uniform(layer.bias, rng, -bound, bound);
      layers_.push_back(std::move(layer));
    }
  }

  std::string_view backend() const override { return "tiny"; }
  int depth() const override { return config_.layers; }
  int hidden_size() const override { return config_.hidden_size; }
  const corpus::Vocab& vocab() const { return vocab_; }
  const TinyEncoderConfig& config() const { return config_; }

  TokenId cls_id() const { return static_cast<TokenId>(vocab_.word_count()); }
  TokenId sep_id() const { return static_cast<TokenId>(vocab_.word_count() + 1); }

  std::vector<TokenId> tokenize(std::string_view text) const override {
    std::vector<TokenId> ids;
    for (const auto& tok : unicode::split_whitespace(text)) ids.push_back(vocab_.word_id(tok));
    return ids;
  }

  HiddenStates encode(std::span<const TokenId> content_ids) const override {
    const auto ids = wrap(content_ids);
    HiddenStates hs;
    hs.layers.reserve(layers_.size() + 1);
    hs.layers.push_back(embedding_.lookup(ids));
    for (const auto& layer : layers_) {
      const nn::Matrix& prev = hs.layers.back();
      const nn::Vector ctx = layer.context.value * prev.rowwise().mean() + layer.bias.value.col(0);
      nn::Matrix z = (layer.token.value * prev).colwise() + ctx;
      hs.layers.push_back(prev + nn::tanh_forward(z));
    }
    return hs;
  }

  void backward(std::span<const TokenId> content_ids, const HiddenStates& states, const std::vector<nn::Matrix>& grads,
                int lowest_layer) override {
    const auto positions = states.layers.front().cols();
    nn::Matrix g = nn::Matrix::Zero(config_.hidden_size, positions);
    auto add_external = [&](std::size_t l) {
      if (l < grads.size() && grads[l].size() != 0) g += grads[l];
    };
    add_external(layers_.size());
    for (int l = depth(); l >= 1 && l >= lowest_layer; --l) {
      Layer& layer = layers_[static_cast<std::size_t>(l - 1)];
      const nn::Matrix& prev = states.layers[static_cast<std::size_t>(l - 1)];
      const nn::Matrix act = states.layers[static_cast<std::size_t>(l)] - prev;
      const nn::Matrix gz = nn::tanh_backward(act, g);
      const nn::Vector mean = prev.rowwise().mean();
      const nn::Vector gsum = gz.rowwise().sum();
      layer.token.grad.noalias() += gz * prev.transpose();
      layer.context.grad.noalias() += gsum * mean.transpose();
      layer.bias.grad.col(0) += gsum;
      if (l == lowest_layer) return;
      nn::Matrix g_prev = g + layer.token.value.transpose() * gz;
      g_prev.colwise() += layer.context.value.transpose() * gsum / static_cast<double>(positions);
      g = std::move(g_prev);
      add_external(static_cast<std::size_t>(l - 1));
    }
    if (lowest_layer <= 0) embedding_.backward(wrap(content_ids), g);
  }

  nn::ParamList layer_params(int layer) override {
    if (layer < 0 || layer > depth()) throw Error("encoder layer " + std::to_string(layer) + " out of range");
    if (layer == 0) return {&embedding_.table};
    auto& l = layers_[static_cast<std::size_t>(layer - 1)];
    return {&l.token, &l.context, &l.bias};
  }

  nlohmann::json to_json() const override {
    std::vector<const nn::Param*> params{&embedding_.table};
    for (const auto& l : layers_) params.insert(params.end(), {&l.token, &l.context, &l.bias});
    return {{"backend", "tiny"},
            {"hidden_size", config_.hidden_size},
            {"layers", config_.layers},
            {"embedding_range", config_.embedding_range},
            {"vocab", vocab_.to_json()},
            {"params", nn::params_to_json(params)}};
  }

  static std::unique_ptr<TinyEncoder> from_json(const nlohmann::json& j) {
    TinyEncoderConfig cfg;
    cfg.hidden_size = j.at("hidden_size").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.embedding_range = j.value("embedding_range", 0.5);
    nn::Rng rng(0);
    auto enc = std::make_unique<TinyEncoder>(corpus::Vocab::from_json(j.at("vocab")), cfg, rng);
    nn::params_from_json(enc->all_params(), j.at("params"));
    return enc;
  }

 private:
  struct Layer {
    nn::Param token;
    nn::Param context;
    nn::Param bias;
  };

  std::vector<TokenId> wrap(std::span<const TokenId> content_ids) const {
    std::vector<TokenId> ids;
    ids.reserve(content_ids.size() + 2);
    ids.push_back(cls_id());
    ids.insert(ids.end(), content_ids.begin(), content_ids.end());
    ids.push_back(sep_id());
    return ids;
  }

  corpus::Vocab vocab_;
  TinyEncoderConfig config_;
  nn::Embedding embedding_;
  std::vector<Layer> layers_;
};

inline std::unique_ptr<Encoder> encoder_from_json(const nlohmann::json& j) {
  const auto backend = j.at("backend").get<std::string>();
  if (backend == "tiny") return TinyEncoder::from_json(j);
  throw Error("unsupported encoder backend: " + backend);
}

}  // namespace mgtd
