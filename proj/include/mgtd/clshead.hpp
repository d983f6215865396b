#pragma once

// Classification for the binary and multiclass tasks: feature extraction from
// an encoder's hidden states, the fully connected head block, losses, and the
// end-to-end sequence classifier.

#include <algorithm>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgtd/corpus.hpp"
#include "mgtd/encoder.hpp"
#include "mgtd/nn.hpp"
#include "mgtd/textprep.hpp"
#include "mgtd/types.hpp"

namespace mgtd::clshead {

using nn::Matrix;
using nn::Vector;

// ---------------------------------------------------------------------------
// Fully connected block: per hidden size, linear -> norm -> tanh -> dropout,
// then a final linear layer to the output size.

struct FCBlockConfig {
  std::vector<int> hidden_sizes{256, 64};
  double dropout = 0.5;
  double feature_dropout = 0.3;
  nn::NormKind norm = nn::NormKind::Layer;
  int output_size = 1;

  void validate() const {
    if (hidden_sizes.empty()) throw Error("head needs at least one hidden layer");
    for (int h : hidden_sizes)
      if (h <= 0) throw Error("head hidden sizes must be positive");
    if (dropout < 0 || dropout >= 1 || feature_dropout < 0 || feature_dropout >= 1)
      throw Error("dropout probabilities must be in [0, 1)");
    if (output_size <= 0) throw Error("output size must be positive");
  }

  nlohmann::json to_json() const {
    return {{"hidden_sizes", hidden_sizes},
            {"dropout", dropout},
            {"feature_dropout", feature_dropout},
            {"norm", nn::norm_name(norm)},
            {"activation", "tanh"},
            {"output_size", output_size}};
  }
  static FCBlockConfig from_json(const nlohmann::json& j) {
    FCBlockConfig c;
    c.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
    c.dropout = j.at("dropout").get<double>();
    c.feature_dropout = j.at("feature_dropout").get<double>();
    c.norm = nn::parse_norm(j.at("norm").get<std::string>());
    c.output_size = j.at("output_size").get<int>();
    return c;
  }
};

class FCBlock {
 public:
  struct Cache {
    std::vector<Matrix> inputs;
    std::vector<nn::Norm::Cache> norms;
    std::vector<Matrix> activations;
    std::vector<Matrix> masks;
  };

  FCBlock() = default;
  FCBlock(const std::string& name, int in_features, FCBlockConfig config, nn::Rng& rng) : config_(std::move(config)) {
    config_.validate();
    if (in_features <= 0) throw Error("head input size must be positive");
    int width = in_features;
    for (std::size_t i = 0; i < config_.hidden_sizes.size(); ++i) {
      const int h = config_.hidden_sizes[i];
      const std::string prefix = name + "." + std::to_string(i);
      linears_.emplace_back(prefix + ".linear", width, h, rng);
      norms_.emplace_back(prefix + ".norm", config_.norm, h);
      width = h;
    }
    output_ = nn::Linear(name + ".out", width, config_.output_size, rng);
  }

  const FCBlockConfig& config() const { return config_; }
  int in_features() const { return static_cast<int>(linears_.front().in_features()); }
  std::vector<nn::Linear>& linears() { return linears_; }
  std::vector<nn::Norm>& norms() { return norms_; }
  nn::Linear& output_layer() { return output_; }

  Matrix forward(const Matrix& x, Mode mode, nn::Rng& rng, Cache* cache = nullptr) {
    if (mode == Mode::Eval && !cache) return infer(x);
    Cache local;
    Cache& c = cache ? *cache : local;
    c = Cache{};
    Matrix h = x;
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      c.inputs.push_back(h);
      Matrix z = linears_[i].forward(h);
      c.norms.emplace_back();
      Matrix a = nn::tanh_forward(norms_[i].forward(z, mode, &c.norms.back()));
      c.activations.push_back(a);
      c.masks.emplace_back();
      h = nn::dropout_forward(a, config_.dropout, mode, rng, &c.masks.back());
    }
    c.inputs.push_back(h);
    return output_.forward(h);
  }

  Matrix infer(const Matrix& x) const {
    Matrix h = x;
    for (std::size_t i = 0; i < linears_.size(); ++i) h = nn::tanh_forward(norms_[i].infer(linears_[i].forward(h)));
    return output_.forward(h);
  }

  /// Accumulates parameter gradients and returns d(loss)/d(input).
  Matrix backward(const Cache& c, const Matrix& dlogits) {
    Matrix g = output_.backward(c.inputs.back(), dlogits);
    for (std::size_t i = linears_.size(); i-- > 0;) {
      g = nn::dropout_backward(c.masks[i], g);
      g = nn::tanh_backward(c.activations[i], g);
      g = norms_[i].backward(c.norms[i], g);
      g = linears_[i].backward(c.inputs[i], g);
    }
    return g;
  }

  nn::ParamList params() {
    nn::ParamList out;
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      linears_[i].collect(out);
      norms_[i].collect(out);
    }
    output_.collect(out);
    return out;
  }

  std::vector<const nn::Param*> const_params() const {
    std::vector<const nn::Param*> out;
    for (std::size_t i = 0; i < linears_.size(); ++i) {
      out.insert(out.end(), {&linears_[i].weight, &linears_[i].bias});
      if (norms_[i].kind != nn::NormKind::None) out.insert(out.end(), {&norms_[i].gamma, &norms_[i].beta});
    }
    out.insert(out.end(), {&output_.weight, &output_.bias});
    return out;
  }

  nlohmann::json buffers_to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& n : norms_)
      out.push_back({{"running_mean", nn::matrix_to_json(n.running_mean)},
                     {"running_var", nn::matrix_to_json(n.running_var)}});
    return out;
  }
  void buffers_from_json(const nlohmann::json& j) {
    if (j.size() != norms_.size()) throw Error("checkpoint norm buffer count mismatch");
    for (std::size_t i = 0; i < norms_.size(); ++i) {
      norms_[i].running_mean = nn::matrix_from_json(j[i].at("running_mean"));
      norms_[i].running_var = nn::matrix_from_json(j[i].at("running_var"));
    }
  }

 private:
  FCBlockConfig config_;
  std::vector<nn::Linear> linears_;
  std::vector<nn::Norm> norms_;
  nn::Linear output_;
};

struct ClassifierOutput {
  Vector logits;
  std::optional<double> probability;

  static ClassifierOutput from_logits(Vector logits) {
    ClassifierOutput out{std::move(logits), std::nullopt};
    if (out.logits.size() == 1) out.probability = nn::logistic(out.logits(0));
    return out;
  }
};

/// Runs the head on one feature vector.  Eval mode is deterministic.
inline ClassifierOutput fc_forward(FCBlock& block, const Vector& features, Mode mode, nn::Rng& rng) {
  if (features.size() != block.in_features())
    throw Error("feature dimension " + std::to_string(features.size()) + " does not match head input " +
                std::to_string(block.in_features()));
  Matrix logits = block.forward(features, mode, rng);
  return ClassifierOutput::from_logits(logits.col(0));
}

/// Binary: probability >= threshold.  Multiclass: argmax, lowest index on ties.
inline int predict(const ClassifierOutput& output, Task task, double threshold = 0.5) {
  if (is_binary(task)) {
    if (output.logits.size() != 1) throw Error("binary task expects a single logit");
    const double p = output.probability.value_or(nn::logistic(output.logits(0)));
    return p >= threshold ? 1 : 0;
  }
  if (output.logits.size() != num_labels(task)) throw Error("logit count does not match task label set");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < output.logits.size(); ++i)
    if (output.logits(i) > output.logits(best)) best = i;
  return static_cast<int>(best);
}

// ---------------------------------------------------------------------------
// Losses on raw logits.

/// Numerically stable binary cross entropy on a logit; gradient is sigmoid(x) - y.
inline double bce_with_logits(double logit, int target, double* grad = nullptr) {
  const double y = target ? 1.0 : 0.0;
  if (grad) *grad = nn::logistic(logit) - y;
  return std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
}

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

inline double cross_entropy(const Vector& logits, int target, Vector* grad = nullptr) {
  const double lse = log_sum_exp(logits);
  if (grad) {
    *grad = (logits.array() - lse).exp().matrix();
    (*grad)(target) -= 1.0;
  }
  return lse - logits(target);
}

// ---------------------------------------------------------------------------
// Feature extraction.

struct LayerSelection {
  enum class Kind { LastLayer, ConcatLastK } kind = Kind::LastLayer;
  int k = 4;

  static LayerSelection last_layer() { return {Kind::LastLayer, 1}; }
  static LayerSelection concat_last(int k) { return {Kind::ConcatLastK, k}; }

  int layer_count() const { return kind == Kind::LastLayer ? 1 : k; }

  /// Encoder layers (1-based, highest first) read by this selection.
  std::vector<int> layers(int depth) const {
    const int n = layer_count();
    if (n < 1 || n > depth)
      throw Error("layer selection needs " + std::to_string(n) + " layers but the encoder has " + std::to_string(depth));
    std::vector<int> out;
    for (int i = 0; i < n; ++i) out.push_back(depth - i);
    return out;
  }
};

inline std::string_view selection_name(const LayerSelection& s) {
  return s.kind == LayerSelection::Kind::LastLayer ? "last" : "concat_last_k";
}

/// First-position vectors of the selected layers, concatenated highest layer first.
inline Vector select_features(const HiddenStates& states, const LayerSelection& selection) {
  const int depth = static_cast<int>(states.layers.size()) - 1;
  const auto layers = selection.layers(depth);
  const auto d = states.layers.back().rows();
  Vector out(d * static_cast<Eigen::Index>(layers.size()));
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& h = states.layers[static_cast<std::size_t>(layers[i])];
    if (h.cols() < 1) throw Error("hidden state has no positions");
    out.segment(static_cast<Eigen::Index>(i) * d, d) = h.col(0);
  }
  return out;
}

/// Selected features followed by feature dropout (train mode only).
inline Vector extract_features(const HiddenStates& states, const LayerSelection& selection, double dropout, Mode mode,
                               nn::Rng& rng) {
  Matrix v = select_features(states, selection);
  return nn::dropout_forward(v, dropout, mode, rng, nullptr).col(0);
}

// ---------------------------------------------------------------------------
// End-to-end classifier.

struct ClassifierConfig {
  Task task = Task::B;
  LayerSelection selection;
  FCBlockConfig head;
  textprep::TruncationStrategy longtext;
  int budget = textprep::kDefaultBudget;
  textprep::PreprocessLevel preprocess = textprep::PreprocessLevel::None;

  nlohmann::json manifest() const {
    return {{"task", task_name(task)},
            {"preprocess.level", textprep::level_name(preprocess)},
            {"longtext.strategy", textprep::truncation_name(longtext.kind)},
            {"longtext.pool", textprep::pool_name(longtext.pool)},
            {"longtext.budget", budget},
            {"longtext.head_len", longtext.head_len},
            {"longtext.tail_len", longtext.tail_len},
            {"longtext.chunk_len", longtext.chunk_len},
            {"features.selection", selection_name(selection)},
            {"features.k", selection.layer_count()}};
  }

  static ClassifierConfig from_manifest(const nlohmann::json& m, FCBlockConfig head) {
    ClassifierConfig c;
    c.task = parse_task(m.at("task").get<std::string>());
    c.preprocess = textprep::parse_level(m.at("preprocess.level").get<std::string>());
    c.longtext.kind = textprep::parse_truncation(m.at("longtext.strategy").get<std::string>());
    c.longtext.pool = textprep::parse_pool(m.at("longtext.pool").get<std::string>());
    c.budget = m.at("longtext.budget").get<int>();
    c.longtext.head_len = m.at("longtext.head_len").get<int>();
    c.longtext.tail_len = m.at("longtext.tail_len").get<int>();
    c.longtext.chunk_len = m.at("longtext.chunk_len").get<int>();
    const int k = m.at("features.k").get<int>();
    c.selection = m.at("features.selection").get<std::string>() == "last" ? LayerSelection::last_layer()
                                                                         : LayerSelection::concat_last(k);
    c.head = std::move(head);
    return c;
  }
};

class SequenceClassifier {
 public:
  struct Example {
    std::string id;
    std::vector<TokenId> ids;
    int label = 0;
    std::string generator;
    std::size_t length = 0;
  };

  SequenceClassifier(std::unique_ptr<Encoder> encoder, ClassifierConfig config, nn::Rng& rng)
      : encoder_(std::move(encoder)), config_(std::move(config)) {
    if (!encoder_) throw Error("classifier needs an encoder");
    config_.head.output_size = is_binary(config_.task) ? 1 : num_labels(config_.task);
    if (config_.task == Task::C) throw Error("the sequence classifier does not handle the boundary task");
    config_.longtext.validate();
    if (config_.longtext.kind != textprep::TruncationKind::Hierarchical)
      textprep::effective_budget(config_.longtext, truncation_budget());
    const int features = encoder_->hidden_size() * static_cast<int>(config_.selection.layers(encoder_->depth()).size());
    head_ = FCBlock("head", features, config_.head, rng);
  }

  const ClassifierConfig& config() const { return config_; }
  Encoder& encoder() { return *encoder_; }
  const Encoder& encoder() const { return *encoder_; }
  FCBlock& head() { return head_; }

  Example prepare(const corpus::TextRecord& r) const {
    const std::string text = textprep::preprocess(r.text, config_.preprocess);
    return {r.id, encoder_->tokenize(text), r.label, r.generator, unicode::count_tokens(r.text)};
  }

  /// Encoder inputs for one example: one truncated sequence, or all chunks.
  std::vector<std::vector<TokenId>> segments(const Example& ex) const {
    if (config_.longtext.kind == textprep::TruncationKind::Hierarchical) {
      if (ex.ids.empty()) return {{}};
      return textprep::chunk(ex.ids, config_.longtext.chunk_len);
    }
    return {textprep::truncate(ex.ids, config_.longtext, truncation_budget())};
  }

  Vector features(const Example& ex) const {
    std::vector<Vector> per_chunk;
    for (const auto& seg : segments(ex)) per_chunk.push_back(select_features(encoder_->encode(seg), config_.selection));
    return textprep::pool_chunks(per_chunk, config_.longtext.pool);
  }

  ClassifierOutput infer(const Example& ex) const {
    Matrix logits = head_.infer(features(ex));
    return ClassifierOutput::from_logits(logits.col(0));
  }

  int predict_label(const Example& ex) const { return predict(infer(ex), config_.task); }

  LossKind expected_loss() const {
    return is_binary(config_.task) ? LossKind::BinaryCrossEntropy : LossKind::CrossEntropy;
  }

  /// Encoder layers updated in the fine-tune phase: the ones features are read from.
  std::vector<int> selected_layers() const { return config_.selection.layers(encoder_->depth()); }

  /// Parameter group by id: "head" or "encoder.layer.N" (N = 0 is the embedding table).
  nn::ParamList param_group(std::string_view id) {
    if (id == "head") return head_.params();
    constexpr std::string_view prefix = "encoder.layer.";
    if (id.starts_with(prefix)) return encoder_->layer_params(std::stoi(std::string(id.substr(prefix.size()))));
    throw Error("unknown parameter group: " + std::string(id));
  }

  nn::ParamList all_params() {
    nn::ParamList out = head_.params();
    const auto enc = encoder_->all_params();
    out.insert(out.end(), enc.begin(), enc.end());
    return out;
  }

  /// Mean batch loss; accumulates gradients into the head and, when
  /// lowest_encoder_layer <= depth, into encoder layers >= lowest_encoder_layer.
  double accumulate_gradients(std::span<const Example* const> batch, int lowest_encoder_layer, nn::Rng& rng) {
    const bool encoder_trainable = lowest_encoder_layer <= encoder_->depth();
    const auto n = static_cast<Eigen::Index>(batch.size());
    const int dim = head_.in_features();
    Matrix x(dim, n);
    struct Trace {
      std::vector<std::vector<TokenId>> segments;
      std::vector<HiddenStates> states;
      std::vector<Vector> features;
    };
    std::vector<Trace> traces(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Trace& tr = traces[b];
      tr.segments = segments(*batch[b]);
      for (const auto& seg : tr.segments) {
        HiddenStates hs = encoder_->encode(seg);
        tr.features.push_back(select_features(hs, config_.selection));
        if (encoder_trainable) tr.states.push_back(std::move(hs));
      }
      x.col(static_cast<Eigen::Index>(b)) = textprep::pool_chunks(tr.features, config_.longtext.pool);
    }
    Matrix feature_mask;
    Matrix xd = nn::dropout_forward(x, config_.head.feature_dropout, Mode::Train, rng, &feature_mask);
    FCBlock::Cache cache;
    Matrix logits = head_.forward(xd, Mode::Train, rng, &cache);

    double loss = 0;
    Matrix dlogits(logits.rows(), logits.cols());
    for (Eigen::Index b = 0; b < n; ++b) {
      const int y = batch[static_cast<std::size_t>(b)]->label;
      if (is_binary(config_.task)) {
        double g = 0;
        loss += bce_with_logits(logits(0, b), y, &g);
        dlogits(0, b) = g;
      } else {
        Vector g;
        loss += cross_entropy(logits.col(b), y, &g);
        dlogits.col(b) = g;
      }
    }
    dlogits /= static_cast<double>(n);
    Matrix dx = nn::dropout_backward(feature_mask, head_.backward(cache, dlogits));

    if (encoder_trainable) {
      const auto layers = selected_layers();
      const auto d = static_cast<Eigen::Index>(encoder_->hidden_size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        Trace& tr = traces[b];
        const auto chunk_grads = textprep::pool_chunks_backward(tr.features, config_.longtext.pool,
                                                                dx.col(static_cast<Eigen::Index>(b)));
        for (std::size_t s = 0; s < tr.segments.size(); ++s) {
          std::vector<Matrix> grads(static_cast<std::size_t>(encoder_->depth() + 1));
          for (std::size_t i = 0; i < layers.size(); ++i) {
            Matrix g = Matrix::Zero(d, tr.states[s].layers.front().cols());
            g.col(0) = chunk_grads[s].segment(static_cast<Eigen::Index>(i) * d, d);
            grads[static_cast<std::size_t>(layers[i])] = std::move(g);
          }
          encoder_->backward(tr.segments[s], tr.states[s], grads, lowest_encoder_layer);
        }
      }
    }
    return loss / static_cast<double>(n);
  }

  EvalStats evaluate(std::span<const Example> examples) const {
    EvalStats stats;
    std::size_t correct = 0;
    for (const auto& ex : examples) {
      const auto out = infer(ex);
      stats.loss += is_binary(config_.task) ? bce_with_logits(out.logits(0), ex.label)
                                            : cross_entropy(out.logits, ex.label);
      correct += predict(out, config_.task) == ex.label ? 1 : 0;
    }
    stats.count = examples.size();
    if (!examples.empty()) {
      stats.loss /= static_cast<double>(examples.size());
      stats.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    }
    return stats;
  }

  nlohmann::json to_json() const {
    return {{"model", "classifier"},
            {"manifest", config_.manifest()},
            {"head_config", config_.head.to_json()},
            {"encoder", encoder_->to_json()},
            {"head", nn::params_to_json(head_.const_params())},
            {"head_buffers", head_.buffers_to_json()}};
  }

  static SequenceClassifier from_json(const nlohmann::json& j) {
    auto config = ClassifierConfig::from_manifest(j.at("manifest"), FCBlockConfig::from_json(j.at("head_config")));
    nn::Rng rng(0);
    SequenceClassifier model(encoder_from_json(j.at("encoder")), std::move(config), rng);
    nn::params_from_json(model.head_.params(), j.at("head"));
    model.head_.buffers_from_json(j.at("head_buffers"));
    return model;
  }

 private:
  /// Head-and-tail takes its budget from head_len + tail_len.
  std::optional<int> truncation_budget() const {
    if (config_.longtext.kind == textprep::TruncationKind::HeadAndTail) return std::nullopt;
    return config_.budget;
  }

  std::unique_ptr<Encoder> encoder_;
  ClassifierConfig config_;
  FCBlock head_;
};

}  // namespace mgtd::clshead
