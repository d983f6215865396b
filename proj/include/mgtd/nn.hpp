#pragma once

// Minimal dense layers with explicit backward passes.  Activations are
// column-major batches: one column per example (or per token).

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mgtd/types.hpp"

namespace mgtd::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double unit_uniform(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng); }

struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  std::int64_t step = 0;

  Param() = default;
  Param(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)),
        value(Matrix::Zero(rows, cols)),
        grad(Matrix::Zero(rows, cols)),
        adam_m(Matrix::Zero(rows, cols)),
        adam_v(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

using ParamList = std::vector<Param*>;

inline void init_uniform(Param& p, Rng& rng, double lo, double hi) {
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = uniform(rng, lo, hi);
}

inline Matrix tanh_forward(const Matrix& x) { return x.array().tanh().matrix(); }
inline Matrix tanh_backward(const Matrix& y, const Matrix& dy) {
  return (dy.array() * (1.0 - y.array().square())).matrix();
}

inline double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
      : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    init_uniform(weight, rng, -bound, bound);
    init_uniform(bias, rng, -bound, bound);
  }

  Eigen::Index in_features() const { return weight.value.cols(); }
  Eigen::Index out_features() const { return weight.value.rows(); }

  Matrix forward(const Matrix& x) const {
    if (x.rows() != in_features())
      throw Error(weight.name + ": expected " + std::to_string(in_features()) + " input features, got " +
                  std::to_string(x.rows()));
    return (weight.value * x).colwise() + bias.value.col(0);
  }

  Matrix backward(const Matrix& x, const Matrix& dy) {
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }

  void collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

enum class NormKind { Layer, Batch, None };

inline NormKind parse_norm(std::string_view s) {
  if (s == "layer") return NormKind::Layer;
  if (s == "batch") return NormKind::Batch;
  if (s == "none") return NormKind::None;
  throw Error("unknown normalization: " + std::string(s));
}

inline std::string_view norm_name(NormKind k) {
  switch (k) {
    case NormKind::Layer: return "layer";
    case NormKind::Batch: return "batch";
    case NormKind::None: return "none";
  }
  return "?";
}

/// Layer norm normalizes each column over features; batch norm normalizes each
/// feature over the batch and keeps running statistics for eval mode.
struct Norm {
  NormKind kind = NormKind::Layer;
  Param gamma;
  Param beta;
  Vector running_mean;
  Vector running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  struct Cache {
    Matrix xhat;
    Vector inv_std;
    bool batch_stats = false;
  };

  Norm() = default;
  Norm(const std::string& name, NormKind k, Eigen::Index features)
      : kind(k),
        gamma(name + ".gamma", features, 1),
        beta(name + ".beta", features, 1),
        running_mean(Vector::Zero(features)),
        running_var(Vector::Ones(features)) {
    gamma.value.setOnes();
  }

  /// Training-mode batch norm also updates the running statistics.
  Matrix forward(const Matrix& x, Mode mode, Cache* cache = nullptr) {
    if (kind == NormKind::None) return x;
    Cache local;
    Cache& c = cache ? *cache : local;
    normalize(x, mode, c);
    if (c.batch_stats) {
      const auto b = static_cast<double>(x.cols());
      const Vector mean = x.rowwise().sum() / b;
      const Vector var = (x.colwise() - mean).array().square().rowwise().sum() / b;
      const double unbiased = b > 1 ? b / (b - 1) : 1.0;
      running_mean = (1 - momentum) * running_mean + momentum * mean;
      running_var = (1 - momentum) * running_var + momentum * unbiased * var;
    }
    return affine(c.xhat);
  }

  /// Eval-mode forward without touching any state.
  Matrix infer(const Matrix& x) const {
    if (kind == NormKind::None) return x;
    Cache c;
    normalize(x, Mode::Eval, c);
    return affine(c.xhat);
  }

  Matrix backward(const Cache& c, const Matrix& dy) {
    if (kind == NormKind::None) return dy;
    gamma.grad.col(0) += (dy.array() * c.xhat.array()).rowwise().sum().matrix();
    beta.grad.col(0) += dy.rowwise().sum();
    Matrix dxhat = dy.array().colwise() * gamma.value.col(0).array();
    if (kind == NormKind::Layer) {
      const auto f = static_cast<double>(dy.rows());
      const Eigen::RowVectorXd mean_d = dxhat.colwise().sum() / f;
      const Eigen::RowVectorXd mean_dx = (dxhat.array() * c.xhat.array()).colwise().sum() / f;
      Matrix dx = (dxhat.rowwise() - mean_d) - (c.xhat.array().rowwise() * mean_dx.array()).matrix();
      return dx.array().rowwise() * c.inv_std.transpose().array();
    }
    if (!c.batch_stats) return dxhat.array().colwise() * c.inv_std.array();
    const auto b = static_cast<double>(dy.cols());
    const Vector mean_d = dxhat.rowwise().sum() / b;
    const Vector mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum() / b;
    Matrix dx = (dxhat.colwise() - mean_d) - (c.xhat.array().colwise() * mean_dx.array()).matrix();
    return dx.array().colwise() * c.inv_std.array();
  }

  void normalize(const Matrix& x, Mode mode, Cache& c) const {
    if (kind == NormKind::Layer) {
      const auto f = static_cast<double>(x.rows());
      const Eigen::RowVectorXd mean = x.colwise().sum() / f;
      const Matrix centered = x.rowwise() - mean;
      const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / f;
      c.inv_std = (var.array() + eps).rsqrt().transpose();
      c.xhat = centered.array().rowwise() * c.inv_std.transpose().array();
      c.batch_stats = false;
    } else if (mode == Mode::Train) {
      const auto b = static_cast<double>(x.cols());
      const Vector mean = x.rowwise().sum() / b;
      const Matrix centered = x.colwise() - mean;
      const Vector var = centered.array().square().rowwise().sum() / b;
      c.inv_std = (var.array() + eps).rsqrt();
      c.xhat = centered.array().colwise() * c.inv_std.array();
      c.batch_stats = true;
    } else {
      c.inv_std = (running_var.array() + eps).rsqrt();
      c.xhat = (x.colwise() - running_mean).array().colwise() * c.inv_std.array();
      c.batch_stats = false;
    }
  }

  Matrix affine(const Matrix& xhat) const {
    return (xhat.array().colwise() * gamma.value.col(0).array()).matrix().colwise() + beta.value.col(0);
  }

  void collect(ParamList& out) {
    if (kind == NormKind::None) return;
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

/// Inverted dropout.  In eval mode (or p == 0) it is the identity and `mask` is left empty.
inline Matrix dropout_forward(const Matrix& x, double p, Mode mode, Rng& rng, Matrix* mask) {
  if (mode == Mode::Eval || p <= 0.0) {
    if (mask) mask->resize(0, 0);
    return x;
  }
  const double keep = 1.0 - p;
  Matrix m(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < x.rows(); ++i) m(i, j) = unit_uniform(rng) < keep ? 1.0 / keep : 0.0;
  Matrix y = x.cwiseProduct(m);
  if (mask) *mask = std::move(m);
  return y;
}

inline Matrix dropout_backward(const Matrix& mask, const Matrix& dy) {
  return mask.size() == 0 ? dy : Matrix(dy.cwiseProduct(mask));
}

/// Lookup table with one column per symbol.
struct Embedding {
  Param table;

  Embedding() = default;
  Embedding(const std::string& name, Eigen::Index dim, Eigen::Index count, Rng& rng, double lo, double hi)
      : table(name, dim, count) {
    init_uniform(table, rng, lo, hi);
  }

  Eigen::Index dim() const { return table.value.rows(); }
  Eigen::Index count() const { return table.value.cols(); }

  Matrix lookup(std::span<const TokenId> ids) const {
    Matrix out(dim(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t t = 0; t < ids.size(); ++t) {
      if (ids[t] < 0 || ids[t] >= count()) throw Error(table.name + ": id " + std::to_string(ids[t]) + " out of range");
      out.col(static_cast<Eigen::Index>(t)) = table.value.col(ids[t]);
    }
    return out;
  }

  void backward(std::span<const TokenId> ids, const Matrix& dy) {
    for (std::size_t t = 0; t < ids.size(); ++t) table.grad.col(ids[t]) += dy.col(static_cast<Eigen::Index>(t));
  }

  void collect(ParamList& out) { out.push_back(&table); }
};

/// AdamW with decoupled weight decay (PyTorch defaults: betas 0.9/0.999, eps 1e-8, decay 0.01).
struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void step(const ParamList& params, double lr) const {
    for (Param* p : params) {
      ++p->step;
      const double t = static_cast<double>(p->step);
      p->value *= 1.0 - lr * weight_decay;
      p->adam_m = beta1 * p->adam_m + (1.0 - beta1) * p->grad;
      p->adam_v = beta2 * p->adam_v + (1.0 - beta2) * p->grad.cwiseAbs2();
      const double bc1 = 1.0 - std::pow(beta1, t);
      const double bc2 = 1.0 - std::pow(beta2, t);
      p->value.array() -= lr * (p->adam_m.array() / bc1) / ((p->adam_v.array() / bc2).sqrt() + eps);
    }
  }
};

inline double grad_norm(const ParamList& params) {
  double sq = 0;
  for (const Param* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

/// Scales gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
inline double clip_grad_norm(const ParamList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (Param* p : params) p->grad *= scale;
  }
  return norm;
}

inline void zero_grads(const ParamList& params) {
  for (Param* p : params) p->zero_grad();
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw Error("tensor size mismatch in checkpoint");
  return Eigen::Map<const Matrix>(data.data(), rows, cols);
}

template <class ParamPtrs>
nlohmann::json params_to_json(const ParamPtrs& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const Param* p : params) out[p->name] = matrix_to_json(p->value);
  return out;
}

inline void params_from_json(const ParamList& params, const nlohmann::json& j) {
  for (Param* p : params) {
    if (!j.contains(p->name)) throw Error("checkpoint is missing tensor " + p->name);
    Matrix m = matrix_from_json(j.at(p->name));
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw Error("checkpoint tensor " + p->name + " has the wrong shape");
    p->value = std::move(m);
  }
}

}  // namespace mgtd::nn
