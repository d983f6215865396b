#pragma once

// Linear-chain CRF over per-token emission scores.
//
// A path y_0..y_{T-1} scores
//   start[y_0] + sum_t emissions(t, y_t) + sum_{t>0} transitions(y_{t-1}, y_t) + end[y_{T-1}]
// and the model distribution is p(y) = exp(score(y) - log Z).

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "mgtd/nn.hpp"
#include "mgtd/types.hpp"

namespace mgtd::crf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rows are tokens, columns are tags.
using EmissionMatrix = Matrix;

struct CrfParams {
  Matrix transitions;  // transitions(i, j): moving from tag i to tag j
  Vector start_scores;
  Vector end_scores;

  static CrfParams zeros(int num_tags) {
    return {Matrix::Zero(num_tags, num_tags), Vector::Zero(num_tags), Vector::Zero(num_tags)};
  }

  int num_tags() const { return static_cast<int>(transitions.rows()); }

  void validate(const EmissionMatrix& emissions) const {
    if (transitions.rows() != transitions.cols()) throw Error("CRF transition matrix must be square");
    if (start_scores.size() != transitions.rows() || end_scores.size() != transitions.rows())
      throw Error("CRF start/end scores must have one entry per tag");
    if (emissions.cols() != transitions.rows())
      throw Error("emission tag count " + std::to_string(emissions.cols()) + " does not match CRF tag count " +
                  std::to_string(transitions.rows()));
    if (!transitions.allFinite() || !start_scores.allFinite() || !end_scores.allFinite())
      throw Error("CRF parameters must be finite");
  }
};

struct CrfGradients {
  Matrix emissions;
  Matrix transitions;
  Vector start_scores;
  Vector end_scores;
};

namespace detail {

inline double lse(const Vector& v) {
  const double m = v.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// alpha(t, j): log-sum of scores of all prefixes ending in tag j at t (emission included).
inline Matrix forward_table(const EmissionMatrix& e, const CrfParams& p) {
  const auto T = e.rows();
  const auto K = e.cols();
  Matrix alpha(T, K);
  alpha.row(0) = p.start_scores.transpose() + e.row(0);
  for (Eigen::Index t = 1; t < T; ++t)
    for (Eigen::Index j = 0; j < K; ++j) alpha(t, j) = e(t, j) + lse(alpha.row(t - 1).transpose() + p.transitions.col(j));
  return alpha;
}

/// beta(t, i): log-sum of scores of all suffixes after t given tag i at t (end score included).
inline Matrix backward_table(const EmissionMatrix& e, const CrfParams& p) {
  const auto T = e.rows();
  const auto K = e.cols();
  Matrix beta(T, K);
  beta.row(T - 1) = p.end_scores.transpose();
  for (Eigen::Index t = T - 1; t-- > 0;)
    for (Eigen::Index i = 0; i < K; ++i)
      beta(t, i) = lse(p.transitions.row(i).transpose() + e.row(t + 1).transpose() + beta.row(t + 1).transpose());
  return beta;
}

}  // namespace detail

inline double score_sequence(const EmissionMatrix& emissions, std::span<const int> tags, const CrfParams& params) {
  params.validate(emissions);
  if (static_cast<Eigen::Index>(tags.size()) != emissions.rows())
    throw Error("tag sequence length " + std::to_string(tags.size()) + " does not match " +
                std::to_string(emissions.rows()) + " emission rows");
  if (tags.empty()) throw Error("cannot score an empty sequence");
  for (int t : tags)
    if (t < 0 || t >= params.num_tags()) throw Error("tag " + std::to_string(t) + " out of range");
  double s = params.start_scores(tags[0]) + params.end_scores(tags.back());
  for (std::size_t t = 0; t < tags.size(); ++t) {
    s += emissions(static_cast<Eigen::Index>(t), tags[t]);
    if (t > 0) s += params.transitions(tags[t - 1], tags[t]);
  }
  return s;
}

inline double log_partition(const EmissionMatrix& emissions, const CrfParams& params) {
  params.validate(emissions);
  if (emissions.rows() < 1) throw Error("log_partition needs at least one emission row");
  const Matrix alpha = detail::forward_table(emissions, params);
  return detail::lse(alpha.row(emissions.rows() - 1).transpose() + params.end_scores);
}

inline double nll(const EmissionMatrix& emissions, std::span<const int> tags, const CrfParams& params) {
  return log_partition(emissions, params) - score_sequence(emissions, tags, params);
}

/// Negative log-likelihood plus its gradient (expected minus observed feature counts).
inline double nll_with_gradient(const EmissionMatrix& emissions, std::span<const int> tags, const CrfParams& params,
                                CrfGradients& grad) {
  const double gold = score_sequence(emissions, tags, params);
  const auto T = emissions.rows();
  const auto K = emissions.cols();
  const Matrix alpha = detail::forward_table(emissions, params);
  const Matrix beta = detail::backward_table(emissions, params);
  const double log_z = detail::lse(alpha.row(T - 1).transpose() + params.end_scores);

  grad.emissions = ((alpha + beta).array() - log_z).exp().matrix();
  grad.start_scores = grad.emissions.row(0).transpose();
  grad.end_scores = grad.emissions.row(T - 1).transpose();
  grad.transitions = Matrix::Zero(K, K);
  for (Eigen::Index t = 0; t + 1 < T; ++t)
    for (Eigen::Index i = 0; i < K; ++i)
      for (Eigen::Index j = 0; j < K; ++j)
        grad.transitions(i, j) +=
            std::exp(alpha(t, i) + params.transitions(i, j) + emissions(t + 1, j) + beta(t + 1, j) - log_z);

  for (Eigen::Index t = 0; t < T; ++t) {
    grad.emissions(t, tags[static_cast<std::size_t>(t)]) -= 1.0;
    if (t > 0) grad.transitions(tags[static_cast<std::size_t>(t - 1)], tags[static_cast<std::size_t>(t)]) -= 1.0;
  }
  grad.start_scores(tags.front()) -= 1.0;
  grad.end_scores(tags.back()) -= 1.0;
  return log_z - gold;
}

/// Highest-scoring path; ties resolve to the lower tag index at every step.
inline std::vector<int> viterbi(const EmissionMatrix& emissions, const CrfParams& params) {
  params.validate(emissions);
  const auto T = emissions.rows();
  const auto K = emissions.cols();
  if (T < 1) throw Error("viterbi needs at least one emission row");
  Matrix delta(T, K);
  Eigen::MatrixXi back(T, K);
  delta.row(0) = params.start_scores.transpose() + emissions.row(0);
  for (Eigen::Index t = 1; t < T; ++t) {
    for (Eigen::Index j = 0; j < K; ++j) {
      Eigen::Index best = 0;
      double best_score = delta(t - 1, 0) + params.transitions(0, j);
      for (Eigen::Index i = 1; i < K; ++i) {
        const double s = delta(t - 1, i) + params.transitions(i, j);
        if (s > best_score) {
          best_score = s;
          best = i;
        }
      }
      delta(t, j) = best_score + emissions(t, j);
      back(t, j) = static_cast<int>(best);
    }
  }
  Eigen::Index last = 0;
  double best_final = delta(T - 1, 0) + params.end_scores(0);
  for (Eigen::Index j = 1; j < K; ++j) {
    const double s = delta(T - 1, j) + params.end_scores(j);
    if (s > best_final) {
      best_final = s;
      last = j;
    }
  }
  std::vector<int> path(static_cast<std::size_t>(T));
  path.back() = static_cast<int>(last);
  for (Eigen::Index t = T - 1; t > 0; --t)
    path[static_cast<std::size_t>(t - 1)] = back(t, path[static_cast<std::size_t>(t)]);
  return path;
}

}  // namespace mgtd::crf
