#ifndef SSPRL_ASSIGNMENT_HPP_
#define SSPRL_ASSIGNMENT_HPP_

#include <cmath>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include "ssprl/common.hpp"
#include "ssprl/nn.hpp"

namespace ssprl::assignment {

struct SinkhornConfig {
  double epsilon = 0.05;
  int iterations = 3;

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("SinkhornConfig.epsilon must be > 0");
    if (iterations < 1) throw ConfigError("SinkhornConfig.iterations must be >= 1");
  }
};

/// Cosine scores between unit-norm embeddings and unit-norm prototypes:
/// entry (k, m) = z_m . c_k. Callers are responsible for normalization.
template <typename T>
MatX<T> prototype_scores(const MatX<T>& z, const MatX<T>& c) {
  if (z.rows() != c.rows())
    throw DimensionError("prototype_scores: embedding dim " + std::to_string(z.rows()) +
                         " vs prototype dim " + std::to_string(c.rows()));
  return c.transpose() * z;
}

/// Column-wise softmax of logits / tau.
template <typename T>
MatX<T> soft_assign(const MatX<T>& logits, double tau) {
  if (!(tau > 0.0)) throw ConfigError("soft_assign: temperature must be > 0");
  return nn::colwise_softmax<T>(logits / static_cast<T>(tau));
}

/// Balanced assignments via Sinkhorn-Knopp. Starting from
/// exp((logits - colmax) / epsilon), rows are scaled to sum 1/K and columns
/// to sum 1/B alternately for the configured number of rounds (each round
/// ends on the column step), then columns are rescaled to sum exactly 1.
/// Row sums of the result approach B/K as iterations grow. The output is a
/// constant training target; nothing differentiates through it.
///
/// If `row_violation_trace` is non-null it receives, per completed round,
/// sum_k |row_sum_k - B/K| measured on the column-rescaled matrix.
template <typename T>
MatX<T> sinkhorn_assign(const MatX<T>& logits, const SinkhornConfig& cfg,
                        std::vector<double>* row_violation_trace = nullptr,
                        bool warn_small_batch = true) {
  cfg.validate();
  // -inf logits are tolerated (exp -> 0); NaN and +inf are not.
  if (logits.array().isNaN().any() ||
      (logits.array() == std::numeric_limits<T>::infinity()).any())
    throw NumericError("sinkhorn_assign: non-finite logits");
  const Eigen::Index k = logits.rows();
  const Eigen::Index b = logits.cols();
  if (k < 1 || b < 1) throw DimensionError("sinkhorn_assign: empty logits");
  if (warn_small_batch && b < k)
    std::cerr << "[ssprl] warning: sinkhorn_assign with fewer columns (" << b
              << ") than prototypes (" << k << "); equal partition is coarse\n";

  MatX<T> q(k, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    T m = logits.col(j).maxCoeff();
    if (!std::isfinite(static_cast<double>(m)))
      throw NumericError("sinkhorn_assign: column " + std::to_string(j) +
                         " has no finite logit");
    q.col(j) = ((logits.col(j).array() - m) / static_cast<T>(cfg.epsilon)).exp();
  }

  const T row_target = T(1) / T(k);
  const T col_target = T(1) / T(b);
  for (int it = 0; it < cfg.iterations; ++it) {
    VecX<T> row_sums = q.rowwise().sum();
    for (Eigen::Index i = 0; i < k; ++i) {
      T s = row_sums(i);
      if (s > T(0)) q.row(i) *= row_target / s;
    }
    Eigen::Matrix<T, 1, Eigen::Dynamic> col_sums = q.colwise().sum();
    for (Eigen::Index j = 0; j < b; ++j) {
      T s = col_sums(j);
      if (s <= T(0)) throw NumericError("sinkhorn_assign: column collapsed to zero");
      q.col(j) *= col_target / s;
    }
    if (row_violation_trace) {
      double v = 0.0;
      VecX<T> rs = q.rowwise().sum() * T(b);  // in the columns-sum-to-1 scaling
      for (Eigen::Index i = 0; i < k; ++i)
        v += std::abs(static_cast<double>(rs(i)) - static_cast<double>(b) / k);
      row_violation_trace->push_back(v);
    }
  }
  q *= T(b);  // columns now sum to 1
  return q;
}

/// Mean column entropy of a column-stochastic matrix, in nats.
template <typename T>
double mean_column_entropy(const MatX<T>& q) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    double h = 0.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      double v = static_cast<double>(q(i, j));
      if (v > 0.0) h -= v * std::log(v);
    }
    total += h;
  }
  return q.cols() > 0 ? total / static_cast<double>(q.cols()) : 0.0;
}

}  // namespace ssprl::assignment

#endif  // SSPRL_ASSIGNMENT_HPP_
