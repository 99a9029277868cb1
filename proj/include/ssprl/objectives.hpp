#ifndef SSPRL_OBJECTIVES_HPP_
#define SSPRL_OBJECTIVES_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "ssprl/common.hpp"
#include "ssprl/model.hpp"

namespace ssprl::objectives {

constexpr double kLogClamp = 1e-12;  // floor on predictions before log

struct LossWeights {
  std::vector<double> alpha;  // per scale 0..S
  std::vector<double> beta;   // per scale 1..S (beta[s-1])
  double lambda = 1.0;
  bool cross_view_correlation = false;  // pair Q_0' with P_s instead of Q_0

  LossWeights() = default;
  /// Paper defaults: weight 1.0 at scale 0 and 0.25 elsewhere; lambda 1.0.
  explicit LossWeights(int num_scales) {
    alpha.assign(num_scales + 1, 0.25);
    alpha[0] = 1.0;
    beta.assign(num_scales, 0.25);
  }

  void validate(int num_scales) const {
    if (static_cast<int>(alpha.size()) != num_scales + 1)
      throw ConfigError("LossWeights.alpha must have one entry per scale 0..S");
    if (static_cast<int>(beta.size()) != num_scales)
      throw ConfigError("LossWeights.beta must have one entry per scale 1..S");
    for (double a : alpha)
      if (a < 0.0) throw ConfigError("LossWeights.alpha entries must be >= 0");
    for (double b : beta)
      if (b < 0.0) throw ConfigError("LossWeights.beta entries must be >= 0");
    if (lambda < 0.0) throw ConfigError("LossWeights.lambda must be >= 0");
  }
};

struct LossBreakdown {
  double l_pyr = 0.0;
  double l_cross = 0.0;
  double total = 0.0;
  std::vector<double> per_scale_pyr;    // size S+1
  std::vector<double> per_scale_cross;  // size S+1, entry 0 always 0
};

/// -sum_k q_k log p_k with p clamped at 1e-12.
template <typename T>
double cross_entropy(const VecX<T>& q, const VecX<T>& p) {
  if (q.size() != p.size())
    throw DimensionError("cross_entropy: length mismatch " + std::to_string(q.size()) +
                         " vs " + std::to_string(p.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    double pi = std::max(static_cast<double>(p(i)), kLogClamp);
    acc -= static_cast<double>(q(i)) * std::log(pi);
  }
  return acc;
}

/// Column-wise cross-entropy summed over all columns of equal-shaped matrices.
template <typename T>
double cross_entropy_cols(const MatX<T>& q, const MatX<T>& p) {
  if (q.rows() != p.rows() || q.cols() != p.cols())
    throw DimensionError("cross_entropy_cols: shape mismatch");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < q.cols(); ++j)
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      double pi = std::max(static_cast<double>(p(i, j)), kLogClamp);
      acc -= static_cast<double>(q(i, j)) * std::log(pi);
    }
  return acc;
}

/// Mean of the M_s columns; stays on the simplex.
template <typename T>
VecX<T> pool_over_patches(const MatX<T>& p) {
  if (p.cols() < 1) throw DimensionError("pool_over_patches: no columns");
  return p.rowwise().sum() / T(p.cols());
}

/// Swapped-prediction pyramid loss for one image:
///   sum_s (alpha_s / M_s) sum_m [ CE(q'_{s,m}, p_{s,m}) + CE(q_{s,m}, p'_{s,m}) ].
/// Targets supervise the opposite view's predictions.
template <typename T>
double pyramid_loss(const std::vector<MatX<T>>& p, const std::vector<MatX<T>>& p_prime,
                    const std::vector<MatX<T>>& q, const std::vector<MatX<T>>& q_prime,
                    const LossWeights& weights,
                    std::vector<double>* per_scale = nullptr) {
  const int num_scales = static_cast<int>(p.size()) - 1;
  if (p_prime.size() != p.size() || q.size() != p.size() || q_prime.size() != p.size())
    throw DimensionError("pyramid_loss: per-scale list sizes differ");
  weights.validate(num_scales);
  if (per_scale) per_scale->assign(num_scales + 1, 0.0);
  double total = 0.0;
  for (int s = 0; s <= num_scales; ++s) {
    const double m_s = static_cast<double>(p[s].cols());
    double term = cross_entropy_cols(q_prime[s], p[s]) + cross_entropy_cols(q[s], p_prime[s]);
    term *= weights.alpha[s] / m_s;
    if (per_scale) (*per_scale)[s] = term;
    total += term;
  }
  return total;
}

/// Cross-scale correlation loss for one image. Pooled patch assignments are
/// projected onto the scale-0 prototype space by the learners; by default
/// the pairing is same-view, exactly as written:
///   sum_{s>=1} beta_s [ CE(q_0, g_s(mu(P_s))) + CE(q_0', g_s(mu(P_s'))) ].
template <typename T>
double cross_scale_loss(model::TrainState<T>& state, const VecX<T>& q0,
                        const VecX<T>& q0_prime, const std::vector<VecX<T>>& pooled,
                        const std::vector<VecX<T>>& pooled_prime,
                        const LossWeights& weights,
                        std::vector<double>* per_scale = nullptr) {
  const int num_scales = state.config.num_scales;
  if (static_cast<int>(pooled.size()) != num_scales || pooled_prime.size() != pooled.size())
    throw DimensionError("cross_scale_loss: expected pooled vectors for scales 1..S");
  weights.validate(num_scales);
  if (per_scale) per_scale->assign(num_scales + 1, 0.0);
  double total = 0.0;
  for (int s = 1; s <= num_scales; ++s) {
    VecX<T> r = model::correlate(state, s, pooled[s - 1]);
    VecX<T> r_prime = model::correlate(state, s, pooled_prime[s - 1]);
    const VecX<T>& t = weights.cross_view_correlation ? q0_prime : q0;
    const VecX<T>& t_prime = weights.cross_view_correlation ? q0 : q0_prime;
    double term = weights.beta[s - 1] * (cross_entropy(t, r) + cross_entropy(t_prime, r_prime));
    if (per_scale) (*per_scale)[s] = term;
    total += term;
  }
  return total;
}

inline LossBreakdown total_loss(double l_pyr, double l_cross, double lambda) {
  if (!std::isfinite(l_pyr) || !std::isfinite(l_cross) || !std::isfinite(lambda))
    throw NumericError("total_loss: non-finite input");
  LossBreakdown out;
  out.l_pyr = l_pyr;
  out.l_cross = l_cross;
  out.total = l_pyr + lambda * l_cross;
  return out;
}

}  // namespace ssprl::objectives

#endif  // SSPRL_OBJECTIVES_HPP_
