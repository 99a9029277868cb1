#ifndef SSPRL_EVALUATE_HPP_
#define SSPRL_EVALUATE_HPP_

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "ssprl/common.hpp"
#include "ssprl/model.hpp"
#include "ssprl/pretrain.hpp"
#include "ssprl/pyramid.hpp"
#include "ssprl/rng.hpp"
#include "ssprl/synth.hpp"

namespace ssprl::evaluate {

constexpr std::uint64_t kProbeSalt = 0xe701;
constexpr std::uint64_t kFinetuneSalt = 0xe702;

enum class ApVariant { kClassic, kElevenPoint };

struct ProbeResult {
  std::vector<double> per_class_ap;  // NaN marks classes excluded from mAP
  double map = 0.0;
  std::string protocol;
  std::uint64_t seed = 0;
};

/// The un-augmented global view fed to the backbone for evaluation.
inline Image global_input(const Image& image, const pyramid::PyramidSpec& pspec) {
  Image out = resize_bilinear(image, pspec.patch_input_size, pspec.patch_input_size);
  const float mean = static_cast<float>(pspec.augment.normalize_mean);
  const float inv_std = static_cast<float>(1.0 / pspec.augment.normalize_std);
  for (float& v : out.data) v = (v - mean) * inv_std;
  return out;
}

/// Frozen-backbone features of the global view, one row per image. Heads and
/// prototypes are not involved.
template <typename T>
MatX<T> extract_features(model::TrainState<T>& state, const std::vector<Image>& images,
                         const pyramid::PyramidSpec& pspec) {
  const int n = static_cast<int>(images.size());
  const int dim = state.config.backbone_dim();
  MatX<T> features(n, dim);
  const int chunk = 128;
  for (int start = 0; start < n; start += chunk) {
    const int count = std::min(chunk, n - start);
    std::vector<Image> views;
    views.reserve(count);
    for (int i = 0; i < count; ++i) views.push_back(global_input(images[start + i], pspec));
    MatX<T> pooled = state.backbone.forward(model::patches_to_featuremap<T>(views));
    features.middleRows(start, count) = pooled.transpose();
  }
  return features;
}

/// Average precision with deterministic ties (equal scores rank by ascending
/// index). Classic variant: mean over positives at ranks r_1<...<r_P of
/// i / r_i. Eleven-point variant: mean of interpolated precision at recalls
/// 0, 0.1, ..., 1.0. Returns nullopt when there is no positive label.
inline std::optional<double> average_precision(const std::vector<double>& scores,
                                               const std::vector<int>& labels,
                                               ApVariant variant = ApVariant::kClassic) {
  if (scores.size() != labels.size())
    throw DimensionError("average_precision: scores/labels length mismatch");
  const int n = static_cast<int>(scores.size());
  int positives = 0;
  for (int l : labels) positives += (l != 0);
  if (positives == 0) return std::nullopt;

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  if (variant == ApVariant::kClassic) {
    double acc = 0.0;
    int hit = 0;
    for (int rank = 1; rank <= n; ++rank) {
      if (labels[order[rank - 1]] != 0) {
        ++hit;
        acc += static_cast<double>(hit) / rank;
      }
    }
    return acc / positives;
  }

  // Eleven-point interpolation.
  std::vector<double> recall, precision;
  int hit = 0;
  for (int rank = 1; rank <= n; ++rank) {
    if (labels[order[rank - 1]] != 0) {
      ++hit;
      recall.push_back(static_cast<double>(hit) / positives);
      precision.push_back(static_cast<double>(hit) / rank);
    }
  }
  double acc = 0.0;
  for (int i = 0; i <= 10; ++i) {
    const double r = i / 10.0;
    double best = 0.0;
    for (std::size_t j = 0; j < recall.size(); ++j)
      if (recall[j] >= r - 1e-12) best = std::max(best, precision[j]);
    acc += best;
  }
  return acc / 11.0;
}

/// Mean of the defined per-class APs; NaN entries are excluded.
inline double mean_ap(const std::vector<double>& per_class) {
  double acc = 0.0;
  int count = 0;
  for (double ap : per_class)
    if (!std::isnan(ap)) {
      acc += ap;
      ++count;
    }
  return count > 0 ? acc / count : 0.0;
}

struct ProbeOptions {
  int epochs = 40;
  double lr = 0.5;
  int batch_size = 32;
  double weight_decay = 1e-5;
  ApVariant ap_variant = ApVariant::kClassic;
};

namespace detail {

/// Scores one split and assembles per-class APs. Classes without a positive
/// validation label (or flagged as untrainable) come back as NaN.
inline ProbeResult score_probe(const MatX<double>& logits, const Eigen::MatrixXi& labels,
                               const std::vector<int>& val_idx,
                               const std::vector<bool>& trainable, ApVariant variant) {
  const int num_classes = static_cast<int>(labels.cols());
  ProbeResult result;
  result.per_class_ap.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < num_classes; ++c) {
    if (!trainable[c]) continue;
    std::vector<double> scores(val_idx.size());
    std::vector<int> truth(val_idx.size());
    for (std::size_t i = 0; i < val_idx.size(); ++i) {
      scores[i] = logits(static_cast<int>(i), c);
      truth[i] = labels(val_idx[i], c);
    }
    auto ap = average_precision(scores, truth, variant);
    if (ap) result.per_class_ap[c] = *ap;
  }
  result.map = mean_ap(result.per_class_ap);
  return result;
}

}  // namespace detail

/// Multi-label linear probe on frozen features: one linear layer with
/// per-class sigmoid + binary cross-entropy, minibatch SGD with momentum.
/// Features are standardized with statistics of the training split.
inline ProbeResult linear_probe(const MatX<double>& features, const Eigen::MatrixXi& labels,
                                const std::vector<int>& train_idx,
                                const std::vector<int>& val_idx, std::uint64_t seed,
                                const ProbeOptions& opt = {}) {
  if (features.rows() != labels.rows())
    throw DimensionError("linear_probe: features/labels row mismatch");
  if (train_idx.empty() || val_idx.empty())
    throw ConfigError("linear_probe: empty train or validation split");
  const int dim = static_cast<int>(features.cols());
  const int num_classes = static_cast<int>(labels.cols());

  VecX<double> mean = VecX<double>::Zero(dim), stddev = VecX<double>::Ones(dim);
  for (int i : train_idx) mean += features.row(i).transpose();
  mean /= static_cast<double>(train_idx.size());
  for (int i : train_idx)
    stddev += (features.row(i).transpose() - mean).cwiseAbs2();
  stddev = (stddev / static_cast<double>(train_idx.size())).cwiseSqrt().cwiseMax(1e-8);

  auto standardized = [&](int i) -> VecX<double> {
    return (features.row(i).transpose() - mean).cwiseQuotient(stddev);
  };

  std::vector<bool> trainable(num_classes, false);
  for (int c = 0; c < num_classes; ++c) {
    for (int i : train_idx)
      if (labels(i, c) != 0) {
        trainable[c] = true;
        break;
      }
    if (!trainable[c])
      std::cerr << "[ssprl] warning: class " << c
                << " has no positives in the probe training split; excluded from mAP\n";
  }

  MatX<double> w = MatX<double>::Zero(num_classes, dim);
  VecX<double> bias = VecX<double>::Zero(num_classes);
  MatX<double> vw = MatX<double>::Zero(num_classes, dim);
  VecX<double> vb = VecX<double>::Zero(num_classes);

  RandomStream rng(derive_seed(seed, kProbeSalt));
  std::vector<int> order = train_idx;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      MatX<double> gw = MatX<double>::Zero(num_classes, dim);
      VecX<double> gb = VecX<double>::Zero(num_classes);
      for (std::size_t j = start; j < stop; ++j) {
        const int i = order[j];
        VecX<double> x = standardized(i);
        VecX<double> logit = w * x + bias;
        for (int c = 0; c < num_classes; ++c) {
          const double p = 1.0 / (1.0 + std::exp(-logit(c)));
          const double g = p - static_cast<double>(labels(i, c));
          gw.row(c) += g * x.transpose();
          gb(c) += g;
        }
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      vw = 0.9 * vw + scale * gw + opt.weight_decay * w;
      vb = 0.9 * vb + scale * gb;
      w -= opt.lr * vw;
      bias -= opt.lr * vb;
    }
  }

  MatX<double> logits(static_cast<int>(val_idx.size()), num_classes);
  for (std::size_t i = 0; i < val_idx.size(); ++i)
    logits.row(static_cast<int>(i)) = (w * standardized(val_idx[i]) + bias).transpose();
  ProbeResult result = detail::score_probe(logits, labels, val_idx, trainable, opt.ap_variant);
  result.protocol = "linear";
  result.seed = seed;
  return result;
}

struct FinetuneOptions {
  int epochs = 20;  // paper protocol
  double lr = 0.02;
  int batch_size = 32;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  ApVariant ap_variant = ApVariant::kClassic;
};

/// Semi-supervised protocol: unfreeze the whole backbone, attach a fresh
/// linear head, train with BCE on `fraction` of the training pool, and score
/// mAP on the validation indices.
template <typename T>
ProbeResult semi_supervised_finetune(model::TrainState<T>& state,
                                     const synth::LabeledImageSet& dataset,
                                     const pyramid::PyramidSpec& pspec,
                                     const std::vector<int>& train_pool,
                                     const std::vector<int>& val_idx, double fraction,
                                     std::uint64_t seed, const FinetuneOptions& opt = {}) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("semi_supervised_finetune: fraction must lie in (0, 1]");
  const int num_classes = static_cast<int>(dataset.labels.cols());
  const int dim = state.config.backbone_dim();

  // Labeled subset: nested across fractions for a fixed seed.
  auto nested = synth::split_indices(static_cast<int>(train_pool.size()), {fraction},
                                     derive_seed(seed, kFinetuneSalt));
  std::vector<int> labeled;
  for (int j : nested[0]) labeled.push_back(train_pool[j]);
  if (labeled.empty()) throw ConfigError("semi_supervised_finetune: fraction selects no images");

  std::vector<bool> trainable(num_classes, false);
  for (int c = 0; c < num_classes; ++c) {
    for (int i : labeled)
      if (dataset.labels(i, c) != 0) {
        trainable[c] = true;
        break;
      }
    if (!trainable[c])
      std::cerr << "[ssprl] warning: class " << c
                << " has no positives in the labeled fraction; excluded from mAP\n";
  }

  // Fresh head, small random init.
  RandomStream rng(derive_seed(seed, kFinetuneSalt, std::uint64_t(1)));
  MatX<T> w(num_classes, dim);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      w(i, j) = static_cast<T>(rng.normal(0.0, 0.01));
  VecX<T> bias = VecX<T>::Zero(num_classes);

  auto params = state.collect_params();
  pretrain::SgdMomentum<T> optimizer;
  optimizer.momentum = opt.momentum;
  optimizer.weight_decay = opt.weight_decay;
  optimizer.init(params);
  MatX<T> vw = MatX<T>::Zero(num_classes, dim);
  VecX<T> vb = VecX<T>::Zero(num_classes);

  std::vector<int> order = labeled;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + opt.batch_size);
      const int count = static_cast<int>(stop - start);
      std::vector<Image> views;
      for (std::size_t j = start; j < stop; ++j)
        views.push_back(global_input(dataset.images[order[j]], pspec));
      MatX<T> pooled = state.backbone.forward(model::patches_to_featuremap<T>(views));
      MatX<T> logits = w * pooled;
      logits.colwise() += bias;
      MatX<T> dlogits(num_classes, count);
      for (int j = 0; j < count; ++j)
        for (int c = 0; c < num_classes; ++c) {
          const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits(c, j))));
          dlogits(c, j) =
              static_cast<T>((p - dataset.labels(order[start + j], c)) / count);
        }
      state.zero_grads();
      MatX<T> dpooled = w.transpose() * dlogits;
      state.backbone.backward(dpooled);
      const T scale_lr = static_cast<T>(opt.lr);
      vw = static_cast<T>(opt.momentum) * vw + dlogits * pooled.transpose() +
           static_cast<T>(opt.weight_decay) * w;
      vb = static_cast<T>(opt.momentum) * vb + dlogits.rowwise().sum();
      w -= scale_lr * vw;
      bias -= scale_lr * vb;
      optimizer.step(params, opt.lr);
    }
  }

  // Score the validation split with the fine-tuned network.
  MatX<double> val_logits(static_cast<int>(val_idx.size()), num_classes);
  const int chunk = 128;
  for (int start = 0; start < static_cast<int>(val_idx.size()); start += chunk) {
    const int count = std::min(chunk, static_cast<int>(val_idx.size()) - start);
    std::vector<Image> views;
    for (int i = 0; i < count; ++i)
      views.push_back(global_input(dataset.images[val_idx[start + i]], pspec));
    MatX<T> pooled = state.backbone.forward(model::patches_to_featuremap<T>(views));
    MatX<T> logits = w * pooled;
    logits.colwise() += bias;
    val_logits.middleRows(start, count) = logits.transpose().template cast<double>();
  }
  ProbeResult result =
      detail::score_probe(val_logits, dataset.labels, val_idx, trainable, opt.ap_variant);
  char tag[32];
  std::snprintf(tag, sizeof(tag), "finetune-%g%%", fraction * 100.0);
  result.protocol = tag;
  result.seed = seed;
  return result;
}

}  // namespace ssprl::evaluate

#endif  // SSPRL_EVALUATE_HPP_
