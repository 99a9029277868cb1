#ifndef SSPRL_MODEL_HPP_
#define SSPRL_MODEL_HPP_

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "ssprl/common.hpp"
#include "ssprl/nn.hpp"
#include "ssprl/pyramid.hpp"
#include "ssprl/rng.hpp"

namespace ssprl::model {

struct EncoderConfig {
  std::vector<int> channels = {32, 64, 128};  // conv stage widths
  int embed_dim = 64;                          // D
  int head_hidden_dim = 128;
  int num_scales = 2;                          // S; heads run s = 0..S
  std::vector<int> prototype_counts = {32, 48, 64};  // K_s
  int correlator_hidden_dim = 64;

  void validate() const {
    if (channels.empty()) throw ConfigError("EncoderConfig.channels must be non-empty");
    for (int c : channels)
      if (c < 1) throw ConfigError("EncoderConfig.channels entries must be >= 1");
    if (embed_dim < 2) throw ConfigError("EncoderConfig.embed_dim must be >= 2");
    if (head_hidden_dim < 1) throw ConfigError("EncoderConfig.head_hidden_dim must be >= 1");
    if (num_scales < 0) throw ConfigError("EncoderConfig.num_scales must be >= 0");
    if (static_cast<int>(prototype_counts.size()) != num_scales + 1)
      throw ConfigError("EncoderConfig.prototype_counts must list K_s for every scale 0..S");
    for (int k : prototype_counts)
      if (k < 2) throw ConfigError("EncoderConfig.prototype_counts entries must be >= 2");
    if (correlator_hidden_dim < 1)
      throw ConfigError("EncoderConfig.correlator_hidden_dim must be >= 1");
  }

  int backbone_dim() const { return channels.back(); }
  int pool_factor() const { return 1 << static_cast<int>(channels.size()); }
};

/// Conv stages (3x3 conv + ReLU + 2x2 max pool) followed by global average
/// pooling. Input patches must be divisible by 2^stages.
template <typename T>
struct Backbone {
  std::vector<nn::Conv3x3<T>> convs;
  std::vector<nn::ReLU<T>> relus;
  std::vector<nn::MaxPool2<T>> pools;
  nn::GlobalAvgPool<T> gap;

  Backbone() = default;
  Backbone(const EncoderConfig& cfg, RandomStream& rng) {
    int in = 3;
    for (int c : cfg.channels) {
      convs.emplace_back(in, c, rng);
      relus.emplace_back();
      pools.emplace_back();
      in = c;
    }
  }

  /// Returns pooled features, channels.back() x N.
  MatX<T> forward(const nn::FeatureMap<T>& patches) {
    nn::FeatureMap<T> x = patches;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      x = convs[i].forward(x);
      if (!x.data.allFinite())
        throw NumericError("Backbone: non-finite activations in conv layer " + std::to_string(i));
      x = relus[i].forward(x);
      x = pools[i].forward(x);
    }
    MatX<T> pooled = gap.forward(x);
    if (!pooled.allFinite()) throw NumericError("Backbone: non-finite pooled features");
    return pooled;
  }

  /// Backward from d(pooled features); accumulates parameter grads.
  void backward(const MatX<T>& dpooled) {
    nn::FeatureMap<T> dx = gap.backward(dpooled);
    for (int i = static_cast<int>(convs.size()) - 1; i >= 0; --i) {
      dx = pools[i].backward(dx);
      dx = relus[i].backward(dx);
      dx = convs[i].backward(dx);
    }
  }

  void zero_grads() {
    for (auto& c : convs) c.zero_grads();
  }
  void collect(const std::string& prefix, std::vector<nn::ParamRef<T>>& out) {
    for (std::size_t i = 0; i < convs.size(); ++i)
      convs[i].collect(prefix + ".conv" + std::to_string(i), out);
  }
};

/// linear -> ReLU -> linear -> column L2 normalization.
template <typename T>
struct ProjectionHead {
  nn::Linear<T> l1, l2;
  nn::L2NormalizeCols<T> norm;

  ProjectionHead() = default;
  ProjectionHead(int in, int hidden, int out, RandomStream& rng)
      : l1(in, hidden, rng), l2(hidden, out, rng) {}

  MatX<T> forward(const MatX<T>& features) {
    a1_ = l1.forward(features);
    MatX<T> h = a1_.cwiseMax(T(0));
    MatX<T> y = l2.forward(h);
    if (!y.allFinite()) throw NumericError("ProjectionHead: non-finite activations");
    return norm.forward(y);
  }

  MatX<T> backward(const MatX<T>& dz) {
    MatX<T> dy = norm.backward(dz);
    MatX<T> dh = l2.backward(dy);
    dh = (a1_.array() > T(0)).select(dh, MatX<T>::Zero(dh.rows(), dh.cols()));
    return l1.backward(dh);
  }

  void zero_grads() {
    l1.zero_grads();
    l2.zero_grads();
  }
  void collect(const std::string& prefix, std::vector<nn::ParamRef<T>>& out) {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
  }

 private:
  MatX<T> a1_;
};

/// Two-layer perceptron from K_s to K_0 with a softmax output.
template <typename T>
struct CorrelationLearner {
  nn::Linear<T> l1, l2;

  CorrelationLearner() = default;
  CorrelationLearner(int k_in, int hidden, int k_out, RandomStream& rng)
      : l1(k_in, hidden, rng), l2(hidden, k_out, rng) {}

  /// Columns of u are probability vectors; returns column-stochastic output.
  MatX<T> forward(const MatX<T>& u) {
    a1_ = l1.forward(u);
    MatX<T> h = a1_.cwiseMax(T(0));
    MatX<T> logits = l2.forward(h);
    probs_ = nn::colwise_softmax(logits);
    return probs_;
  }

  const MatX<T>& probs() const { return probs_; }

  /// Backward from d(logits); accumulates grads, returns d(input).
  MatX<T> backward_from_dlogits(const MatX<T>& dlogits) {
    MatX<T> dh = l2.backward(dlogits);
    dh = (a1_.array() > T(0)).select(dh, MatX<T>::Zero(dh.rows(), dh.cols()));
    return l1.backward(dh);
  }

  void zero_grads() {
    l1.zero_grads();
    l2.zero_grads();
  }
  void collect(const std::string& prefix, std::vector<nn::ParamRef<T>>& out) {
    l1.collect(prefix + ".l1", out);
    l2.collect(prefix + ".l2", out);
  }

 private:
  MatX<T> a1_;
  MatX<T> probs_;
};

constexpr std::uint64_t kInitSalt = 0x4d31;
constexpr std::uint64_t kProtoReinitSalt = 0x4d32;

template <typename T>
struct TrainState {
  EncoderConfig config;
  Backbone<T> backbone;
  std::vector<ProjectionHead<T>> heads;          // S+1
  std::vector<MatX<T>> prototypes;               // C_s, D x K_s, unit columns
  std::vector<MatX<T>> prototype_grads;
  std::vector<CorrelationLearner<T>> correlators;  // s = 1..S
  std::int64_t step = 0;
  std::uint64_t seed = 0;

  TrainState() = default;

  TrainState(const EncoderConfig& cfg, std::uint64_t seed_) : config(cfg), seed(seed_) {
    cfg.validate();
    RandomStream rng(derive_seed(seed_, kInitSalt));
    backbone = Backbone<T>(cfg, rng);
    for (int s = 0; s <= cfg.num_scales; ++s)
      heads.emplace_back(cfg.backbone_dim(), cfg.head_hidden_dim, cfg.embed_dim, rng);
    for (int s = 0; s <= cfg.num_scales; ++s) {
      MatX<T> c(cfg.embed_dim, cfg.prototype_counts[s]);
      nn::he_normal_init(c, cfg.embed_dim, rng);
      for (Eigen::Index j = 0; j < c.cols(); ++j) c.col(j) /= c.col(j).norm();
      prototypes.push_back(c);
      prototype_grads.push_back(MatX<T>::Zero(c.rows(), c.cols()));
    }
    for (int s = 1; s <= cfg.num_scales; ++s)
      correlators.emplace_back(cfg.prototype_counts[s], cfg.correlator_hidden_dim,
                               cfg.prototype_counts[0], rng);
  }

  void zero_grads() {
    backbone.zero_grads();
    for (auto& h : heads) h.zero_grads();
    for (auto& g : prototype_grads) g.setZero();
    for (auto& c : correlators) c.zero_grads();
  }

  /// Stable parameter enumeration used by the optimizer and checkpoints.
  std::vector<nn::ParamRef<T>> collect_params() {
    std::vector<nn::ParamRef<T>> out;
    backbone.collect("backbone", out);
    for (std::size_t s = 0; s < heads.size(); ++s)
      heads[s].collect("head" + std::to_string(s), out);
    for (std::size_t s = 0; s < prototypes.size(); ++s)
      out.push_back({"prototypes" + std::to_string(s), &prototypes[s],
                     &prototype_grads[s], false});
    for (std::size_t s = 0; s < correlators.size(); ++s)
      correlators[s].collect("correlator" + std::to_string(s + 1), out);
    return out;
  }
};

/// Converts patches (CHW float images) into a feature-map batch.
template <typename T>
nn::FeatureMap<T> patches_to_featuremap(const std::vector<Image>& patches) {
  if (patches.empty()) throw DimensionError("patches_to_featuremap: empty patch list");
  const int h = patches[0].height, w = patches[0].width, c = patches[0].channels;
  nn::FeatureMap<T> fm(c, h, w, static_cast<int>(patches.size()));
  for (std::size_t n = 0; n < patches.size(); ++n) {
    const Image& im = patches[n];
    if (im.height != h || im.width != w || im.channels != c)
      throw DimensionError("patches_to_featuremap: inconsistent patch shapes");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < c; ++ch)
          fm.data(ch, static_cast<int>(n) * h * w + y * w + x) = static_cast<T>(im.at(ch, y, x));
  }
  return fm;
}

/// Shared backbone + scale-s projection head; every output column has unit
/// Euclidean norm. Forward passes cache activations, so callers that need
/// concurrency must operate on their own TrainState snapshot.
template <typename T>
MatX<T> encode(TrainState<T>& state, const pyramid::PatchGroup& group) {
  if (group.scale < 0 || group.scale >= static_cast<int>(state.heads.size()))
    throw DimensionError("encode: scale out of range");
  nn::FeatureMap<T> fm = patches_to_featuremap<T>(group.patches);
  MatX<T> pooled = state.backbone.forward(fm);
  return state.heads[group.scale].forward(pooled);
}

template <typename T>
struct FeaturePyramid {
  std::vector<MatX<T>> z;  // per scale, D x M_s
};

template <typename T>
std::pair<FeaturePyramid<T>, FeaturePyramid<T>> encode_pyramid(
    TrainState<T>& state, const pyramid::PyramidPair& pair) {
  FeaturePyramid<T> a, b;
  for (const auto& group : pair.view) a.z.push_back(encode(state, group));
  for (const auto& group : pair.view_prime) b.z.push_back(encode(state, group));
  return {a, b};
}

/// Forward pass of the scale-s correlation learner on one pooled probability
/// vector (s in 1..S).
template <typename T>
VecX<T> correlate(TrainState<T>& state, int scale, const VecX<T>& pooled) {
  if (scale < 1 || scale > static_cast<int>(state.correlators.size()))
    throw DimensionError("correlate: scale must be in 1..S");
  if (pooled.size() != state.config.prototype_counts[scale])
    throw DimensionError("correlate: input length " + std::to_string(pooled.size()) +
                         ", expected " + std::to_string(state.config.prototype_counts[scale]));
  T sum = pooled.sum();
  if (std::abs(static_cast<double>(sum) - 1.0) > 1e-6 || pooled.minCoeff() < T(0))
    throw DimensionError("correlate: input must lie on the probability simplex");
  MatX<T> u = pooled;
  return state.correlators[scale - 1].forward(u).col(0);
}

/// Rescales every prototype column to unit norm. A zero column is
/// re-initialized from the state's stream and a warning is emitted.
template <typename T>
void renormalize_prototypes(TrainState<T>& state) {
  for (std::size_t s = 0; s < state.prototypes.size(); ++s) {
    MatX<T>& c = state.prototypes[s];
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      T n = c.col(j).norm();
      if (n < T(1e-12)) {
        std::cerr << "[ssprl] warning: zero prototype column (scale " << s << ", k " << j
                  << "); reinitializing\n";
        RandomStream rng(derive_seed(state.seed, kProtoReinitSalt,
                                     static_cast<std::uint64_t>(state.step),
                                     static_cast<std::uint64_t>(s),
                                     static_cast<std::uint64_t>(j)));
        for (Eigen::Index i = 0; i < c.rows(); ++i)
          c(i, j) = static_cast<T>(rng.normal());
        n = c.col(j).norm();
      }
      c.col(j) /= n;
    }
  }
}

}  // namespace ssprl::model

#endif  // SSPRL_MODEL_HPP_
