#ifndef SSPRL_PRETRAIN_HPP_
#define SSPRL_PRETRAIN_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssprl/assignment.hpp"
#include "ssprl/checkpoint.hpp"
#include "ssprl/common.hpp"
#include "ssprl/image.hpp"
#include "ssprl/model.hpp"
#include "ssprl/objectives.hpp"
#include "ssprl/pyramid.hpp"
#include "ssprl/rng.hpp"
#include "ssprl/synth.hpp"

namespace ssprl::pretrain {

constexpr std::uint64_t kEpochSalt = 0x7001;
constexpr std::uint64_t kAugSalt = 0x7002;

struct LrSchedule {
  double base = 0.0;
  double final_value = 0.0;
  int warmup_steps = 0;
  std::int64_t total_steps = 1;

  double at(std::int64_t step) const {
    if (warmup_steps > 0 && step < warmup_steps)
      return base * static_cast<double>(step + 1) / warmup_steps;
    const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup_steps));
    const double t = static_cast<double>(step - warmup_steps) / span;
    return final_value + 0.5 * (base - final_value) * (1.0 + std::cos(3.14159265358979323846 * t));
  }
};

/// SGD with momentum; decayed parameters get weight_decay * value added to
/// their gradient. Velocities are checkpointed for exact resume.
template <typename T>
struct SgdMomentum {
  double momentum = 0.9;
  double weight_decay = 1e-6;
  std::vector<MatX<T>> velocity;

  void init(const std::vector<nn::ParamRef<T>>& params) {
    velocity.clear();
    for (const auto& p : params) velocity.push_back(MatX<T>::Zero(p.value->rows(), p.value->cols()));
  }

  void step(const std::vector<nn::ParamRef<T>>& params, double lr) {
    if (velocity.size() != params.size())
      throw DimensionError("SgdMomentum: velocity/param count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      MatX<T> g = *params[i].grad;
      if (params[i].weight_decay && weight_decay != 0.0)
        g += static_cast<T>(weight_decay) * (*params[i].value);
      velocity[i] = static_cast<T>(momentum) * velocity[i] + g;
      *params[i].value -= static_cast<T>(lr) * velocity[i];
    }
  }
};

struct PretrainConfig {
  int epochs = 16;
  int batch_size = 16;
  double base_lr = 0.3;
  double final_lr = 0.003;
  int warmup_steps = 100;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  int freeze_prototypes_steps = 100;
  double temperature = 0.1;
  int checkpoint_every = 500;
  std::uint64_t seed = 1;
  assignment::SinkhornConfig sinkhorn;
  objectives::LossWeights weights;
  pyramid::PyramidSpec pyramid_spec;
  model::EncoderConfig encoder;

  void validate() const {
    if (epochs < 0) throw ConfigError("PretrainConfig.epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("PretrainConfig.batch_size must be >= 1");
    // lr 0 is allowed: a no-op step still emits metrics.
    if (base_lr < 0.0) throw ConfigError("PretrainConfig.base_lr must be >= 0");
    if (final_lr < 0.0) throw ConfigError("PretrainConfig.final_lr must be >= 0");
    if (warmup_steps < 0) throw ConfigError("PretrainConfig.warmup_steps must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("PretrainConfig.weight_decay must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("PretrainConfig.momentum must be in [0, 1)");
    if (freeze_prototypes_steps < 0)
      throw ConfigError("PretrainConfig.freeze_prototypes_steps must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("PretrainConfig.temperature must be > 0");
    if (checkpoint_every < 1) throw ConfigError("PretrainConfig.checkpoint_every must be >= 1");
    sinkhorn.validate();
    pyramid_spec.validate();
    encoder.validate();
    weights.validate(encoder.num_scales);
    if (encoder.num_scales != pyramid_spec.num_scales)
      throw ConfigError("PretrainConfig: encoder and pyramid num_scales disagree");
    if (pyramid_spec.patch_input_size % encoder.pool_factor() != 0)
      throw ConfigError("PretrainConfig: patch_input_size must be divisible by 2^conv_stages");
    const int max_k = *std::max_element(encoder.prototype_counts.begin(),
                                        encoder.prototype_counts.end());
    if (batch_size * pyramid_spec.patches_at(0) < max_k)
      std::cerr << "[ssprl] warning: batch_size * min(M_s) = " << batch_size
                << " < max(K_s) = " << max_k << "; equal partition will be coarse\n";
  }
};

/// Per-step diagnostics; serialized as one JSON line each step.
struct StepMetrics {
  std::int64_t step = 0;
  objectives::LossBreakdown loss;
  std::vector<double> q_entropy;  // per scale, mean over the two views
  double grad_norm = 0.0;
  double lr = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step},
            {"l_pyr", loss.l_pyr},
            {"l_cross", loss.l_cross},
            {"total", loss.total},
            {"per_scale", {{"pyr", loss.per_scale_pyr}, {"cross", loss.per_scale_cross}}},
            {"q_entropy", q_entropy},
            {"grad_norm", grad_norm},
            {"lr", lr}};
  }
};

/// Mean over columns of -sum_k Q(k, m) log Q(k, m).
template <typename T>
double assignment_entropy(const MatX<T>& q) {
  return assignment::mean_column_entropy(q);
}

// ---------------------------------------------------------------------------
// Batched loss + gradient engine.

template <typename T>
struct EngineResult {
  objectives::LossBreakdown loss;
  std::vector<double> q_entropy;                // per scale
  std::vector<std::array<MatX<T>, 2>> q_store;  // per scale, per view (targets)
};

/// Runs the full objective over a batch of pyramid pairs and (optionally)
/// accumulates parameter gradients in `state`. Targets Q are recomputed from
/// the current logits unless `frozen_q` is supplied (used by the gradient
/// checker, which differentiates with targets held constant -- the same
/// stop-gradient semantics the training step uses).
template <typename T>
EngineResult<T> forward_backward(model::TrainState<T>& state,
                                 const std::vector<pyramid::PyramidPair>& batch,
                                 const PretrainConfig& cfg, bool compute_grads,
                                 const std::vector<std::array<MatX<T>, 2>>* frozen_q = nullptr) {
  const auto& pspec = cfg.pyramid_spec;
  const auto& weights = cfg.weights;
  const int num_scales = pspec.num_scales;
  const int b = static_cast<int>(batch.size());
  const int ps = pspec.patch_input_size;
  if (b < 1) throw DimensionError("forward_backward: empty batch");

  // Patch block layout: for each scale, view 0's B*M_s patches then view 1's.
  std::vector<int> scale_offset(num_scales + 1);
  int total = 0;
  for (int s = 0; s <= num_scales; ++s) {
    scale_offset[s] = total;
    total += 2 * b * pspec.patches_at(s);
  }
  nn::FeatureMap<T> fm(3, ps, ps, total);
  const int hw = ps * ps;
  for (int s = 0; s <= num_scales; ++s) {
    const int m_s = pspec.patches_at(s);
    for (int v = 0; v < 2; ++v)
      for (int i = 0; i < b; ++i) {
        const auto& group = (v == 0) ? batch[i].view[s] : batch[i].view_prime[s];
        if (static_cast<int>(group.patches.size()) != m_s)
          throw DimensionError("forward_backward: patch count mismatch at scale " +
                               std::to_string(s));
        for (int m = 0; m < m_s; ++m) {
          const Image& im = group.patches[m];
          const int slot = scale_offset[s] + (v * b + i) * m_s + m;
          for (int y = 0; y < ps; ++y)
            for (int x = 0; x < ps; ++x)
              for (int c = 0; c < 3; ++c)
                fm.data(c, slot * hw + y * ps + x) = static_cast<T>(im.at(c, y, x));
        }
      }
  }

  MatX<T> pooled = state.backbone.forward(fm);

  EngineResult<T> result;
  result.loss.per_scale_pyr.assign(num_scales + 1, 0.0);
  result.loss.per_scale_cross.assign(num_scales + 1, 0.0);
  result.q_entropy.assign(num_scales + 1, 0.0);
  result.q_store.resize(num_scales + 1);

  MatX<T> dpooled;
  if (compute_grads) dpooled = MatX<T>::Zero(pooled.rows(), pooled.cols());

  // Scale-0 balanced assignments, needed by the cross-scale terms.
  std::array<MatX<T>, 2> q_scale0;

  struct ScaleCache {
    MatX<T> z_cat, u_cat, p_cat;
    int cols_per_view = 0;
  };
  std::vector<ScaleCache> caches(num_scales + 1);

  const double tau = cfg.temperature;
  const bool with_cross = weights.lambda != 0.0 && num_scales >= 1;

  // Pass 1: encode every scale, compute P and Q, accumulate the pyramid loss
  // and its contribution to dU. Head backward is deferred to pass 2 so that
  // cross-scale gradients can be folded in first.
  std::vector<MatX<T>> du_cat(num_scales + 1);
  for (int s = 0; s <= num_scales; ++s) {
    const int m_s = pspec.patches_at(s);
    const int bm = b * m_s;
    ScaleCache& sc = caches[s];
    sc.cols_per_view = bm;
    sc.z_cat = state.heads[s].forward(pooled.middleCols(scale_offset[s], 2 * bm));
    sc.u_cat = assignment::prototype_scores<T>(sc.z_cat, state.prototypes[s]);
    sc.p_cat = assignment::soft_assign<T>(sc.u_cat, tau);

    std::array<MatX<T>, 2> q;
    if (frozen_q) {
      q = (*frozen_q)[s];
    } else {
      q[0] = assignment::sinkhorn_assign<T>(sc.u_cat.leftCols(bm), cfg.sinkhorn, nullptr, false);
      q[1] = assignment::sinkhorn_assign<T>(sc.u_cat.rightCols(bm), cfg.sinkhorn, nullptr, false);
    }
    result.q_entropy[s] =
        0.5 * (assignment::mean_column_entropy(q[0]) + assignment::mean_column_entropy(q[1]));
    if (s == 0) q_scale0 = q;

    const auto p0 = sc.p_cat.leftCols(bm);
    const auto p1 = sc.p_cat.rightCols(bm);
    double term = objectives::cross_entropy_cols<T>(q[1], p0) +
                  objectives::cross_entropy_cols<T>(q[0], p1);
    term *= weights.alpha[s] / (static_cast<double>(m_s) * b);
    result.loss.per_scale_pyr[s] = term;

    if (compute_grads) {
      const T c_pyr = static_cast<T>(weights.alpha[s] / (static_cast<double>(m_s) * b * tau));
      du_cat[s] = MatX<T>::Zero(sc.u_cat.rows(), sc.u_cat.cols());
      du_cat[s].leftCols(bm) = c_pyr * (p0 - q[1]);
      du_cat[s].rightCols(bm) = c_pyr * (p1 - q[0]);
    }
    result.q_store[s] = std::move(q);
  }

  // Cross-scale correlation terms (Eq. 3 pairing: same view by default).
  if (with_cross) {
    for (int s = 1; s <= num_scales; ++s) {
      const int m_s = pspec.patches_at(s);
      const int bm = b * m_s;
      ScaleCache& sc = caches[s];
      MatX<T> u_pool(state.config.prototype_counts[s], 2 * b);
      for (int v = 0; v < 2; ++v)
        for (int i = 0; i < b; ++i)
          u_pool.col(v * b + i) =
              sc.p_cat.middleCols(v * bm + i * m_s, m_s).rowwise().sum() / T(m_s);
      MatX<T> r = state.correlators[s - 1].forward(u_pool);

      MatX<T> targets(r.rows(), 2 * b);
      const int left = weights.cross_view_correlation ? 1 : 0;
      targets.leftCols(b) = q_scale0[left];
      targets.rightCols(b) = q_scale0[1 - left];

      double term = objectives::cross_entropy_cols<T>(targets, r);
      term *= weights.beta[s - 1] / static_cast<double>(b);
      result.loss.per_scale_cross[s] = term;

      if (compute_grads) {
        const T c_cross =
            static_cast<T>(weights.lambda * weights.beta[s - 1] / static_cast<double>(b));
        MatX<T> dlogits = c_cross * (r - targets);
        MatX<T> du_pool = state.correlators[s - 1].backward_from_dlogits(dlogits);
        MatX<T> dp = MatX<T>::Zero(sc.p_cat.rows(), sc.p_cat.cols());
        for (int v = 0; v < 2; ++v)
          for (int i = 0; i < b; ++i) {
            VecX<T> g = du_pool.col(v * b + i) / T(m_s);
            for (int m = 0; m < m_s; ++m) dp.col(v * bm + i * m_s + m) = g;
          }
        du_cat[s] += nn::colwise_softmax_backward<T>(sc.p_cat, dp) / static_cast<T>(tau);
      }
    }
  }

  // Pass 2: push dU through prototypes, heads, and the shared backbone.
  if (compute_grads) {
    for (int s = 0; s <= num_scales; ++s) {
      ScaleCache& sc = caches[s];
      state.prototype_grads[s].noalias() += sc.z_cat * du_cat[s].transpose();
      MatX<T> dz = state.prototypes[s] * du_cat[s];
      // Heads were run in scale order; replay backward per scale. Each head
      // caches only its own slice, so this is safe.
      MatX<T> dslice = state.heads[s].backward(dz);
      dpooled.middleCols(scale_offset[s], dslice.cols()) += dslice;
    }
    state.backbone.backward(dpooled);
  }

  result.loss.l_pyr =
      std::accumulate(result.loss.per_scale_pyr.begin(), result.loss.per_scale_pyr.end(), 0.0);
  result.loss.l_cross = std::accumulate(result.loss.per_scale_cross.begin(),
                                        result.loss.per_scale_cross.end(), 0.0);
  result.loss.total = result.loss.l_pyr + weights.lambda * result.loss.l_cross;
  if (!std::isfinite(result.loss.total))
    throw NumericError("forward_backward: non-finite loss");
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints.

template <typename T>
void save_checkpoint(const std::string& path, model::TrainState<T>& state,
                     const SgdMomentum<T>& opt, const std::string& config_hash) {
  auto params = state.collect_params();
  std::vector<std::pair<std::string, const MatX<T>*>> arrays;
  for (const auto& p : params) arrays.emplace_back(p.name, p.value);
  for (std::size_t i = 0; i < opt.velocity.size(); ++i)
    arrays.emplace_back("opt." + params[i].name, &opt.velocity[i]);
  nlohmann::json manifest = {{"config_hash", config_hash},
                             {"step", state.step},
                             {"seed", state.seed}};
  checkpoint::save_archive<T>(path, arrays, manifest);
}

/// Loads parameters (and, when present, optimizer state) into an existing
/// state built from the run config; shapes are validated array by array.
template <typename T>
nlohmann::json load_checkpoint(const std::string& path, model::TrainState<T>& state,
                               SgdMomentum<T>* opt = nullptr) {
  auto ar = checkpoint::load_archive<T>(path);
  auto params = state.collect_params();
  for (const auto& p : params) {
    auto it = ar.arrays.find(p.name);
    if (it == ar.arrays.end())
      throw IoError("load_checkpoint: missing array " + p.name);
    if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols())
      throw IoError("load_checkpoint: shape mismatch for " + p.name + " (checkpoint " +
                    std::to_string(it->second.rows()) + "x" + std::to_string(it->second.cols()) +
                    ", config " + std::to_string(p.value->rows()) + "x" +
                    std::to_string(p.value->cols()) + ")");
    *p.value = it->second;
  }
  if (opt) {
    opt->init(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto it = ar.arrays.find("opt." + params[i].name);
      if (it != ar.arrays.end()) opt->velocity[i] = it->second;
    }
  }
  state.step = ar.manifest.value("step", std::int64_t(0));
  state.seed = ar.manifest.value("seed", std::uint64_t(0));
  return ar.manifest;
}

// ---------------------------------------------------------------------------
// Training loop.

template <typename T>
class Trainer {
 public:
  Trainer(const PretrainConfig& cfg, const std::vector<Image>& images)
      : cfg_(cfg), images_(images), state_(cfg.encoder, cfg.seed) {
    cfg_.validate();
    if (images_.empty()) throw ConfigError("Trainer: empty dataset");
    if (static_cast<int>(images_.size()) < cfg_.batch_size)
      throw ConfigError("Trainer: batch_size exceeds dataset size");
    steps_per_epoch_ = static_cast<int>(images_.size()) / cfg_.batch_size;
    schedule_ = {cfg_.base_lr, cfg_.final_lr, cfg_.warmup_steps, total_steps()};
    optimizer_.momentum = cfg_.momentum;
    optimizer_.weight_decay = cfg_.weight_decay;
    optimizer_.init(state_.collect_params());
  }

  std::int64_t total_steps() const {
    return static_cast<std::int64_t>(cfg_.epochs) * steps_per_epoch_;
  }
  model::TrainState<T>& state() { return state_; }
  SgdMomentum<T>& optimizer() { return optimizer_; }
  const PretrainConfig& config() const { return cfg_; }

  /// Indices of the batch consumed at `step` (pure function of config+seed).
  std::vector<int> batch_indices(std::int64_t step) const {
    const std::int64_t epoch = step / steps_per_epoch_;
    const int pos = static_cast<int>(step % steps_per_epoch_);
    std::vector<int> perm(images_.size());
    std::iota(perm.begin(), perm.end(), 0);
    RandomStream rng(derive_seed(cfg_.seed, kEpochSalt, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(perm);
    return {perm.begin() + static_cast<std::size_t>(pos) * cfg_.batch_size,
            perm.begin() + (static_cast<std::size_t>(pos) + 1) * cfg_.batch_size};
  }

  /// One optimization step on the batch scheduled for state.step.
  StepMetrics train_step() {
    const std::int64_t step = state_.step;
    const std::vector<int> indices = batch_indices(step);
    std::vector<pyramid::PyramidPair> batch;
    for (int slot = 0; slot < cfg_.batch_size; ++slot)
      batch.push_back(pyramid::build_pyramid_pair(
          images_[indices[slot]],
          derive_seed(cfg_.seed, kAugSalt, static_cast<std::uint64_t>(step),
                      static_cast<std::uint64_t>(slot)),
          cfg_.pyramid_spec));
    return train_step_on(batch);
  }

  /// As train_step, but on caller-supplied pyramids (used by tests).
  StepMetrics train_step_on(const std::vector<pyramid::PyramidPair>& batch) {
    const std::int64_t step = state_.step;
    state_.zero_grads();
    EngineResult<T> res;
    try {
      res = forward_backward(state_, batch, cfg_, /*compute_grads=*/true);
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " at step " + std::to_string(step) +
                         (last_checkpoint_.empty() ? " (no checkpoint yet)"
                                                   : "; last good checkpoint: " + last_checkpoint_));
    }
    const bool frozen = step < cfg_.freeze_prototypes_steps;
    if (frozen)
      for (auto& g : state_.prototype_grads) g.setZero();

    auto params = state_.collect_params();
    double sq = 0.0;
    for (const auto& p : params) sq += static_cast<double>(p.grad->squaredNorm());

    const double lr = schedule_.at(step);
    optimizer_.step(params, lr);
    if (!frozen) model::renormalize_prototypes(state_);
    state_.step = step + 1;

    StepMetrics metrics;
    metrics.step = step;
    metrics.loss = res.loss;
    metrics.q_entropy = res.q_entropy;
    metrics.grad_norm = std::sqrt(sq);
    metrics.lr = lr;
    return metrics;
  }

  void set_last_checkpoint(const std::string& path) { last_checkpoint_ = path; }

 private:
  PretrainConfig cfg_;
  const std::vector<Image>& images_;
  model::TrainState<T> state_;
  SgdMomentum<T> optimizer_;
  LrSchedule schedule_;
  int steps_per_epoch_ = 1;
  std::string last_checkpoint_;
};

/// Full pre-training loop: checkpoints every `checkpoint_every` steps and at
/// the end, streams JSON-line metrics, and optionally resumes. Returns the
/// final checkpoint path.
template <typename T>
std::string run_pretrain(const PretrainConfig& cfg, const std::vector<Image>& images,
                         const std::string& out_dir, const std::string& config_hash,
                         const std::string& resume_path = "") {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  Trainer<T> trainer(cfg, images);
  if (!resume_path.empty()) {
    auto manifest = load_checkpoint<T>(resume_path, trainer.state(), &trainer.optimizer());
    if (manifest.value("config_hash", "") != config_hash)
      std::cerr << "[ssprl] warning: resuming from a checkpoint with a different config hash\n";
    trainer.set_last_checkpoint(resume_path);
  }
  const std::string metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  std::ofstream metrics(metrics_path, std::ios::app);
  if (!metrics) throw IoError("run_pretrain: cannot open " + metrics_path);

  const std::int64_t total = trainer.total_steps();
  if (trainer.state().step == 0) {
    const std::string init_path = (fs::path(out_dir) / "checkpoint_init.ckpt").string();
    save_checkpoint(init_path, trainer.state(), trainer.optimizer(), config_hash);
    trainer.set_last_checkpoint(init_path);
    if (total == 0) return init_path;  // epochs == 0: initialization only
  }
  while (trainer.state().step < total) {
    StepMetrics m = trainer.train_step();
    metrics << m.to_json().dump() << "\n";
    const std::int64_t done = trainer.state().step;
    if (done % cfg.checkpoint_every == 0 && done < total) {
      char name[48];
      std::snprintf(name, sizeof(name), "checkpoint_%08lld.ckpt",
                    static_cast<long long>(done));
      const std::string path = (fs::path(out_dir) / name).string();
      save_checkpoint(path, trainer.state(), trainer.optimizer(), config_hash);
      trainer.set_last_checkpoint(path);
    }
  }
  metrics.flush();
  const std::string final_path = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
  save_checkpoint(final_path, trainer.state(), trainer.optimizer(), config_hash);
  return final_path;
}

// ---------------------------------------------------------------------------
// Gradient check (double precision, central differences).

struct GradCheckGroup {
  std::string name;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Compares analytic gradients of the total objective against central finite
/// differences with targets Q frozen at the base point (targets are constants
/// to the loss, so this is the derivative the training step applies).
inline GradCheckReport grad_check(model::TrainState<double>& state,
                                  const std::vector<pyramid::PyramidPair>& batch,
                                  const PretrainConfig& cfg, double tolerance,
                                  double fd_step = 1e-5) {
  auto params = state.collect_params();
  std::size_t param_count = 0;
  for (const auto& p : params) param_count += static_cast<std::size_t>(p.value->size());
  if (param_count >= 5000)
    throw ConfigError("grad_check: model has " + std::to_string(param_count) +
                      " parameters; use a tiny config (< 5000)");

  state.zero_grads();
  EngineResult<double> base = forward_backward(state, batch, cfg, /*compute_grads=*/true);
  std::vector<MatX<double>> analytic;
  for (const auto& p : params) analytic.push_back(*p.grad);

  double global_scale = 0.0;
  for (const auto& g : analytic) global_scale = std::max(global_scale, g.cwiseAbs().maxCoeff());

  GradCheckReport report;
  report.tolerance = tolerance;
  const auto& frozen = base.q_store;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckGroup group{params[pi].name, 0.0};
    MatX<double>& value = *params[pi].value;
    for (Eigen::Index idx = 0; idx < value.size(); ++idx) {
      const double original = value.data()[idx];
      value.data()[idx] = original + fd_step;
      double up = forward_backward(state, batch, cfg, false, &frozen).loss.total;
      value.data()[idx] = original - fd_step;
      double down = forward_backward(state, batch, cfg, false, &frozen).loss.total;
      value.data()[idx] = original;
      const double numeric = (up - down) / (2.0 * fd_step);
      const double a = analytic[pi].data()[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3 * global_scale, 1e-12});
      group.max_rel_error = std::max(group.max_rel_error, std::abs(a - numeric) / denom);
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
  }
  report.pass = report.max_rel_error < tolerance;
  return report;
}

}  // namespace ssprl::pretrain

#endif  // SSPRL_PRETRAIN_HPP_
