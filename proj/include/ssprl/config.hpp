#ifndef SSPRL_CONFIG_HPP_
#define SSPRL_CONFIG_HPP_

#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssprl/assignment.hpp"
#include "ssprl/common.hpp"
#include "ssprl/evaluate.hpp"
#include "ssprl/model.hpp"
#include "ssprl/objectives.hpp"
#include "ssprl/pretrain.hpp"
#include "ssprl/pyramid.hpp"
#include "ssprl/synth.hpp"

namespace ssprl::config {

struct EvalConfig {
  double val_fraction = 0.25;
  std::uint64_t split_seed = 97;
  int probe_epochs = 40;
  double probe_lr = 0.5;
  int probe_batch_size = 32;
  int finetune_epochs = 20;
  double finetune_lr = 0.02;
  int finetune_batch_size = 32;
  std::string ap_variant = "classic";

  void validate() const {
    if (!(val_fraction > 0.0) || val_fraction >= 1.0)
      throw ConfigError("eval.val_fraction must lie in (0, 1)");
    if (probe_epochs < 0 || finetune_epochs < 0)
      throw ConfigError("eval epochs must be >= 0");
    if (!(probe_lr > 0.0) || !(finetune_lr > 0.0))
      throw ConfigError("eval learning rates must be > 0");
    if (probe_batch_size < 1 || finetune_batch_size < 1)
      throw ConfigError("eval batch sizes must be >= 1");
    if (ap_variant != "classic" && ap_variant != "eleven_point")
      throw ConfigError("eval.ap_variant must be 'classic' or 'eleven_point'");
  }

  evaluate::ApVariant variant() const {
    return ap_variant == "classic" ? evaluate::ApVariant::kClassic
                                   : evaluate::ApVariant::kElevenPoint;
  }
};

struct RunConfig {
  synth::DatasetSpec data;
  pyramid::PyramidSpec pyramid_spec;
  model::EncoderConfig encoder;
  assignment::SinkhornConfig sinkhorn;
  objectives::LossWeights weights{2};
  double temperature = 0.1;
  // train section
  int epochs = 16;
  int batch_size = 16;
  double base_lr = 0.3;
  double final_lr = 0.003;
  int warmup_steps = 100;
  double weight_decay = 1e-6;
  double momentum = 0.9;
  int freeze_prototypes_steps = 100;
  int checkpoint_every = 500;
  std::uint64_t train_seed = 1;
  EvalConfig eval;

  pretrain::PretrainConfig to_pretrain_config() const {
    pretrain::PretrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.base_lr = base_lr;
    cfg.final_lr = final_lr;
    cfg.warmup_steps = warmup_steps;
    cfg.weight_decay = weight_decay;
    cfg.momentum = momentum;
    cfg.freeze_prototypes_steps = freeze_prototypes_steps;
    cfg.temperature = temperature;
    cfg.checkpoint_every = checkpoint_every;
    cfg.seed = train_seed;
    cfg.sinkhorn = sinkhorn;
    cfg.weights = weights;
    cfg.pyramid_spec = pyramid_spec;
    cfg.encoder = encoder;
    return cfg;
  }

  void validate() const {
    data.validate();
    to_pretrain_config().validate();  // covers pyramid, encoder, sinkhorn, weights
    eval.validate();
    if (data.image_size % pyramid_spec.grids.back() != 0)
      throw ConfigError("data.image_size must be divisible by every pyramid grid");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
}

template <typename T>
void get_to(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  return {
      {"data",
       {{"num_images", c.data.num_images},
        {"image_size", c.data.image_size},
        {"num_classes", c.data.num_classes},
        {"objects_per_image", {c.data.objects_min, c.data.objects_max}},
        {"seed", c.data.seed}}},
      {"pyramid",
       {{"num_scales", c.pyramid_spec.num_scales},
        {"grids", c.pyramid_spec.grids},
        {"patch_input_size", c.pyramid_spec.patch_input_size},
        {"augment",
         {{"crop_scale", {c.pyramid_spec.augment.crop_scale_min, c.pyramid_spec.augment.crop_scale_max}},
          {"crop_aspect",
           {c.pyramid_spec.augment.crop_aspect_min, c.pyramid_spec.augment.crop_aspect_max}},
          {"flip_prob", c.pyramid_spec.augment.flip_prob},
          {"jitter_brightness", c.pyramid_spec.augment.jitter_brightness},
          {"jitter_contrast", c.pyramid_spec.augment.jitter_contrast},
          {"jitter_saturation", c.pyramid_spec.augment.jitter_saturation},
          {"blur_prob", c.pyramid_spec.augment.blur_prob},
          {"normalize_mean", c.pyramid_spec.augment.normalize_mean},
          {"normalize_std", c.pyramid_spec.augment.normalize_std}}}}},
      {"model",
       {{"channels", c.encoder.channels},
        {"embed_dim", c.encoder.embed_dim},
        {"head_hidden_dim", c.encoder.head_hidden_dim},
        {"prototype_counts", c.encoder.prototype_counts},
        {"correlator_hidden_dim", c.encoder.correlator_hidden_dim}}},
      {"sinkhorn", {{"epsilon", c.sinkhorn.epsilon}, {"iterations", c.sinkhorn.iterations}}},
      {"loss",
       {{"alpha", c.weights.alpha},
        {"beta", c.weights.beta},
        {"lambda", c.weights.lambda},
        {"temperature", c.temperature},
        {"cross_view_correlation", c.weights.cross_view_correlation}}},
      {"train",
       {{"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"base_lr", c.base_lr},
        {"final_lr", c.final_lr},
        {"warmup_steps", c.warmup_steps},
        {"weight_decay", c.weight_decay},
        {"momentum", c.momentum},
        {"freeze_prototypes_steps", c.freeze_prototypes_steps},
        {"checkpoint_every", c.checkpoint_every},
        {"seed", c.train_seed}}},
      {"eval",
       {{"val_fraction", c.eval.val_fraction},
        {"split_seed", c.eval.split_seed},
        {"probe_epochs", c.eval.probe_epochs},
        {"probe_lr", c.eval.probe_lr},
        {"probe_batch_size", c.eval.probe_batch_size},
        {"finetune_epochs", c.eval.finetune_epochs},
        {"finetune_lr", c.eval.finetune_lr},
        {"finetune_batch_size", c.eval.finetune_batch_size},
        {"ap_variant", c.eval.ap_variant}}}};
}

/// Parses a RunConfig. Missing keys fall back to defaults; unknown keys are
/// rejected; every module invariant is validated before returning.
inline RunConfig from_json(const nlohmann::json& j) {
  using detail::get_to;
  using detail::reject_unknown;
  reject_unknown(j, {"data", "pyramid", "model", "sinkhorn", "loss", "train", "eval"}, "<root>");
  RunConfig c;
  // The default LossWeights must track the default number of scales if the
  // pyramid section changes it and the loss section stays silent.
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, {"num_images", "image_size", "num_classes", "objects_per_image", "seed"},
                   "data");
    get_to(d, "num_images", c.data.num_images);
    get_to(d, "image_size", c.data.image_size);
    get_to(d, "num_classes", c.data.num_classes);
    if (d.contains("objects_per_image")) {
      c.data.objects_min = d.at("objects_per_image").at(0).get<int>();
      c.data.objects_max = d.at("objects_per_image").at(1).get<int>();
    }
    get_to(d, "seed", c.data.seed);
  }
  if (j.contains("pyramid")) {
    const auto& p = j.at("pyramid");
    reject_unknown(p, {"num_scales", "grids", "patch_input_size", "augment"}, "pyramid");
    get_to(p, "num_scales", c.pyramid_spec.num_scales);
    get_to(p, "grids", c.pyramid_spec.grids);
    get_to(p, "patch_input_size", c.pyramid_spec.patch_input_size);
    if (p.contains("augment")) {
      const auto& a = p.at("augment");
      reject_unknown(a,
                     {"crop_scale", "crop_aspect", "flip_prob", "jitter_brightness",
                      "jitter_contrast", "jitter_saturation", "blur_prob", "normalize_mean",
                      "normalize_std"},
                     "pyramid.augment");
      auto& ap = c.pyramid_spec.augment;
      if (a.contains("crop_scale")) {
        ap.crop_scale_min = a.at("crop_scale").at(0).get<double>();
        ap.crop_scale_max = a.at("crop_scale").at(1).get<double>();
      }
      if (a.contains("crop_aspect")) {
        ap.crop_aspect_min = a.at("crop_aspect").at(0).get<double>();
        ap.crop_aspect_max = a.at("crop_aspect").at(1).get<double>();
      }
      get_to(a, "flip_prob", ap.flip_prob);
      get_to(a, "jitter_brightness", ap.jitter_brightness);
      get_to(a, "jitter_contrast", ap.jitter_contrast);
      get_to(a, "jitter_saturation", ap.jitter_saturation);
      get_to(a, "blur_prob", ap.blur_prob);
      get_to(a, "normalize_mean", ap.normalize_mean);
      get_to(a, "normalize_std", ap.normalize_std);
    }
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"channels", "embed_dim", "head_hidden_dim", "prototype_counts",
                    "correlator_hidden_dim"},
                   "model");
    get_to(m, "channels", c.encoder.channels);
    get_to(m, "embed_dim", c.encoder.embed_dim);
    get_to(m, "head_hidden_dim", c.encoder.head_hidden_dim);
    get_to(m, "prototype_counts", c.encoder.prototype_counts);
    get_to(m, "correlator_hidden_dim", c.encoder.correlator_hidden_dim);
  }
  c.encoder.num_scales = c.pyramid_spec.num_scales;
  c.weights = objectives::LossWeights(c.pyramid_spec.num_scales);
  if (j.contains("sinkhorn")) {
    const auto& s = j.at("sinkhorn");
    reject_unknown(s, {"epsilon", "iterations"}, "sinkhorn");
    get_to(s, "epsilon", c.sinkhorn.epsilon);
    get_to(s, "iterations", c.sinkhorn.iterations);
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, {"alpha", "beta", "lambda", "temperature", "cross_view_correlation"},
                   "loss");
    get_to(l, "alpha", c.weights.alpha);
    get_to(l, "beta", c.weights.beta);
    get_to(l, "lambda", c.weights.lambda);
    get_to(l, "temperature", c.temperature);
    get_to(l, "cross_view_correlation", c.weights.cross_view_correlation);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t,
                   {"epochs", "batch_size", "base_lr", "final_lr", "warmup_steps", "weight_decay",
                    "momentum", "freeze_prototypes_steps", "checkpoint_every", "seed"},
                   "train");
    get_to(t, "epochs", c.epochs);
    get_to(t, "batch_size", c.batch_size);
    get_to(t, "base_lr", c.base_lr);
    get_to(t, "final_lr", c.final_lr);
    get_to(t, "warmup_steps", c.warmup_steps);
    get_to(t, "weight_decay", c.weight_decay);
    get_to(t, "momentum", c.momentum);
    get_to(t, "freeze_prototypes_steps", c.freeze_prototypes_steps);
    get_to(t, "checkpoint_every", c.checkpoint_every);
    get_to(t, "seed", c.train_seed);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e,
                   {"val_fraction", "split_seed", "probe_epochs", "probe_lr", "probe_batch_size",
                    "finetune_epochs", "finetune_lr", "finetune_batch_size", "ap_variant"},
                   "eval");
    get_to(e, "val_fraction", c.eval.val_fraction);
    get_to(e, "split_seed", c.eval.split_seed);
    get_to(e, "probe_epochs", c.eval.probe_epochs);
    get_to(e, "probe_lr", c.eval.probe_lr);
    get_to(e, "probe_batch_size", c.eval.probe_batch_size);
    get_to(e, "finetune_epochs", c.eval.finetune_epochs);
    get_to(e, "finetune_lr", c.eval.finetune_lr);
    get_to(e, "finetune_batch_size", c.eval.finetune_batch_size);
    get_to(e, "ap_variant", c.eval.ap_variant);
  }
  c.validate();
  return c;
}

inline RunConfig load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return from_json(j);
}

/// Stable hash over the fully-resolved config; embedded in every output.
inline std::string hash(const RunConfig& c) { return hex64(fnv1a64(to_json(c).dump())); }

}  // namespace ssprl::config

#endif  // SSPRL_CONFIG_HPP_
