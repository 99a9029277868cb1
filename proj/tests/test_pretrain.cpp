#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ssprl/checkpoint.hpp"
#include "ssprl/pretrain.hpp"
#include "ssprl/synth.hpp"

using namespace ssprl;
using pretrain::PretrainConfig;
using pretrain::Trainer;

namespace {

PretrainConfig tiny_config() {
  PretrainConfig cfg;
  cfg.encoder.channels = {4, 8};
  cfg.encoder.embed_dim = 8;
  cfg.encoder.head_hidden_dim = 8;
  cfg.encoder.num_scales = 1;
  cfg.encoder.prototype_counts = {4, 6};
  cfg.encoder.correlator_hidden_dim = 5;
  cfg.pyramid_spec.num_scales = 1;
  cfg.pyramid_spec.grids = {1, 2};
  cfg.pyramid_spec.patch_input_size = 8;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.base_lr = 0.05;
  cfg.final_lr = 0.005;
  cfg.warmup_steps = 2;
  cfg.freeze_prototypes_steps = 0;
  cfg.checkpoint_every = 500;
  cfg.weights = objectives::LossWeights(1);
  cfg.seed = 21;
  return cfg;
}

std::vector<Image> tiny_images(int n, std::uint64_t seed = 3) {
  synth::DatasetSpec spec;
  spec.num_images = n;
  spec.image_size = 24;
  spec.num_classes = 6;
  spec.seed = seed;
  return synth::generate_dataset(spec).images;
}

std::vector<pyramid::PyramidPair> make_batch(const PretrainConfig& cfg,
                                             const std::vector<Image>& images, int count) {
  std::vector<pyramid::PyramidPair> batch;
  for (int i = 0; i < count; ++i)
    batch.push_back(pyramid::build_pyramid_pair(images[i], 1000 + i, cfg.pyramid_spec));
  return batch;
}

}  // namespace

TEST_CASE("assignment_entropy", "[pretrain]") {
  SECTION("uniform columns have entropy log K") {
    MatX<double> q = MatX<double>::Constant(8, 5, 1.0 / 8);
    REQUIRE(pretrain::assignment_entropy(q) == Catch::Approx(std::log(8.0)).margin(1e-12));
  }

  SECTION("one-hot columns have zero entropy") {
    MatX<double> q = MatX<double>::Zero(4, 3);
    q(1, 0) = q(2, 1) = q(0, 2) = 1.0;
    REQUIRE(pretrain::assignment_entropy(q) == 0.0);
  }

  SECTION("random columns match the direct summation oracle") {
    RandomStream rng(5);
    MatX<double> q(6, 7);
    for (int j = 0; j < 7; ++j) {
      double sum = 0.0;
      for (int i = 0; i < 6; ++i) {
        q(i, j) = rng.uniform() + 0.01;
        sum += q(i, j);
      }
      q.col(j) /= sum;
    }
    double expect = 0.0;
    for (int j = 0; j < 7; ++j)
      for (int i = 0; i < 6; ++i) expect -= q(i, j) * std::log(q(i, j));
    expect /= 7;
    REQUIRE(pretrain::assignment_entropy(q) == Catch::Approx(expect).margin(1e-10));
  }
}

TEST_CASE("learning rate zero leaves parameters unchanged", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  cfg.base_lr = 0.0;
  cfg.final_lr = 0.0;
  cfg.warmup_steps = 0;
  cfg.weight_decay = 0.0;
  auto images = tiny_images(8);
  Trainer<double> trainer(cfg, images);
  std::vector<MatX<double>> before;
  for (auto& p : trainer.state().collect_params()) before.push_back(*p.value);
  auto metrics = trainer.train_step();
  REQUIRE(std::isfinite(metrics.loss.total));
  REQUIRE(metrics.lr == 0.0);
  auto params = trainer.state().collect_params();
  for (std::size_t i = 0; i < params.size(); ++i) REQUIRE(*params[i].value == before[i]);
}

TEST_CASE("identical config and seed give bit-identical metrics streams", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  auto images = tiny_images(8);
  Trainer<float> a(cfg, images), b(cfg, images);
  for (int step = 0; step < 4; ++step) {
    auto ma = a.train_step();
    auto mb = b.train_step();
    REQUIRE(ma.to_json().dump() == mb.to_json().dump());
  }
}

TEST_CASE("loss decreases over a short run", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  cfg.epochs = 25;  // 200 steps at 8 images / batch 4... kept modest below
  cfg.batch_size = 8;
  cfg.base_lr = 0.2;
  cfg.final_lr = 0.02;
  cfg.warmup_steps = 10;
  cfg.freeze_prototypes_steps = 20;
  auto images = tiny_images(64);
  Trainer<float> trainer(cfg, images);
  const std::int64_t steps = 200;
  std::vector<double> losses;
  for (std::int64_t s = 0; s < steps; ++s) losses.push_back(trainer.train_step().loss.total);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 20; ++i) {
    first += losses[i];
    last += losses[steps - 20 + i];
  }
  INFO("first-20 mean " << first / 20 << ", last-20 mean " << last / 20);
  REQUIRE(last / 20 < first / 20);
}

TEST_CASE("epochs zero emits the initialization checkpoint only", "[pretrain]") {
  namespace fs = std::filesystem;
  PretrainConfig cfg = tiny_config();
  cfg.epochs = 0;
  auto images = tiny_images(8);
  const std::string dir = (fs::temp_directory_path() / "ssprl_e0").string();
  fs::remove_all(dir);
  std::string path = pretrain::run_pretrain<float>(cfg, images, dir, "h");
  REQUIRE(path.find("checkpoint_init.ckpt") != std::string::npos);
  REQUIRE(fs::exists(path));
  REQUIRE_FALSE(fs::exists(fs::path(dir) / "checkpoint_final.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("resume after a checkpoint reproduces the uninterrupted run bitwise", "[pretrain]") {
  namespace fs = std::filesystem;
  PretrainConfig cfg = tiny_config();
  cfg.epochs = 2;  // 4 steps/epoch at 16 images, batch 4 -> 8 steps total
  cfg.checkpoint_every = 4;
  auto images = tiny_images(16);
  const std::string dir_a = (fs::temp_directory_path() / "ssprl_resume_a").string();
  const std::string dir_b = (fs::temp_directory_path() / "ssprl_resume_b").string();
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  std::string final_a = pretrain::run_pretrain<float>(cfg, images, dir_a, "h");
  const std::string mid = (fs::path(dir_a) / "checkpoint_00000004.ckpt").string();
  REQUIRE(fs::exists(mid));
  std::string final_b = pretrain::run_pretrain<float>(cfg, images, dir_b, "h", mid);

  auto a = checkpoint::load_archive<float>(final_a);
  auto b = checkpoint::load_archive<float>(final_b);
  REQUIRE(a.arrays.size() == b.arrays.size());
  for (const auto& [name, mat] : a.arrays) {
    REQUIRE(b.arrays.count(name) == 1);
    REQUIRE(mat == b.arrays.at(name));
  }
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("prototypes are bitwise frozen for the first steps", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  cfg.freeze_prototypes_steps = 3;
  auto images = tiny_images(8);
  Trainer<float> trainer(cfg, images);
  std::vector<MatX<float>> init = trainer.state().prototypes;
  for (int s = 0; s < 3; ++s) trainer.train_step();
  for (std::size_t i = 0; i < init.size(); ++i)
    REQUIRE(trainer.state().prototypes[i] == init[i]);
  trainer.train_step();
  bool changed = false;
  for (std::size_t i = 0; i < init.size(); ++i)
    changed = changed || trainer.state().prototypes[i] != init[i];
  REQUIRE(changed);
}

TEST_CASE("gradient check on the tiny double model", "[pretrain][gradcheck]") {
  PretrainConfig cfg = tiny_config();
  auto images = tiny_images(4);
  auto batch = make_batch(cfg, images, 2);
  model::TrainState<double> state(cfg.encoder, 7);
  auto report = pretrain::grad_check(state, batch, cfg, 1e-4);
  for (const auto& g : report.groups)
    INFO(g.name << " max rel error " << g.max_rel_error);
  REQUIRE(report.max_rel_error < 1e-4);
  REQUIRE(report.pass);
}

TEST_CASE("zero objective gives exactly zero gradients", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  cfg.weights.alpha = {0.0, 0.0};
  cfg.weights.beta = {0.0};
  cfg.weights.lambda = 0.0;
  auto images = tiny_images(4);
  auto batch = make_batch(cfg, images, 2);
  model::TrainState<double> state(cfg.encoder, 8);
  state.zero_grads();
  auto res = pretrain::forward_backward(state, batch, cfg, true);
  REQUIRE(res.loss.total == 0.0);
  for (auto& p : state.collect_params())
    REQUIRE(p.grad->cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("doubling alpha_0 doubles the scale-0 head gradients", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  cfg.weights.alpha = {1.0, 0.0};
  cfg.weights.beta = {0.0};
  cfg.weights.lambda = 0.0;
  auto images = tiny_images(4);
  auto batch = make_batch(cfg, images, 2);
  model::TrainState<double> state(cfg.encoder, 9);

  state.zero_grads();
  pretrain::forward_backward(state, batch, cfg, true);
  MatX<double> head0 = state.heads[0].l1.gW;
  MatX<double> head1 = state.heads[1].l1.gW;
  REQUIRE(head1.cwiseAbs().maxCoeff() == 0.0);

  cfg.weights.alpha = {2.0, 0.0};
  state.zero_grads();
  pretrain::forward_backward(state, batch, cfg, true);
  REQUIRE((state.heads[0].l1.gW - 2.0 * head0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("no gradient flows through the Sinkhorn targets", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  auto images = tiny_images(4);
  auto batch = make_batch(cfg, images, 2);
  model::TrainState<double> state(cfg.encoder, 10);

  // Gradients with Q recomputed from the live logits...
  state.zero_grads();
  auto live = pretrain::forward_backward(state, batch, cfg, true);
  std::vector<MatX<double>> grads_live;
  for (auto& p : state.collect_params()) grads_live.push_back(*p.grad);

  // ...equal gradients with Q frozen at the same point: the targets carry no
  // derivative of their own.
  state.zero_grads();
  pretrain::forward_backward(state, batch, cfg, true, &live.q_store);
  auto params = state.collect_params();
  for (std::size_t i = 0; i < params.size(); ++i)
    REQUIRE(*params[i].grad == grads_live[i]);

  // Perturbing the targets changes the loss (they matter) but stays a
  // constant in the eyes of the differentiation.
  auto perturbed = live.q_store;
  std::swap(perturbed[0][0], perturbed[0][1]);
  state.zero_grads();
  auto res = pretrain::forward_backward(state, batch, cfg, true, &perturbed);
  REQUIRE(res.loss.total != live.loss.total);
}

TEST_CASE("train_step config validation", "[pretrain]") {
  PretrainConfig cfg = tiny_config();
  auto images = tiny_images(2);
  REQUIRE_THROWS_AS(Trainer<float>(cfg, images), ConfigError);  // batch > dataset
  cfg.temperature = 0.0;
  REQUIRE_THROWS_AS(Trainer<float>(cfg, tiny_images(8)), ConfigError);
}
