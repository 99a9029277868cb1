#include <catch2/catch_amalgamated.hpp>

#include "json.hpp"
#include "ssprl/config.hpp"

using namespace ssprl;
using config::RunConfig;

TEST_CASE("default config is valid and hash is stable", "[config]") {
  RunConfig cfg;
  cfg.validate();
  const std::string h1 = config::hash(cfg);
  const std::string h2 = config::hash(cfg);
  REQUIRE(h1 == h2);
  REQUIRE(h1.size() == 16);

  RunConfig other;
  other.temperature = 0.2;
  REQUIRE(config::hash(other) != h1);
}

TEST_CASE("config json round-trips", "[config]") {
  RunConfig cfg;
  cfg.data.num_images = 64;
  cfg.epochs = 3;
  cfg.sinkhorn.epsilon = 0.07;
  auto j = config::to_json(cfg);
  RunConfig back = config::from_json(j);
  REQUIRE(back.data.num_images == 64);
  REQUIRE(back.epochs == 3);
  REQUIRE(back.sinkhorn.epsilon == 0.07);
  REQUIRE(config::hash(back) == config::hash(cfg));
}

TEST_CASE("unknown keys are rejected at every level", "[config]") {
  nlohmann::json j = config::to_json(RunConfig{});
  j["surprise"] = 1;
  REQUIRE_THROWS_MATCHES(config::from_json(j), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("surprise")));
  j.erase("surprise");
  j["train"]["lr"] = 0.1;  // the real key is base_lr
  REQUIRE_THROWS_MATCHES(config::from_json(j), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("lr")));
  j["train"].erase("lr");
  j["pyramid"]["augment"]["hue"] = 0.3;
  REQUIRE_THROWS_AS(config::from_json(j), ConfigError);
}

TEST_CASE("module invariants are enforced at load", "[config]") {
  nlohmann::json j = config::to_json(RunConfig{});

  SECTION("bad dataset size") {
    j["data"]["image_size"] = 50;
    REQUIRE_THROWS_AS(config::from_json(j), ConfigError);
  }

  SECTION("grid/scale mismatch") {
    j["pyramid"]["num_scales"] = 1;  // grids still have 3 entries
    REQUIRE_THROWS_AS(config::from_json(j), ConfigError);
  }

  SECTION("negative loss weight") {
    j["loss"]["lambda"] = -0.5;
    REQUIRE_THROWS_AS(config::from_json(j), ConfigError);
  }

  SECTION("image size must tile the pyramid grids") {
    j["data"]["image_size"] = 60;  // 60 % 12 == 0 but 60 is fine for grids 1/2/3
    RunConfig ok = config::from_json(j);
    REQUIRE(ok.data.image_size == 60);
  }
}

TEST_CASE("partial configs fall back to defaults", "[config]") {
  nlohmann::json j = {{"train", {{"epochs", 1}}}};
  RunConfig cfg = config::from_json(j);
  REQUIRE(cfg.epochs == 1);
  REQUIRE(cfg.batch_size == RunConfig{}.batch_size);
  REQUIRE(cfg.sinkhorn.epsilon == 0.05);
  REQUIRE(cfg.weights.alpha == std::vector<double>{1.0, 0.25, 0.25});
}

TEST_CASE("pretrain config assembly", "[config]") {
  RunConfig cfg;
  cfg.temperature = 0.17;
  cfg.freeze_prototypes_steps = 9;
  auto p = cfg.to_pretrain_config();
  REQUIRE(p.temperature == 0.17);
  REQUIRE(p.freeze_prototypes_steps == 9);
  REQUIRE(p.encoder.num_scales == cfg.pyramid_spec.num_scales);
}
