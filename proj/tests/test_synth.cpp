#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "ssprl/synth.hpp"

using namespace ssprl;
using synth::DatasetSpec;

TEST_CASE("generate_dataset is deterministic for a fixed seed", "[synth]") {
  DatasetSpec spec;
  spec.num_images = 12;
  spec.seed = 7;
  auto a = synth::generate_dataset(spec);
  auto b = synth::generate_dataset(spec);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.labels == b.labels);
  for (int i = 0; i < a.size(); ++i) REQUIRE(a.images[i].data == b.images[i].data);
}

TEST_CASE("two classes with exactly two objects forces all-ones labels", "[synth]") {
  DatasetSpec spec;
  spec.num_images = 20;
  spec.num_classes = 2;
  spec.objects_min = 2;
  spec.objects_max = 2;
  spec.seed = 3;
  auto set = synth::generate_dataset(spec);
  for (int i = 0; i < set.size(); ++i) {
    REQUIRE(set.labels(i, 0) == 1);
    REQUIRE(set.labels(i, 1) == 1);
  }
}

TEST_CASE("label counts match a replayed RNG oracle", "[synth]") {
  DatasetSpec spec;
  spec.num_images = 100;
  spec.objects_min = 1;
  spec.objects_max = 3;
  spec.seed = 11;
  auto set = synth::generate_dataset(spec);
  double mean = 0.0;
  for (int i = 0; i < set.size(); ++i) {
    // Replay the documented stream: first draw of the per-image stream is k.
    RandomStream rng(derive_seed(spec.seed, synth::kImageSalt, static_cast<std::uint64_t>(i)));
    const long k = rng.uniform_int(static_cast<long>(spec.objects_min),
                                   static_cast<long>(spec.objects_max));
    REQUIRE(set.labels.row(i).sum() == k);
    mean += static_cast<double>(k);
  }
  mean /= set.size();
  REQUIRE(mean >= 1.0);
  REQUIRE(mean <= 3.0);
}

TEST_CASE("invalid specs name the violated field", "[synth]") {
  DatasetSpec spec;
  spec.image_size = 50;  // not a multiple of 12
  REQUIRE_THROWS_MATCHES(synth::generate_dataset(spec), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("image_size")));
  spec = DatasetSpec{};
  spec.num_classes = 1;
  REQUIRE_THROWS_MATCHES(synth::generate_dataset(spec), ConfigError,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("num_classes")));
  spec = DatasetSpec{};
  spec.objects_min = 3;
  spec.objects_max = 2;
  REQUIRE_THROWS_AS(synth::generate_dataset(spec), ConfigError);
}

TEST_CASE("labels mirror the generator metadata", "[synth]") {
  DatasetSpec spec;
  spec.num_images = 30;
  spec.seed = 5;
  auto set = synth::generate_dataset(spec);
  Eigen::MatrixXi reparsed = Eigen::MatrixXi::Zero(spec.num_images, spec.num_classes);
  for (const auto& g : set.glyphs) {
    REQUIRE(g.center_x >= 0.0);
    REQUIRE(g.center_x <= spec.image_size);
    reparsed(g.image_index, g.class_id) = 1;
  }
  REQUIRE(reparsed == set.labels);
}

TEST_CASE("split sizes, nesting, and rounding", "[synth]") {
  DatasetSpec spec;
  spec.num_images = 9;
  spec.seed = 2;
  auto small = synth::generate_dataset(spec);

  SECTION("full fraction returns the whole set as a multiset") {
    auto parts = synth::split(small, {1.0}, 42);
    REQUIRE(parts.size() == 1);
    REQUIRE(parts[0].size() == 9);
    std::multiset<int> expect, got;
    for (int i = 0; i < 9; ++i) expect.insert(small.labels.row(i).sum());
    for (int i = 0; i < 9; ++i) got.insert(parts[0].labels.row(i).sum());
    REQUIRE(expect == got);
  }

  SECTION("round half up") {
    auto idx = synth::split_indices(9, {0.5}, 1);
    REQUIRE(idx[0].size() == 5);
  }

  SECTION("nesting on a thousand items") {
    auto idx = synth::split_indices(1000, {0.01, 0.10}, 123);
    REQUIRE(idx[0].size() == 10);
    REQUIRE(idx[1].size() == 100);
    std::set<int> big(idx[1].begin(), idx[1].end());
    for (int i : idx[0]) REQUIRE(big.count(i) == 1);
  }

  SECTION("determinism") {
    REQUIRE(synth::split_indices(100, {0.3}, 9) == synth::split_indices(100, {0.3}, 9));
  }

  SECTION("bad fractions rejected") {
    REQUIRE_THROWS_AS(synth::split_indices(10, {0.0}, 1), ConfigError);
    REQUIRE_THROWS_AS(synth::split_indices(10, {1.5}, 1), ConfigError);
  }
}

TEST_CASE("dataset directory round-trips exactly", "[synth]") {
  DatasetSpec spec;
  spec.num_images = 6;
  spec.seed = 13;
  auto set = synth::generate_dataset(spec);
  const std::string dir =
      (std::filesystem::temp_directory_path() / "ssprl_synth_rt").string();
  std::filesystem::remove_all(dir);
  synth::save_dataset(dir, spec, set);

  // Layout per the interface: images/NNNNNN.png + labels.csv + spec.json.
  REQUIRE(std::filesystem::exists(std::filesystem::path(dir) / "images" / "000000.png"));
  std::ifstream csv(std::filesystem::path(dir) / "labels.csv");
  std::string header;
  std::getline(csv, header);
  REQUIRE(header.rfind("index,c0,", 0) == 0);
  int rows = 0;
  for (std::string line; std::getline(csv, line);) rows += !line.empty();
  REQUIRE(rows == spec.num_images);

  auto [spec2, set2] = synth::load_dataset(dir);
  REQUIRE(spec2.num_images == spec.num_images);
  REQUIRE(spec2.seed == spec.seed);
  REQUIRE(set2.labels == set.labels);
  // Images are quantized to the 8-bit grid at generation time, so the PNG
  // round-trip is bitwise exact.
  for (int i = 0; i < set.size(); ++i) REQUIRE(set2.images[i].data == set.images[i].data);
  std::filesystem::remove_all(dir);
}
