#include <catch2/catch_amalgamated.hpp>

#include "ssprl/pyramid.hpp"
#include "ssprl/synth.hpp"

using namespace ssprl;
using pyramid::AugmentPolicy;
using pyramid::PyramidSpec;

namespace {

Image random_image(int size, std::uint64_t seed) {
  RandomStream rng(seed);
  Image im(size, size, 3);
  for (float& v : im.data) v = static_cast<float>(rng.uniform());
  return im;
}

Image standardized_resize(const Image& im, int out, const AugmentPolicy& p) {
  Image r = resize_bilinear(im, out, out);
  for (float& v : r.data)
    v = static_cast<float>((v - p.normalize_mean) / p.normalize_std);
  return r;
}

}  // namespace

TEST_CASE("patchify tiles exactly", "[pyramid]") {
  Image im = random_image(48, 1);

  SECTION("g=1 is the identity") {
    auto patches = pyramid::patchify(im, 1);
    REQUIRE(patches.size() == 1);
    REQUIRE(patches[0].data == im.data);
  }

  SECTION("g=2 reassembles bitwise") {
    auto patches = pyramid::patchify(im, 2);
    REQUIRE(patches.size() == 4);
    Image re(48, 48, 3);
    for (int gy = 0; gy < 2; ++gy)
      for (int gx = 0; gx < 2; ++gx)
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < 24; ++y)
            for (int x = 0; x < 24; ++x)
              re.at(c, gy * 24 + y, gx * 24 + x) = patches[gy * 2 + gx].at(c, y, x);
    REQUIRE(re.data == im.data);
  }

  SECTION("g=3 matches the index-arithmetic oracle over all pixels") {
    auto patches = pyramid::patchify(im, 3);
    REQUIRE(patches.size() == 9);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
          const int idx = (y / 16) * 3 + (x / 16);
          REQUIRE(patches[idx].at(c, y % 16, x % 16) == im.at(c, y, x));
        }
    // Pixel (17, 33) lands in grid row 1, col 2 -- row-major patch 5 -- at
    // local position (1, 1).
    REQUIRE(patches[5].at(0, 1, 1) == im.at(0, 17, 33));
  }

  SECTION("indivisible side reports side and grid") {
    REQUIRE_THROWS_MATCHES(pyramid::patchify(im, 5), DimensionError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("48") &&
                               Catch::Matchers::ContainsSubstring("5")));
  }
}

TEST_CASE("augment with a disabled policy only resizes and standardizes", "[pyramid]") {
  Image patch = random_image(24, 2);
  AugmentPolicy off = AugmentPolicy::disabled();
  RandomStream rng(99);
  Image out = pyramid::augment(patch, rng, off, 32);
  Image expect = standardized_resize(patch, 32, off);
  REQUIRE(out.data == expect.data);
}

TEST_CASE("augment is deterministic given the stream seed", "[pyramid]") {
  Image patch = random_image(24, 3);
  AugmentPolicy policy;  // defaults: crop, flip, jitter, blur all active
  RandomStream r1(1234), r2(1234);
  Image a = pyramid::augment(patch, r1, policy, 32);
  Image b = pyramid::augment(patch, r2, policy, 32);
  REQUIRE(a.data == b.data);
}

TEST_CASE("flip-only policy matches the pixel-mirroring oracle", "[pyramid]") {
  Image patch = random_image(24, 4);
  AugmentPolicy policy = AugmentPolicy::disabled();
  policy.flip_prob = 1.0;
  RandomStream rng(5);
  Image out = pyramid::augment(patch, rng, policy, 32);
  Image expect = standardized_resize(mirror_horizontal(patch), 32, policy);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    REQUIRE(out.data[i] == Catch::Approx(expect.data[i]).margin(1e-6));
}

TEST_CASE("build_pyramid_pair produces the paper's patch counts", "[pyramid]") {
  Image im = random_image(48, 6);
  PyramidSpec spec;  // S=2, grids 1/2/3
  auto pair = pyramid::build_pyramid_pair(im, 77, spec);
  REQUIRE(pair.view.size() == 3);
  REQUIRE(pair.view[0].patches.size() == 1);
  REQUIRE(pair.view[1].patches.size() == 4);
  REQUIRE(pair.view[2].patches.size() == 9);
  REQUIRE(pair.view_prime[2].patches.size() == 9);
  for (const auto& g : pair.view)
    for (const auto& p : g.patches) {
      REQUIRE(p.height == spec.patch_input_size);
      REQUIRE(p.width == spec.patch_input_size);
    }
}

TEST_CASE("disabled augmentation makes the two views identical", "[pyramid]") {
  Image im = random_image(48, 7);
  PyramidSpec spec;
  spec.augment = AugmentPolicy::disabled();
  auto pair = pyramid::build_pyramid_pair(im, 1, spec);
  for (std::size_t s = 0; s < pair.view.size(); ++s)
    for (std::size_t m = 0; m < pair.view[s].patches.size(); ++m)
      REQUIRE(pair.view[s].patches[m].data == pair.view_prime[s].patches[m].data);
}

TEST_CASE("build_pyramid_pair is deterministic and views are independent", "[pyramid]") {
  PyramidSpec spec;
  Image im = random_image(48, 8);
  auto a = pyramid::build_pyramid_pair(im, 42, spec);
  auto b = pyramid::build_pyramid_pair(im, 42, spec);
  for (std::size_t s = 0; s < a.view.size(); ++s)
    for (std::size_t m = 0; m < a.view[s].patches.size(); ++m) {
      REQUIRE(a.view[s].patches[m].data == b.view[s].patches[m].data);
      REQUIRE(a.view_prime[s].patches[m].data == b.view_prime[s].patches[m].data);
    }

  // With augmentation on, the probability that a view pair coincides is
  // negligible: check 100 random images.
  int differing = 0;
  for (int t = 0; t < 100; ++t) {
    Image r = random_image(48, 1000 + t);
    auto pair = pyramid::build_pyramid_pair(r, t, spec);
    bool any = false;
    for (std::size_t s = 0; s < pair.view.size() && !any; ++s)
      for (std::size_t m = 0; m < pair.view[s].patches.size() && !any; ++m)
        any = pair.view[s].patches[m].data != pair.view_prime[s].patches[m].data;
    differing += any;
  }
  REQUIRE(differing == 100);
}

TEST_CASE("pyramid spec invariants", "[pyramid]") {
  PyramidSpec spec;
  spec.grids = {2, 3, 4};  // grid 0 must be 1
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
  spec = PyramidSpec{};
  spec.grids = {1, 3, 2};  // not increasing
  REQUIRE_THROWS_AS(spec.validate(), ConfigError);
}
