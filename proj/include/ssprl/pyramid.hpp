#ifndef SSPRL_PYRAMID_HPP_
#define SSPRL_PYRAMID_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ssprl/common.hpp"
#include "ssprl/image.hpp"
#include "ssprl/rng.hpp"

namespace ssprl::pyramid {

/// Per-patch augmentation: random resized crop (strictly inside the patch),
/// horizontal flip, color jitter, optional blur, then resize to the common
/// input size and channel standardization.
struct AugmentPolicy {
  double crop_scale_min = 0.5;   // area fraction of the patch
  double crop_scale_max = 1.0;
  double crop_aspect_min = 0.75;
  double crop_aspect_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  double jitter_brightness = 0.25;
  double jitter_contrast = 0.25;
  double jitter_saturation = 0.15;
  double blur_prob = 0.2;
  double normalize_mean = 0.5;
  double normalize_std = 0.25;

  void validate() const {
    if (!(crop_scale_min > 0.0) || crop_scale_min > crop_scale_max || crop_scale_max > 1.0)
      throw ConfigError("AugmentPolicy.crop_scale range must satisfy 0 < min <= max <= 1");
    if (!(crop_aspect_min > 0.0) || crop_aspect_min > crop_aspect_max)
      throw ConfigError("AugmentPolicy.crop_aspect range invalid");
    for (double p : {flip_prob, blur_prob})
      if (p < 0.0 || p > 1.0) throw ConfigError("AugmentPolicy probabilities must be in [0, 1]");
    for (double s : {jitter_brightness, jitter_contrast, jitter_saturation})
      if (s < 0.0 || s >= 1.0) throw ConfigError("AugmentPolicy jitter strengths must be in [0, 1)");
    if (!(normalize_std > 0.0)) throw ConfigError("AugmentPolicy.normalize_std must be > 0");
  }

  /// Identity pipeline apart from resizing and standardization.
  static AugmentPolicy disabled() {
    AugmentPolicy p;
    p.crop_scale_min = p.crop_scale_max = 1.0;
    p.flip_prob = 0.0;
    p.jitter_brightness = p.jitter_contrast = p.jitter_saturation = 0.0;
    p.blur_prob = 0.0;
    return p;
  }
};

struct PyramidSpec {
  int num_scales = 2;                 // scales run s = 0..num_scales
  std::vector<int> grids = {1, 2, 3};  // grid side g_s per scale; M_s = g_s^2
  int patch_input_size = 32;
  AugmentPolicy augment;

  void validate() const {
    if (num_scales < 0) throw ConfigError("PyramidSpec.num_scales must be >= 0");
    if (static_cast<int>(grids.size()) != num_scales + 1)
      throw ConfigError("PyramidSpec.grids must list one grid side per scale 0..S");
    if (grids[0] != 1) throw ConfigError("PyramidSpec.grids[0] must be 1 (global view)");
    for (std::size_t s = 1; s < grids.size(); ++s)
      if (grids[s] <= grids[s - 1])
        throw ConfigError("PyramidSpec.grids must be strictly increasing");
    if (patch_input_size < 8 || patch_input_size % 8 != 0)
      throw ConfigError("PyramidSpec.patch_input_size must be a positive multiple of 8");
    augment.validate();
  }

  int patches_at(int s) const { return grids[s] * grids[s]; }
  int total_patches() const {
    int n = 0;
    for (int s = 0; s <= num_scales; ++s) n += patches_at(s);
    return n;
  }
};

struct PatchGroup {
  int scale = 0;
  std::vector<Image> patches;  // M_s patches, row-major over the grid
};

struct PyramidPair {
  std::vector<PatchGroup> view;        // s = 0..S
  std::vector<PatchGroup> view_prime;  // same shape, independent augmentations
};

/// Tiles the image into g x g non-overlapping patches, row-major. The side
/// must be divisible by g.
inline std::vector<Image> patchify(const Image& im, int g) {
  if (g < 1) throw DimensionError("patchify: grid side must be >= 1");
  if (im.height != im.width)
    throw DimensionError("patchify: image must be square");
  if (im.height % g != 0)
    throw DimensionError("patchify: side " + std::to_string(im.height) +
                         " not divisible by grid " + std::to_string(g));
  const int p = im.height / g;
  std::vector<Image> out;
  out.reserve(g * g);
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) out.push_back(crop(im, gy * p, gx * p, p, p));
  return out;
}

/// Applies the augmentation pipeline to one patch. Draw order is fixed:
/// crop area, aspect, y, x; flip; brightness, contrast, saturation; blur.
inline Image augment(const Image& patch, RandomStream& rng, const AugmentPolicy& policy,
                     int out_size) {
  // Random resized crop, strictly within the patch.
  Image cur = patch;
  if (policy.crop_scale_max < 1.0 || policy.crop_scale_min < 1.0) {
    double area = rng.uniform(policy.crop_scale_min, policy.crop_scale_max) *
                  patch.height * patch.width;
    double aspect = std::exp(rng.uniform(std::log(policy.crop_aspect_min),
                                         std::log(policy.crop_aspect_max)));
    int cw = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, patch.width);
    int ch = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, patch.height);
    int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(patch.height - ch + 1)));
    int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(patch.width - cw + 1)));
    cur = crop(cur, y0, x0, ch, cw);
  }
  if (policy.flip_prob > 0.0 && rng.bernoulli(policy.flip_prob)) cur = mirror_horizontal(cur);
  if (policy.jitter_brightness > 0.0) {
    float f = static_cast<float>(
        rng.uniform(1.0 - policy.jitter_brightness, 1.0 + policy.jitter_brightness));
    for (float& v : cur.data) v *= f;
  }
  if (policy.jitter_contrast > 0.0) {
    float f = static_cast<float>(
        rng.uniform(1.0 - policy.jitter_contrast, 1.0 + policy.jitter_contrast));
    double mean = 0.0;
    const std::size_t plane = static_cast<std::size_t>(cur.height) * cur.width;
    for (std::size_t i = 0; i < plane; ++i)
      mean += 0.299 * cur.data[i] + 0.587 * cur.data[plane + i] + 0.114 * cur.data[2 * plane + i];
    float gray = static_cast<float>(mean / plane);
    for (float& v : cur.data) v = gray + f * (v - gray);
  }
  if (policy.jitter_saturation > 0.0) {
    float f = static_cast<float>(
        rng.uniform(1.0 - policy.jitter_saturation, 1.0 + policy.jitter_saturation));
    const std::size_t plane = static_cast<std::size_t>(cur.height) * cur.width;
    for (std::size_t i = 0; i < plane; ++i) {
      float gray = 0.299f * cur.data[i] + 0.587f * cur.data[plane + i] +
                   0.114f * cur.data[2 * plane + i];
      cur.data[i] = gray + f * (cur.data[i] - gray);
      cur.data[plane + i] = gray + f * (cur.data[plane + i] - gray);
      cur.data[2 * plane + i] = gray + f * (cur.data[2 * plane + i] - gray);
    }
  }
  if (policy.blur_prob > 0.0 && rng.bernoulli(policy.blur_prob)) cur = blur3(cur);
  // Common input size, then channel standardization.
  Image out = resize_bilinear(cur, out_size, out_size);
  const float mean = static_cast<float>(policy.normalize_mean);
  const float inv_std = static_cast<float>(1.0 / policy.normalize_std);
  for (float& v : out.data) v = (v - mean) * inv_std;
  return out;
}

// Salts separating the two views and the per-patch streams.
constexpr std::uint64_t kViewSalt = 0x7601;

/// Builds the two augmented pyramid views of one image. Every patch gets its
/// own stream derived from (seed, view, scale, patch), so patches are
/// augmented independently and the result is reproducible under any
/// evaluation order.
inline PyramidPair build_pyramid_pair(const Image& image, std::uint64_t seed,
                                      const PyramidSpec& spec) {
  spec.validate();
  PyramidPair pair;
  for (int v = 0; v < 2; ++v) {
    std::vector<PatchGroup>& dst = (v == 0) ? pair.view : pair.view_prime;
    for (int s = 0; s <= spec.num_scales; ++s) {
      PatchGroup group;
      group.scale = s;
      std::vector<Image> tiles = patchify(image, spec.grids[s]);
      for (std::size_t m = 0; m < tiles.size(); ++m) {
        RandomStream rng(derive_seed(seed, kViewSalt, static_cast<std::uint64_t>(v),
                                     static_cast<std::uint64_t>(s),
                                     static_cast<std::uint64_t>(m)));
        group.patches.push_back(augment(tiles[m], rng, spec.augment, spec.patch_input_size));
      }
      dst.push_back(std::move(group));
    }
  }
  return pair;
}

/// The deterministic "center" pyramid: tiles resized and standardized only.
/// Used for evaluation and prototype reports.
inline std::vector<PatchGroup> build_center_pyramid(const Image& image,
                                                    const PyramidSpec& spec) {
  AugmentPolicy off = AugmentPolicy::disabled();
  off.normalize_mean = spec.augment.normalize_mean;
  off.normalize_std = spec.augment.normalize_std;
  RandomStream rng(0);  // never consulted by the disabled policy
  std::vector<PatchGroup> out;
  for (int s = 0; s <= spec.num_scales; ++s) {
    PatchGroup group;
    group.scale = s;
    for (const Image& tile : patchify(image, spec.grids[s]))
      group.patches.push_back(augment(tile, rng, off, spec.patch_input_size));
    out.push_back(std::move(group));
  }
  return out;
}

}  // namespace ssprl::pyramid

#endif  // SSPRL_PYRAMID_HPP_
