#ifndef SSPRL_SYNTH_HPP_
#define SSPRL_SYNTH_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssprl/common.hpp"
#include "ssprl/image.hpp"
#include "ssprl/rng.hpp"

namespace ssprl::synth {

// Classes are (shape, color) pairs so that a single patch holds enough
// evidence for its label. Class c maps to shape c / n_colors and color
// c % n_colors, with n_colors = min(num_classes, 5).

constexpr int kMaxShapes = 8;
constexpr int kMaxColors = 5;

// Stream salts. Image i draws from RandomStream(derive_seed(seed, kImageSalt, i));
// the first draw is the glyph count k = uniform_int(min, max). Tests replay this.
constexpr std::uint64_t kImageSalt = 0x5331;
constexpr std::uint64_t kSplitSalt = 0x5332;

struct DatasetSpec {
  int num_images = 2000;
  int image_size = 48;
  int num_classes = 20;
  int objects_min = 1;
  int objects_max = 3;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_images < 1) throw ConfigError("DatasetSpec.num_images must be >= 1");
    if (image_size < 12 || image_size % 12 != 0)
      throw ConfigError("DatasetSpec.image_size must be a positive multiple of 12");
    if (num_classes < 2) throw ConfigError("DatasetSpec.num_classes must be >= 2");
    if (num_classes > kMaxShapes * kMaxColors)
      throw ConfigError("DatasetSpec.num_classes exceeds the glyph vocabulary (40)");
    if (objects_min < 1) throw ConfigError("DatasetSpec.objects_per_image min must be >= 1");
    if (objects_max < objects_min)
      throw ConfigError("DatasetSpec.objects_per_image max must be >= min");
    if (objects_max > num_classes)
      throw ConfigError("DatasetSpec.objects_per_image max must be <= num_classes");
  }

  int n_colors() const { return std::min(num_classes, kMaxColors); }
  int n_shapes() const { return (num_classes + n_colors() - 1) / n_colors(); }
};

struct GlyphRecord {
  int image_index = 0;
  int class_id = 0;
  double center_x = 0.0;
  double center_y = 0.0;
  double radius = 0.0;
  double rotation = 0.0;
};

struct LabeledImageSet {
  std::vector<Image> images;
  Eigen::MatrixXi labels;            // num_images x num_classes, 0/1
  std::vector<GlyphRecord> glyphs;   // generator metadata, not serialized

  int size() const { return static_cast<int>(images.size()); }
};

namespace detail {

inline const float kPalette[kMaxColors][3] = {
    {0.85f, 0.10f, 0.10f},  // red
    {0.10f, 0.72f, 0.15f},  // green
    {0.15f, 0.25f, 0.88f},  // blue
    {0.92f, 0.85f, 0.10f},  // yellow
    {0.82f, 0.12f, 0.80f},  // magenta
};

inline bool inside_shape(int shape, double x, double y) {
  switch (shape) {
    case 0:  // disk
      return x * x + y * y <= 1.0;
    case 1:  // square
      return std::max(std::abs(x), std::abs(y)) <= 0.88;
    case 2: {  // triangle, apex up
      if (y > 0.72 || y < -1.0) return false;
      return std::abs(x) <= (y + 1.0) * 0.55;
    }
    case 3:  // plus
      return (std::abs(x) <= 0.32 || std::abs(y) <= 0.32) &&
             std::max(std::abs(x), std::abs(y)) <= 1.0;
    case 4: {  // ring
      double d = x * x + y * y;
      return d <= 1.0 && d >= 0.3;
    }
    case 5:  // diamond
      return std::abs(x) + std::abs(y) <= 1.0;
    case 6:  // X
      return (std::abs(x - y) <= 0.42 || std::abs(x + y) <= 0.42) &&
             std::max(std::abs(x), std::abs(y)) <= 0.95;
    default:  // horizontal bar
      return std::abs(y) <= 0.42 && std::abs(x) <= 1.0;
  }
}

inline void draw_glyph(Image& im, const GlyphRecord& g, const float color[3]) {
  const double r = g.radius;
  const double cs = std::cos(-g.rotation), sn = std::sin(-g.rotation);
  const int shape = g.class_id;  // caller passes shape id here
  int y_lo = std::max(0, static_cast<int>(std::floor(g.center_y - r - 1)));
  int y_hi = std::min(im.height - 1, static_cast<int>(std::ceil(g.center_y + r + 1)));
  int x_lo = std::max(0, static_cast<int>(std::floor(g.center_x - r - 1)));
  int x_hi = std::min(im.width - 1, static_cast<int>(std::ceil(g.center_x + r + 1)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) {
      int hit = 0;
      for (int sy = 0; sy < 3; ++sy)
        for (int sx = 0; sx < 3; ++sx) {
          double px = x + (sx + 0.5) / 3.0 - g.center_x;
          double py = y + (sy + 0.5) / 3.0 - g.center_y;
          double lx = (px * cs - py * sn) / r;
          double ly = (px * sn + py * cs) / r;
          if (inside_shape(shape, lx, ly)) ++hit;
        }
      if (hit == 0) continue;
      float cov = static_cast<float>(hit) / 9.0f;
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = (1.0f - cov) * im.at(c, y, x) + cov * color[c];
    }
}

inline Image render_background(int size, RandomStream& rng) {
  Image im(size, size, 3);
  double gray = rng.uniform(0.38, 0.58);
  double tint[3];
  for (double& t : tint) t = rng.uniform(-0.04, 0.04);
  // Coarse noise grid, bilinearly upsampled, plus fine per-pixel noise.
  const int g = 6;
  std::vector<double> grid(g * g);
  for (double& v : grid) v = rng.uniform(-0.07, 0.07);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double gy = (y + 0.5) / size * (g - 1);
      double gx = (x + 0.5) / size * (g - 1);
      int y0 = static_cast<int>(gy), x0 = static_cast<int>(gx);
      int y1 = std::min(y0 + 1, g - 1), x1 = std::min(x0 + 1, g - 1);
      double wy = gy - y0, wx = gx - x0;
      double coarse = (1 - wy) * ((1 - wx) * grid[y0 * g + x0] + wx * grid[y0 * g + x1]) +
                      wy * ((1 - wx) * grid[y1 * g + x0] + wx * grid[y1 * g + x1]);
      double fine = rng.uniform(-0.015, 0.015);
      for (int c = 0; c < 3; ++c) {
        double v = gray + tint[c] + coarse + fine;
        im.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  return im;
}

}  // namespace detail

/// Renders one image of the dataset. Deterministic in (spec, index).
inline Image generate_image(const DatasetSpec& spec, int index,
                            std::vector<int>* out_classes,
                            std::vector<GlyphRecord>* out_glyphs) {
  RandomStream rng(derive_seed(spec.seed, kImageSalt,
                               static_cast<std::uint64_t>(index)));
  // Draw 1: glyph count. Draws 2..k+1: classes via partial Fisher-Yates.
  int k = static_cast<int>(rng.uniform_int(static_cast<long>(spec.objects_min),
                                           static_cast<long>(spec.objects_max)));
  std::vector<int> pool(spec.num_classes);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> classes;
  for (int j = 0; j < k; ++j) {
    std::size_t pick = j + static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::uint64_t>(pool.size() - j)));
    std::swap(pool[j], pool[pick]);
    classes.push_back(pool[j]);
  }
  Image im = detail::render_background(spec.image_size, rng);
  const int n_colors = spec.n_colors();
  for (int cls : classes) {
    GlyphRecord g;
    g.image_index = index;
    g.class_id = cls;
    g.radius = spec.image_size * rng.uniform(0.11, 0.17);
    g.center_x = rng.uniform(g.radius + 1.0, spec.image_size - g.radius - 1.0);
    g.center_y = rng.uniform(g.radius + 1.0, spec.image_size - g.radius - 1.0);
    g.rotation = rng.uniform(-0.35, 0.35);
    float color[3];
    float bright = static_cast<float>(rng.uniform(0.9, 1.1));
    for (int c = 0; c < 3; ++c)
      color[c] = std::clamp(detail::kPalette[cls % n_colors][c] * bright, 0.0f, 1.0f);
    GlyphRecord draw = g;
    draw.class_id = cls / n_colors;  // shape id for the renderer
    detail::draw_glyph(im, draw, color);
    if (out_glyphs) out_glyphs->push_back(g);
  }
  quantize_to_8bit(im);
  if (out_classes) *out_classes = classes;
  return im;
}

inline LabeledImageSet generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  LabeledImageSet set;
  set.images.reserve(spec.num_images);
  set.labels = Eigen::MatrixXi::Zero(spec.num_images, spec.num_classes);
  for (int i = 0; i < spec.num_images; ++i) {
    std::vector<int> classes;
    set.images.push_back(generate_image(spec, i, &classes, &set.glyphs));
    for (int c : classes) set.labels(i, c) = 1;
  }
  return set;
}

/// Nested index splits: fraction f gets the first round(f*N) entries of one
/// seed-determined permutation, so smaller fractions are subsets of larger.
inline std::vector<std::vector<int>> split_indices(int n,
                                                   const std::vector<double>& fractions,
                                                   std::uint64_t seed) {
  for (double f : fractions)
    if (!(f > 0.0) || f > 1.0)
      throw ConfigError("split: fractions must lie in (0, 1]");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  RandomStream rng(derive_seed(seed, kSplitSalt));
  rng.shuffle(perm);
  std::vector<std::vector<int>> out;
  for (double f : fractions) {
    int count = static_cast<int>(std::floor(f * n + 0.5));  // round half up
    out.emplace_back(perm.begin(), perm.begin() + count);
  }
  return out;
}

inline LabeledImageSet subset(const LabeledImageSet& set, const std::vector<int>& idx) {
  LabeledImageSet out;
  out.labels.resize(static_cast<int>(idx.size()), set.labels.cols());
  for (std::size_t j = 0; j < idx.size(); ++j) {
    out.images.push_back(set.images[idx[j]]);
    out.labels.row(static_cast<int>(j)) = set.labels.row(idx[j]);
  }
  return out;
}

inline std::vector<LabeledImageSet> split(const LabeledImageSet& set,
                                          const std::vector<double>& fractions,
                                          std::uint64_t seed) {
  std::vector<LabeledImageSet> out;
  for (const auto& idx : split_indices(set.size(), fractions, seed))
    out.push_back(subset(set, idx));
  return out;
}

// ---------------------------------------------------------------------------
// On-disk format: images/NNNNNN.png, labels.csv, spec.json.

inline nlohmann::json spec_to_json(const DatasetSpec& spec) {
  return {{"num_images", spec.num_images},
          {"image_size", spec.image_size},
          {"num_classes", spec.num_classes},
          {"objects_per_image", {spec.objects_min, spec.objects_max}},
          {"seed", spec.seed}};
}

inline DatasetSpec spec_from_json(const nlohmann::json& j) {
  DatasetSpec spec;
  spec.num_images = j.at("num_images").get<int>();
  spec.image_size = j.at("image_size").get<int>();
  spec.num_classes = j.at("num_classes").get<int>();
  spec.objects_min = j.at("objects_per_image").at(0).get<int>();
  spec.objects_max = j.at("objects_per_image").at(1).get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

inline void save_dataset(const std::string& dir, const DatasetSpec& spec,
                         const LabeledImageSet& set) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  char name[32];
  for (int i = 0; i < set.size(); ++i) {
    std::snprintf(name, sizeof(name), "%06d.png", i);
    write_png((fs::path(dir) / "images" / name).string(), set.images[i]);
  }
  std::ofstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw IoError("save_dataset: cannot write labels.csv");
  csv << "index";
  for (int c = 0; c < set.labels.cols(); ++c) csv << ",c" << c;
  csv << "\n";
  for (int i = 0; i < set.size(); ++i) {
    csv << i;
    for (int c = 0; c < set.labels.cols(); ++c) csv << "," << set.labels(i, c);
    csv << "\n";
  }
  std::ofstream js(fs::path(dir) / "spec.json");
  js << spec_to_json(spec).dump(2) << "\n";
}

inline std::pair<DatasetSpec, LabeledImageSet> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream js(fs::path(dir) / "spec.json");
  if (!js) throw IoError("load_dataset: missing spec.json in " + dir);
  nlohmann::json j;
  js >> j;
  DatasetSpec spec = spec_from_json(j);
  LabeledImageSet set;
  set.labels = Eigen::MatrixXi::Zero(spec.num_images, spec.num_classes);
  std::ifstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw IoError("load_dataset: missing labels.csv in " + dir);
  std::string line;
  std::getline(csv, line);  // header
  int row = 0;
  while (std::getline(csv, line) && row < spec.num_images) {
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    for (int c = 0; c < spec.num_classes; ++c) {
      std::getline(ss, cell, ',');
      set.labels(row, c) = std::stoi(cell);
    }
    ++row;
  }
  if (row != spec.num_images) throw IoError("load_dataset: labels.csv row count mismatch");
  char name[32];
  for (int i = 0; i < spec.num_images; ++i) {
    std::snprintf(name, sizeof(name), "%06d.png", i);
    set.images.push_back(read_png((fs::path(dir) / "images" / name).string()));
  }
  return {spec, set};
}

}  // namespace ssprl::synth

#endif  // SSPRL_SYNTH_HPP_
