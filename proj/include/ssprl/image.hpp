#ifndef SSPRL_IMAGE_HPP_
#define SSPRL_IMAGE_HPP_

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ssprl/common.hpp"

namespace ssprl {

/// Planar CHW float image, values nominally in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;  // size channels * height * width

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Snaps every value to the nearest n/255 so 8-bit PNG round-trips are exact.
inline void quantize_to_8bit(Image& im) {
  for (float& v : im.data) {
    float c = std::clamp(v, 0.0f, 1.0f);
    v = std::round(c * 255.0f) / 255.0f;
  }
}

inline Image mirror_horizontal(const Image& im) {
  Image out(im.height, im.width, im.channels);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x)
        out.at(c, y, x) = im.at(c, y, im.width - 1 - x);
  return out;
}

/// Bilinear resize with half-pixel centers (mirror-equivariant sampling).
inline Image resize_bilinear(const Image& im, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0)
    throw DimensionError("resize_bilinear: non-positive output size");
  Image out(out_h, out_w, im.channels);
  const double sy = static_cast<double>(im.height) / out_h;
  const double sx = static_cast<double>(im.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(im.height - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, im.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(im.width - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, im.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < im.channels; ++c) {
        double top = (1.0 - wx) * im.at(c, y0, x0) + wx * im.at(c, y0, x1);
        double bot = (1.0 - wx) * im.at(c, y1, x0) + wx * im.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

/// Crops the rectangle [y0, y0+h) x [x0, x0+w); must lie inside the image.
inline Image crop(const Image& im, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h < 1 || w < 1 || y0 + h > im.height || x0 + w > im.width)
    throw DimensionError("crop: rectangle out of bounds");
  Image out(h, w, im.channels);
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = im.at(c, y0 + y, x0 + x);
  return out;
}

/// 3x3 binomial blur, reflect padding.
inline Image blur3(const Image& im) {
  static const float k[3] = {0.25f, 0.5f, 0.25f};
  Image tmp(im.height, im.width, im.channels);
  Image out(im.height, im.width, im.channels);
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        float acc = 0.0f;
        for (int d = -1; d <= 1; ++d) acc += k[d + 1] * im.at(c, y, reflect(x + d, im.width));
        tmp.at(c, y, x) = acc;
      }
  for (int c = 0; c < im.channels; ++c)
    for (int y = 0; y < im.height; ++y)
      for (int x = 0; x < im.width; ++x) {
        float acc = 0.0f;
        for (int d = -1; d <= 1; ++d) acc += k[d + 1] * tmp.at(c, reflect(y + d, im.height), x);
        out.at(c, y, x) = acc;
      }
  return out;
}

// ---------------------------------------------------------------------------
// PNG I/O (8-bit RGB)

inline void write_png(const std::string& path, const Image& im) {
  if (im.channels != 3) throw IoError("write_png: expected 3-channel image");
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw IoError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw IoError("write_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, im.width, im.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(im.width) * 3);
  for (int y = 0; y < im.height; ++y) {
    for (int x = 0; x < im.width; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = std::clamp(im.at(c, y, x), 0.0f, 1.0f);
        row[x * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline Image read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw IoError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    throw IoError("read_png: libpng failure for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY ||
      png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int w = static_cast<int>(png_get_image_width(png, info));
  Image im(h, w, 3);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        im.at(c, y, x) = static_cast<float>(row[x * 3 + c]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return im;
}

}  // namespace ssprl

#endif  // SSPRL_IMAGE_HPP_
