// Copyright Contributors to the SVRF Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

namespace svrf {

/// RGB image with values in [0,1], interleaved row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  static Image filled(int w, int h, double r, double g, double b) {
    Image img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<std::size_t>(w) * h * 3);
    for (std::size_t p = 0; p < img.rgb.size(); p += 3) {
      img.rgb[p] = r;
      img.rgb[p + 1] = g;
      img.rgb[p + 2] = b;
    }
    return img;
  }

  double& at(int row, int col, int c) {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + c];
  }
  double at(int row, int col, int c) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + c];
  }
};

/// Single-channel grid (depth, opacity), row-major doubles.
struct Grid {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double& at(int row, int col) {
    return values[static_cast<std::size_t>(row) * width + col];
  }
  double at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * width + col];
  }
};

inline std::uint8_t quantize8(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

namespace detail {

struct FileHandle {
  std::FILE* f = nullptr;
  explicit FileHandle(const std::string& path, const char* mode)
      : f(std::fopen(path.c_str(), mode)) {}
  ~FileHandle() {
    if (f) std::fclose(f);
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
};

}  // namespace detail

/// 8-bit RGB PNG; values are clamped and rounded, no gamma handling.
inline void write_png(const Image& img, const std::string& path) {
  if (img.width <= 0 || img.height <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_png: malformed image");
  detail::FileHandle fh(path, "wb");
  if (!fh.f) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("write_png: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("write_png: png_create_info_struct failed");
  }
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(img.width) * img.height * 3);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize8(img.rgb[i]);
  std::vector<png_bytep> rows(img.height);
  for (int r = 0; r < img.height; ++r)
    rows[r] = bytes.data() + static_cast<std::size_t>(r) * img.width * 3;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error while writing " + path);
  }
  png_init_io(png, fh.f);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Reads any PNG as 8-bit RGB (palette expanded, 16-bit stripped, alpha
/// dropped, gray promoted); values scaled to [0,1].
inline Image read_png(const std::string& path) {
  detail::FileHandle fh(path, "rb");
  if (!fh.f) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("read_png: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("read_png: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error while reading " + path);
  }
  png_init_io(png, fh.f);
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: unexpected channel count in " + path);
  }

  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * 3);
  std::vector<png_bytep> rows(height);
  for (int r = 0; r < height; ++r)
    rows[r] = bytes.data() + static_cast<std::size_t>(r) * width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img;
  img.width = width;
  img.height = height;
  img.rgb.resize(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
  return img;
}

// ---- raw float grids ----
//
// 16-byte header: magic "SVDP", u32 version (1), u32 width, u32 height,
// all little-endian, then width*height float32 values row-major.

inline constexpr char kGridMagic[4] = {'S', 'V', 'D', 'P'};
inline constexpr std::uint32_t kGridVersion = 1;

namespace detail {

inline void put_u32_file(std::FILE* f, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
  if (std::fwrite(b, 1, 4, f) != 4) throw std::runtime_error("grid write failed");
}

inline std::uint32_t get_u32_file(std::FILE* f) {
  std::uint8_t b[4];
  if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("grid: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void write_grid(const Grid& grid, const std::string& path) {
  if (grid.values.size() != static_cast<std::size_t>(grid.width) * grid.height)
    throw std::invalid_argument("write_grid: malformed grid");
  detail::FileHandle fh(path, "wb");
  if (!fh.f) throw std::runtime_error("write_grid: cannot open " + path);
  if (std::fwrite(kGridMagic, 1, 4, fh.f) != 4)
    throw std::runtime_error("write_grid: write failed");
  detail::put_u32_file(fh.f, kGridVersion);
  detail::put_u32_file(fh.f, static_cast<std::uint32_t>(grid.width));
  detail::put_u32_file(fh.f, static_cast<std::uint32_t>(grid.height));
  for (double v : grid.values) {
    const float fv = static_cast<float>(v);
    std::uint32_t bits;
    static_assert(sizeof(bits) == sizeof(fv));
    std::memcpy(&bits, &fv, 4);
    detail::put_u32_file(fh.f, bits);
  }
}

inline Grid read_grid(const std::string& path) {
  detail::FileHandle fh(path, "rb");
  if (!fh.f) throw std::runtime_error("read_grid: cannot open " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, fh.f) != 4 || std::memcmp(magic, kGridMagic, 4) != 0)
    throw std::runtime_error("read_grid: bad magic in " + path);
  if (detail::get_u32_file(fh.f) != kGridVersion)
    throw std::runtime_error("read_grid: unsupported version in " + path);
  Grid grid;
  grid.width = static_cast<int>(detail::get_u32_file(fh.f));
  grid.height = static_cast<int>(detail::get_u32_file(fh.f));
  grid.values.resize(static_cast<std::size_t>(grid.width) * grid.height);
  for (double& v : grid.values) {
    std::uint32_t bits = detail::get_u32_file(fh.f);
    float fv;
    std::memcpy(&fv, &bits, 4);
    v = fv;
  }
  return grid;
}

/// Gray preview of a grid normalized to its [min, max]; returns the range so
/// callers can record it next to the file.
inline std::pair<double, double> write_grid_preview(const Grid& grid,
                                                    const std::string& path) {
  double lo = 0.0, hi = 0.0;
  if (!grid.values.empty()) {
    lo = *std::min_element(grid.values.begin(), grid.values.end());
    hi = *std::max_element(grid.values.begin(), grid.values.end());
  }
  const double span = hi - lo;
  Image img;
  img.width = grid.width;
  img.height = grid.height;
  img.rgb.resize(grid.values.size() * 3);
  for (std::size_t i = 0; i < grid.values.size(); ++i) {
    const double v = span > 0.0 ? (grid.values[i] - lo) / span : 0.0;
    img.rgb[i * 3] = img.rgb[i * 3 + 1] = img.rgb[i * 3 + 2] = v;
  }
  write_png(img, path);
  return {lo, hi};
}

}  // namespace svrf
