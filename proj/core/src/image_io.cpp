// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "osdiff/image_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

namespace osdiff {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

Image read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: read struct alloc failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png: info struct alloc failed");
  }
  std::vector<png_bytep> rows;
  std::vector<uint8_t> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = buf.data() + size_t(y) * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img({3, static_cast<int>(h), static_cast<int>(w)});
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img[(int64_t(c) * h + y) * w + x] = float(buf[size_t(y) * rowbytes + size_t(x) * 3 + size_t(c)]) / 255.0f;
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw std::invalid_argument("png: image must be [3,H,W]");
  int h = img.dim(1), w = img.dim(2);

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("png: cannot open for write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png: write struct alloc failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png: info struct alloc failed");
  }
  std::vector<uint8_t> buf(size_t(h) * size_t(w) * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = img[(int64_t(c) * h + y) * w + x];
        v = std::min(1.0f, std::max(0.0f, v));
        buf[(size_t(y) * w + size_t(x)) * 3 + size_t(c)] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
    rows[static_cast<size_t>(y)] = buf.data() + size_t(y) * size_t(w) * 3;
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image resize_bilinear(const Image& img, int out_height, int out_width) {
  if (img.rank() != 3 || img.dim(0) != 3) throw std::invalid_argument("resize: image must be [3,H,W]");
  if (out_height < 1 || out_width < 1) throw std::invalid_argument("resize: bad target size");
  int h = img.dim(1), w = img.dim(2);
  Image out({3, out_height, out_width});
  double sy = double(h) / out_height, sx = double(w) / out_width;
  for (int y = 0; y < out_height; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y0c = std::min(h - 1, std::max(0, y0));
    int y1c = std::min(h - 1, std::max(0, y0 + 1));
    for (int x = 0; x < out_width; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x0c = std::min(w - 1, std::max(0, x0));
      int x1c = std::min(w - 1, std::max(0, x0 + 1));
      for (int c = 0; c < 3; ++c) {
        double v00 = img[(int64_t(c) * h + y0c) * w + x0c];
        double v01 = img[(int64_t(c) * h + y0c) * w + x1c];
        double v10 = img[(int64_t(c) * h + y1c) * w + x0c];
        double v11 = img[(int64_t(c) * h + y1c) * w + x1c];
        out[(int64_t(c) * out_height + y) * out_width + x] = static_cast<float>(
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

Image resize_shorter_and_center_crop(const Image& img, int short_side, int crop_h, int crop_w) {
  int h = img.dim(1), w = img.dim(2);
  double scale = double(short_side) / std::min(h, w);
  int nh = std::max(short_side, static_cast<int>(std::lround(h * scale)));
  int nw = std::max(short_side, static_cast<int>(std::lround(w * scale)));
  Image resized = resize_bilinear(img, nh, nw);
  if (crop_h > nh || crop_w > nw)
    throw std::invalid_argument("center crop larger than the resized image");
  int oy = (nh - crop_h) / 2, ox = (nw - crop_w) / 2;
  Image out({3, crop_h, crop_w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < crop_h; ++y)
      for (int x = 0; x < crop_w; ++x)
        out[(int64_t(c) * crop_h + y) * crop_w + x] =
            resized[(int64_t(c) * nh + (y + oy)) * nw + (x + ox)];
  return out;
}

}  // namespace osdiff
