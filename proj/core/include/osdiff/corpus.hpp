// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "osdiff/image_io.hpp"
#include "osdiff/rng.hpp"

namespace osdiff {

/// Procedural toy image families: gradients, Gaussian blobs, sinusoid
/// stripes, checkerboards and filled polygons, cycled by index. Every image
/// is a pure function of (seed, index), so corpora regenerate identically
/// on any machine with no dataset download.
inline Image make_toy_image(uint64_t seed, uint64_t index, int height, int width) {
  Rng rng(seed * 0x9E3779B97F4A7C15ull + index + 1);
  Image img({3, height, width});
  auto px = [&](int c, int y, int x) -> float& { return img[(int64_t(c) * height + y) * width + x]; };

  float c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = static_cast<float>(rng.uniform());
    c1[c] = static_cast<float>(rng.uniform());
  }

  switch (index % 5) {
    case 0: {  // linear gradient along a random direction
      double ang = rng.uniform(0, 2 * 3.14159265358979);
      double dx = std::cos(ang), dy = std::sin(ang);
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double t = (dx * x / width + dy * y / height + 1.0) * 0.5;
          t = std::clamp(t, 0.0, 1.0);
          for (int c = 0; c < 3; ++c) px(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
        }
      break;
    }
    case 1: {  // gaussian blobs over a flat background
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          for (int c = 0; c < 3; ++c) px(c, y, x) = c0[c];
      int blobs = 1 + static_cast<int>(rng.uniform_int(4));
      for (int b = 0; b < blobs; ++b) {
        double cx = rng.uniform(0.1, 0.9) * width, cy = rng.uniform(0.1, 0.9) * height;
        double sg = rng.uniform(0.05, 0.25) * std::min(width, height);
        float bc[3];
        for (int c = 0; c < 3; ++c) bc[c] = static_cast<float>(rng.uniform());
        for (int y = 0; y < height; ++y)
          for (int x = 0; x < width; ++x) {
            double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            float a = static_cast<float>(std::exp(-d2 / (2 * sg * sg)));
            for (int c = 0; c < 3; ++c) px(c, y, x) = px(c, y, x) * (1 - a) + bc[c] * a;
          }
      }
      break;
    }
    case 2: {  // sinusoid stripes
      double ang = rng.uniform(0, 3.14159265358979);
      double freq = rng.uniform(2.0, 8.0) * 2 * 3.14159265358979 / std::min(width, height);
      double phase = rng.uniform(0, 2 * 3.14159265358979);
      double kx = std::cos(ang) * freq, ky = std::sin(ang) * freq;
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double t = 0.5 + 0.5 * std::sin(kx * x + ky * y + phase);
          for (int c = 0; c < 3; ++c) px(c, y, x) = static_cast<float>(c0[c] + (c1[c] - c0[c]) * t);
        }
      break;
    }
    case 3: {  // checkerboard, anti-aliased cell edges (smoothstep over ~1.5 px)
      int cell = 8 + static_cast<int>(rng.uniform_int(13));
      double ox = rng.uniform(0, cell);
      double oy = rng.uniform(0, cell);
      auto soft_square = [cell](double u) {
        // +-1 square wave of period 2*cell with smooth transitions
        double phase = u - 2.0 * cell * std::floor(u / (2.0 * cell));  // [0, 2*cell)
        double d = std::min({phase, std::fabs(phase - cell), 2.0 * cell - phase});
        double sgn = phase < cell ? 1.0 : -1.0;
        double edge = std::min(1.0, d / 1.5);
        return sgn * edge;
      };
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double t = 0.5 + 0.5 * soft_square(x + ox) * soft_square(y + oy);
          for (int ch = 0; ch < 3; ++ch)
            px(ch, y, x) = static_cast<float>(c0[ch] + (c1[ch] - c0[ch]) * t);
        }
      break;
    }
    default: {  // filled convex-ish polygon over a background
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          for (int c = 0; c < 3; ++c) px(c, y, x) = c0[c];
      int verts = 3 + static_cast<int>(rng.uniform_int(5));
      double cx = rng.uniform(0.3, 0.7) * width, cy = rng.uniform(0.3, 0.7) * height;
      std::vector<double> angs(static_cast<size_t>(verts)), rads(static_cast<size_t>(verts));
      for (int v = 0; v < verts; ++v) {
        angs[static_cast<size_t>(v)] = rng.uniform(0, 2 * 3.14159265358979);
        rads[static_cast<size_t>(v)] = rng.uniform(0.15, 0.45) * std::min(width, height);
      }
      std::sort(angs.begin(), angs.end());
      std::vector<double> vx(static_cast<size_t>(verts)), vy(static_cast<size_t>(verts));
      for (int v = 0; v < verts; ++v) {
        vx[static_cast<size_t>(v)] = cx + rads[static_cast<size_t>(v)] * std::cos(angs[static_cast<size_t>(v)]);
        vy[static_cast<size_t>(v)] = cy + rads[static_cast<size_t>(v)] * std::sin(angs[static_cast<size_t>(v)]);
      }
      // 2x2 supersampled fill for anti-aliased edges
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          double cover = 0;
          for (int sy = 0; sy < 2; ++sy)
            for (int sx = 0; sx < 2; ++sx) {
              double py = y + 0.25 + 0.5 * sy, pxx = x + 0.25 + 0.5 * sx;
              bool inside = false;  // even-odd rule
              for (int i = 0, j = verts - 1; i < verts; j = i++) {
                double xi = vx[static_cast<size_t>(i)], yi = vy[static_cast<size_t>(i)];
                double xj = vx[static_cast<size_t>(j)], yj = vy[static_cast<size_t>(j)];
                if ((yi > py) != (yj > py) && pxx < (xj - xi) * (py - yi) / (yj - yi) + xi)
                  inside = !inside;
              }
              if (inside) cover += 0.25;
            }
          if (cover > 0)
            for (int c = 0; c < 3; ++c)
              px(c, y, x) = static_cast<float>(px(c, y, x) * (1 - cover) + c1[c] * cover);
        }
      break;
    }
  }
  return img;
}

/// Deterministic corpus of N toy images.
inline std::vector<Image> make_toy_corpus(uint64_t seed, int count, int height, int width) {
  std::vector<Image> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_toy_image(seed, static_cast<uint64_t>(i), height, width));
  return out;
}

}  // namespace osdiff
