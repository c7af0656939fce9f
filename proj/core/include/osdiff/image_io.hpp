// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "osdiff/tensor.hpp"

namespace osdiff {

/// Images are float tensors of shape [3, H, W] with values in [0, 1].
using Image = TensorT<float>;

inline int image_height(const Image& img) { return img.dim(1); }
inline int image_width(const Image& img) { return img.dim(2); }

/// Reads an 8-bit PNG as RGB (gray and palette images are expanded,
/// alpha is stripped).
Image read_png(const std::string& path);

/// Writes an 8-bit RGB PNG; values are clamped and rounded to the 8-bit grid.
void write_png(const std::string& path, const Image& img);

/// Bilinear resample to the exact target size.
Image resize_bilinear(const Image& img, int out_height, int out_width);

/// Proportional resize so the shorter side hits `short_side`, then a
/// centered crop to crop_h x crop_w (the usual benchmark preprocessing).
Image resize_shorter_and_center_crop(const Image& img, int short_side, int crop_h, int crop_w);

}  // namespace osdiff
