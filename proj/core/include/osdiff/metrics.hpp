// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "osdiff/image_io.hpp"

namespace osdiff {

/// Peak signal-to-noise ratio on the 8-bit scale (MAX = 255). Identical
/// images report +infinity.
double psnr(const Image& a, const Image& b);

/// How many dyadic scales MS-SSIM can run on these dimensions (the 11-tap
/// window must fit at the coarsest scale), capped at the standard five.
int ms_ssim_scales_for(int height, int width);

/// Multi-scale SSIM with the standard five-scale weights, an 11x11 Gaussian
/// window (sigma 1.5) and the luminance term applied on the final scale
/// only. Channels are scored independently and averaged. Images smaller
/// than the five-scale minimum are evaluated at a reduced scale count with
/// renormalized weights and a stderr warning. `scales_used`, when non-null,
/// receives the scale count actually evaluated.
double ms_ssim(const Image& a, const Image& b, int* scales_used = nullptr);

}  // namespace osdiff
