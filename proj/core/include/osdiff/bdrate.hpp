// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

namespace osdiff {

/// One operating point of a codec: measured rate plus the two distortion
/// axes computed on decoded vs original pixels.
struct RdPoint {
  double bpp = 0;
  double psnr = 0;
  double ms_ssim = 0;
};

/// Ordered rate points of one model/config; bpp must be strictly increasing.
struct RdCurve {
  std::string model_id;
  std::vector<RdPoint> points;

  void validate() const;
};

enum class QualityMetric { kPsnr, kMsSsim };

/// Bjontegaard delta rate in percent: polynomial fit of log-rate against
/// quality, integrated in closed form over the common quality interval.
/// Negative means `test` saves rate over `anchor` at equal quality. The fit
/// degree is min(3, points-1), so 2-point curves compare via a linear fit.
double bd_rate(const RdCurve& anchor, const RdCurve& test, QualityMetric metric);

}  // namespace osdiff
