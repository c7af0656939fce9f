// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "osdiff/bdrate.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace osdiff {

namespace {

double quality_of(const RdPoint& p, QualityMetric m) {
  return m == QualityMetric::kPsnr ? p.psnr : p.ms_ssim;
}

// Least-squares polynomial fit (ascending coefficients) via normal
// equations with partial-pivot elimination; degree <= 3, double precision.
std::vector<double> polyfit(const std::vector<double>& x, const std::vector<double>& y, int degree) {
  int n = degree + 1;
  std::vector<double> a(size_t(n) * size_t(n), 0.0), rhs(static_cast<size_t>(n), 0.0);
  for (size_t k = 0; k < x.size(); ++k) {
    std::vector<double> pw(static_cast<size_t>(2 * n - 1), 1.0);
    for (int i = 1; i < 2 * n - 1; ++i) pw[static_cast<size_t>(i)] = pw[static_cast<size_t>(i - 1)] * x[k];
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) a[size_t(i) * n + size_t(j)] += pw[static_cast<size_t>(i + j)];
      rhs[static_cast<size_t>(i)] += pw[static_cast<size_t>(i)] * y[k];
    }
  }
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[size_t(r) * n + size_t(col)]) > std::fabs(a[size_t(piv) * n + size_t(col)])) piv = r;
    if (std::fabs(a[size_t(piv) * n + size_t(col)]) < 1e-30)
      throw std::invalid_argument("bd_rate: degenerate fit (duplicate quality values?)");
    if (piv != col) {
      for (int j = 0; j < n; ++j) std::swap(a[size_t(piv) * n + size_t(j)], a[size_t(col) * n + size_t(j)]);
      std::swap(rhs[static_cast<size_t>(piv)], rhs[static_cast<size_t>(col)]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a[size_t(r) * n + size_t(col)] / a[size_t(col) * n + size_t(col)];
      for (int j = col; j < n; ++j) a[size_t(r) * n + size_t(j)] -= f * a[size_t(col) * n + size_t(j)];
      rhs[static_cast<size_t>(r)] -= f * rhs[static_cast<size_t>(col)];
    }
  }
  std::vector<double> coef(static_cast<size_t>(n), 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double s = rhs[static_cast<size_t>(r)];
    for (int j = r + 1; j < n; ++j) s -= a[size_t(r) * n + size_t(j)] * coef[static_cast<size_t>(j)];
    coef[static_cast<size_t>(r)] = s / a[size_t(r) * n + size_t(r)];
  }
  return coef;
}

// Closed-form definite integral of the fitted polynomial.
double poly_integral(const std::vector<double>& coef, double lo, double hi) {
  double acc = 0;
  for (size_t i = 0; i < coef.size(); ++i)
    acc += coef[i] * (std::pow(hi, double(i) + 1) - std::pow(lo, double(i) + 1)) / (double(i) + 1);
  return acc;
}

struct FitInput {
  std::vector<double> quality, log_rate;
  double qmin, qmax;
};

FitInput prepare(const RdCurve& c, QualityMetric m) {
  c.validate();
  FitInput f;
  for (const RdPoint& p : c.points) {
    if (!(p.bpp > 0)) throw std::invalid_argument("bd_rate: non-positive bpp in curve " + c.model_id);
    f.quality.push_back(quality_of(p, m));
    f.log_rate.push_back(std::log(p.bpp));
  }
  f.qmin = *std::min_element(f.quality.begin(), f.quality.end());
  f.qmax = *std::max_element(f.quality.begin(), f.quality.end());
  if (!(f.qmax > f.qmin)) throw std::invalid_argument("bd_rate: zero-width quality range");
  return f;
}

}  // namespace

void RdCurve::validate() const {
  if (points.size() < 2) throw std::invalid_argument("rd curve: need at least 2 points");
  for (size_t i = 1; i < points.size(); ++i)
    if (!(points[i].bpp > points[i - 1].bpp))
      throw std::invalid_argument("rd curve: bpp must be strictly increasing");
}

double bd_rate(const RdCurve& anchor, const RdCurve& test, QualityMetric metric) {
  FitInput fa = prepare(anchor, metric);
  FitInput ft = prepare(test, metric);
  double lo = std::max(fa.qmin, ft.qmin);
  double hi = std::min(fa.qmax, ft.qmax);
  if (!(hi > lo)) throw std::invalid_argument("bd_rate: curves have no quality overlap");
  int degree = static_cast<int>(std::min<size_t>(3, std::min(fa.quality.size(), ft.quality.size()) - 1));
  std::vector<double> ca = polyfit(fa.quality, fa.log_rate, degree);
  std::vector<double> ct = polyfit(ft.quality, ft.log_rate, degree);
  double avg_diff = (poly_integral(ct, lo, hi) - poly_integral(ca, lo, hi)) / (hi - lo);
  return (std::exp(avg_diff) - 1.0) * 100.0;
}

}  // namespace osdiff
