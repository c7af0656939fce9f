// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include "osdiff/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <vector>

namespace osdiff {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kK1 = 0.01;
constexpr double kK2 = 0.03;
constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

void check_pair(const Image& a, const Image& b) {
  if (a.rank() != 3 || a.dim(0) != 3 || b.rank() != 3 || b.dim(0) != 3)
    throw std::invalid_argument("metrics: images must be [3,H,W]");
  if (!a.same_shape(b)) throw std::invalid_argument("metrics: image dimensions differ");
}

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWindow);
  double sum = 0;
  for (int i = 0; i < kWindow; ++i) {
    double d = double(i) - double(kWindow - 1) / 2.0;
    k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += k[static_cast<size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable valid-region Gaussian filter.
std::vector<double> gauss_filter(const std::vector<double>& img, int h, int w, int& oh, int& ow) {
  const std::vector<double> k = gaussian_kernel();
  oh = h - kWindow + 1;
  ow = w - kWindow + 1;
  std::vector<double> tmp(size_t(h) * size_t(ow));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * img[size_t(y) * w + size_t(x + i)];
      tmp[size_t(y) * ow + size_t(x)] = acc;
    }
  std::vector<double> out(size_t(oh) * size_t(ow));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0;
      for (int i = 0; i < kWindow; ++i) acc += k[static_cast<size_t>(i)] * tmp[size_t(y + i) * ow + size_t(x)];
      out[size_t(y) * ow + size_t(x)] = acc;
    }
  return out;
}

std::vector<double> downsample_2x(const std::vector<double>& img, int h, int w, int& oh, int& ow) {
  oh = h / 2;
  ow = w / 2;
  std::vector<double> out(size_t(oh) * size_t(ow));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out[size_t(y) * ow + size_t(x)] =
          0.25 * (img[size_t(2 * y) * w + size_t(2 * x)] + img[size_t(2 * y) * w + size_t(2 * x + 1)] +
                  img[size_t(2 * y + 1) * w + size_t(2 * x)] +
                  img[size_t(2 * y + 1) * w + size_t(2 * x + 1)]);
  return out;
}

// Mean luminance and contrast-structure terms of SSIM over one scale.
void ssim_scale(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                double& mean_l, double& mean_cs) {
  const double c1 = kK1 * kK1;  // L = 1 on the [0,1] value scale
  const double c2 = kK2 * kK2;
  int oh = 0, ow = 0;
  std::vector<double> aa(a.size()), bb(b.size()), ab(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  std::vector<double> mu_a = gauss_filter(a, h, w, oh, ow);
  std::vector<double> mu_b = gauss_filter(b, h, w, oh, ow);
  std::vector<double> s_aa = gauss_filter(aa, h, w, oh, ow);
  std::vector<double> s_bb = gauss_filter(bb, h, w, oh, ow);
  std::vector<double> s_ab = gauss_filter(ab, h, w, oh, ow);
  double acc_l = 0, acc_cs = 0;
  for (size_t i = 0; i < mu_a.size(); ++i) {
    double ma = mu_a[i], mb = mu_b[i];
    double va = s_aa[i] - ma * ma;
    double vb = s_bb[i] - mb * mb;
    double cov = s_ab[i] - ma * mb;
    acc_l += (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
    acc_cs += (2.0 * cov + c2) / (va + vb + c2);
  }
  mean_l = acc_l / double(mu_a.size());
  mean_cs = acc_cs / double(mu_a.size());
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_pair(a, b);
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = (double(a[i]) - double(b[i])) * 255.0;
    mse += d * d;
  }
  mse /= double(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

int ms_ssim_scales_for(int height, int width) {
  int scales = 0;
  int h = height, w = width;
  while (scales < 5 && h >= kWindow && w >= kWindow) {
    ++scales;
    h /= 2;
    w /= 2;
  }
  return scales;
}

double ms_ssim(const Image& a, const Image& b, int* scales_used) {
  check_pair(a, b);
  int h = a.dim(1), w = a.dim(2);
  int scales = ms_ssim_scales_for(h, w);
  if (scales == 0) throw std::invalid_argument("ms_ssim: image smaller than the 11x11 window");
  if (scales < 5)
    std::fprintf(stderr,
                 "warning: ms_ssim evaluated at %d scales for %dx%d input (below the 5-scale "
                 "minimum size); weights renormalized\n",
                 scales, w, h);
  if (scales_used) *scales_used = scales;

  double wsum = 0;
  for (int s = 0; s < scales; ++s) wsum += kMsSsimWeights[s];

  double result = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> pa(size_t(h) * size_t(w)), pb(size_t(h) * size_t(w));
    for (int64_t i = 0; i < int64_t(h) * w; ++i) {
      pa[static_cast<size_t>(i)] = double(a[int64_t(c) * h * w + i]);
      pb[static_cast<size_t>(i)] = double(b[int64_t(c) * h * w + i]);
    }
    int ch = h, cw = w;
    double score = 1.0;
    for (int s = 0; s < scales; ++s) {
      double ml = 0, mcs = 0;
      ssim_scale(pa, pb, ch, cw, ml, mcs);
      double weight = kMsSsimWeights[s] / wsum;
      score *= std::pow(std::max(mcs, 0.0), weight);
      if (s == scales - 1) score *= std::pow(std::max(ml, 0.0), weight);
      if (s + 1 < scales) {
        int nh = 0, nw = 0;
        pa = downsample_2x(pa, ch, cw, nh, nw);
        pb = downsample_2x(pb, ch, cw, nh, nw);
        ch = nh;
        cw = nw;
      }
    }
    result += score;
  }
  return result / 3.0;
}

}  // namespace osdiff
