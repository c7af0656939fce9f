// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "osdiff/bdrate.hpp"
#include "osdiff/metrics.hpp"
#include "osdiff/pipeline.hpp"

namespace osdiff {

struct EvalRow {
  std::string name;
  double bpp = 0, psnr_db = 0, msssim = 0;
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  RdPoint mean;
};

/// Compress + decompress every image and score the reconstructions.
template <class S>
EvalSummary eval_model(OsdiffModelT<S>& model, const std::vector<Image>& images,
                       uint64_t decode_seed = 0) {
  EvalSummary s;
  double b = 0, p = 0, m = 0;
  for (size_t i = 0; i < images.size(); ++i) {
    CompressResult cr = compress(model, images[i], decode_seed);
    Image rec = decompress(model, cr.bytes);
    EvalRow row;
    row.name = "img" + std::to_string(i);
    row.bpp = cr.bpp;
    row.psnr_db = psnr(images[i], rec);
    row.msssim = ms_ssim(images[i], rec);
    b += row.bpp;
    p += row.psnr_db;
    m += row.msssim;
    s.rows.push_back(std::move(row));
  }
  size_t n = images.size();
  s.mean = RdPoint{b / double(n), p / double(n), m / double(n)};
  return s;
}

/// Latent-space quality of the denoised vs the conditioned reconstruction:
/// mean |y0 - y_r|^2 against mean |y0 - y_c|^2 over a set of images. The
/// denoiser earns its keep when mse_yr < mse_yc.
struct LatentGap {
  double mse_yr = 0;
  double mse_yc = 0;
};

template <class S>
LatentGap latent_reconstruction_gap(OsdiffModelT<S>& model, const std::vector<Image>& images,
                                    uint64_t decode_seed = 0) {
  LatentGap g;
  for (const Image& img : images) {
    TensorT<S> y0, y_c;
    {
      Tape<S> tape;
      ParamBind<S> pb(tape, model.params, /*inference=*/true);
      int x = tape.constant(stack_images<S>({img}, {0}));
      int y0n = model.vae.encode(pb, x);
      int v = model.codec.analysis(pb, y0n);
      TensorT<S> code = quantize_hard(tape.val(v), model.cfg.alphabet_bound);
      int code_node = tape.constant(code);
      y_c = tape.val(model.codec.synthesis(pb, code_node));
      y0 = tape.val(y0n);
    }
    TensorT<S> y_r =
        model.denoiser.decode_one_step(model.params, model.schedule, y_c, model.cfg.t_star, decode_seed);
    double acc_r = 0, acc_c = 0;
    for (int64_t i = 0; i < y0.numel(); ++i) {
      double dr = double(y0[i]) - double(y_r[i]);
      double dc = double(y0[i]) - double(y_c[i]);
      acc_r += dr * dr;
      acc_c += dc * dc;
    }
    g.mse_yr += acc_r / double(y0.numel());
    g.mse_yc += acc_c / double(y0.numel());
  }
  g.mse_yr /= double(images.size());
  g.mse_yc /= double(images.size());
  return g;
}

// ---- RD-curve files (tab-separated text) --------------------------------------

inline void write_rd_curve(const std::string& path, const RdCurve& curve) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "# model\tbpp\tpsnr_db\tms_ssim\n";
  for (const RdPoint& p : curve.points) {
    char line[256];
    std::snprintf(line, sizeof(line), "%s\t%.8f\t%.6f\t%.8f\n", curve.model_id.c_str(), p.bpp, p.psnr,
                  p.ms_ssim);
    f << line;
  }
}

inline RdCurve read_rd_curve(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  RdCurve c;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    RdPoint p;
    std::string id;
    if (!(ss >> id >> p.bpp >> p.psnr >> p.ms_ssim)) throw std::runtime_error("bad rd-curve line: " + line);
    c.model_id = id;
    c.points.push_back(p);
  }
  std::sort(c.points.begin(), c.points.end(),
            [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
  return c;
}

// ---- latency benchmark ---------------------------------------------------------

struct BenchEntry {
  int steps = 1;
  double dec_median_s = 0;
  int64_t evals_per_decode = 0;
  double ratio_vs_one_step = 0;
};

struct BenchReport {
  double enc_median_s = 0;
  std::vector<BenchEntry> entries;
};

namespace detail {
inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

/// Median wall-clock of encoding and of decoding at each step count, plus
/// the denoiser-evaluation counts, after one warm-up round.
template <class S>
BenchReport bench_latency(OsdiffModelT<S>& model, const Image& image, const std::vector<int>& steps_list,
                          int runs = 20) {
  using Clock = std::chrono::steady_clock;
  BenchReport report;

  CompressResult warm = compress(model, image, 0);  // warm-up + reference bytes
  {
    std::vector<double> enc(static_cast<size_t>(runs));
    for (int r = 0; r < runs; ++r) {
      auto t0 = Clock::now();
      CompressResult cr = compress(model, image, 0);
      auto t1 = Clock::now();
      enc[static_cast<size_t>(r)] = std::chrono::duration<double>(t1 - t0).count();
    }
    report.enc_median_s = detail::median(enc);
  }

  double one_step_median = 0;
  for (int steps : steps_list) {
    (void)decompress(model, warm.bytes, steps);  // warm-up
    int64_t before = model.denoiser.eval_count.load();
    std::vector<double> dec(static_cast<size_t>(runs));
    for (int r = 0; r < runs; ++r) {
      auto t0 = Clock::now();
      Image img = decompress(model, warm.bytes, steps);
      auto t1 = Clock::now();
      dec[static_cast<size_t>(r)] = std::chrono::duration<double>(t1 - t0).count();
    }
    int64_t after = model.denoiser.eval_count.load();
    BenchEntry e;
    e.steps = steps;
    e.dec_median_s = detail::median(dec);
    e.evals_per_decode = (after - before) / runs;
    if (steps == 1) one_step_median = e.dec_median_s;
    report.entries.push_back(e);
  }
  for (BenchEntry& e : report.entries)
    e.ratio_vs_one_step = one_step_median > 0 ? e.dec_median_s / one_step_median : 0;
  return report;
}

// ---- feature-distribution diagnostics -------------------------------------------

struct FeatureHistogram {
  std::vector<double> edges;        // bins + 1 entries
  std::vector<uint64_t> real_counts;
  std::vector<uint64_t> gen_counts;
  double js_divergence_bits = 0;
};

/// Histograms of f_d middle-layer activations for noisy real latents vs
/// noisy generated latents, with a Jensen-Shannon summary. Requires a model
/// carrying the latent discriminator.
template <class S>
FeatureHistogram inspect_features(OsdiffModelT<S>& model, const std::vector<Image>& images,
                                  uint64_t seed = 0, int bins = 64) {
  if (!model.latent_disc)
    throw std::invalid_argument("inspect_features: model has no latent discriminator");
  Rng rng(seed ^ 0xFEED5EEDull);
  std::vector<double> real_vals, gen_vals;
  for (const Image& img : images) {
    TensorT<S> y0, y_c;
    {
      Tape<S> tape;
      ParamBind<S> pb(tape, model.params, /*inference=*/true);
      int x = tape.constant(stack_images<S>({img}, {0}));
      int y0n = model.vae.encode(pb, x);
      int v = model.codec.analysis(pb, y0n);
      TensorT<S> code = quantize_hard(tape.val(v), model.cfg.alphabet_bound);
      y_c = tape.val(model.codec.synthesis(pb, tape.constant(code)));
      y0 = tape.val(y0n);
    }
    TensorT<S> y_r =
        model.denoiser.decode_one_step(model.params, model.schedule, y_c, model.cfg.t_star, seed);
    NoisyPair<S> pair = sample_noisy_pair(y0, y_r, model.schedule, model.cfg.disc_tsteps, rng);
    for (int which = 0; which < 2; ++which) {
      Tape<S> tape;
      ParamBind<S> pb(tape, model.params, /*inference=*/true);
      int node = tape.constant(which == 0 ? pair.y0_t : pair.yr_t);
      auto enc = model.latent_disc->fd.forward(pb, node, {pair.t});
      const TensorT<S>& mid = tape.val(enc.mid);
      auto& dst = which == 0 ? real_vals : gen_vals;
      for (int64_t i = 0; i < mid.numel(); ++i) dst.push_back(double(mid[i]));
    }
  }

  double lo = 1e300, hi = -1e300;
  for (double v : real_vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : gen_vals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) hi = lo + 1.0;

  FeatureHistogram h;
  h.edges.resize(static_cast<size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i)
    h.edges[static_cast<size_t>(i)] = lo + (hi - lo) * double(i) / double(bins);
  h.real_counts.assign(static_cast<size_t>(bins), 0);
  h.gen_counts.assign(static_cast<size_t>(bins), 0);
  auto bin_of = [&](double v) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    return std::min(bins - 1, std::max(0, b));
  };
  for (double v : real_vals) h.real_counts[static_cast<size_t>(bin_of(v))]++;
  for (double v : gen_vals) h.gen_counts[static_cast<size_t>(bin_of(v))]++;

  // Jensen-Shannon divergence (bits) between the two normalized histograms.
  double js = 0;
  double nr = double(real_vals.size()), ng = double(gen_vals.size());
  for (int i = 0; i < bins; ++i) {
    double p = double(h.real_counts[static_cast<size_t>(i)]) / nr;
    double q = double(h.gen_counts[static_cast<size_t>(i)]) / ng;
    double m = 0.5 * (p + q);
    if (p > 0) js += 0.5 * p * std::log2(p / m);
    if (q > 0) js += 0.5 * q * std::log2(q / m);
  }
  h.js_divergence_bits = js;
  return h;
}

inline void write_histogram(const std::string& path, const FeatureHistogram& h) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path);
  char line[256];
  std::snprintf(line, sizeof(line), "# js_divergence_bits %.6f\n", h.js_divergence_bits);
  f << line << "# bin_lo\tbin_hi\treal\tgenerated\n";
  for (size_t i = 0; i < h.real_counts.size(); ++i) {
    std::snprintf(line, sizeof(line), "%.6f\t%.6f\t%llu\t%llu\n", h.edges[i], h.edges[i + 1],
                  static_cast<unsigned long long>(h.real_counts[i]),
                  static_cast<unsigned long long>(h.gen_counts[i]));
    f << line;
  }
}

}  // namespace osdiff
