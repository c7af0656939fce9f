// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "osdiff/layers.hpp"
#include "osdiff/range_coder.hpp"

namespace osdiff {

struct TransformConfig {
  int width = 32;          // G_a / G_s feature width
  int code_channels = 8;   // C_code
  int alphabet_bound = 31; // L: quantized symbols live in [-L, L]
  int mix_components = 3;  // logistic mixture size per channel
  int gn_groups = 8;
  int latent_channels = 4;
};

enum class QuantizeMode { kHard, kNoise, kSte };

/// Round-to-nearest-even with clamping into [-L, L]; plain-tensor path used
/// at compress time. Training-time relaxations live on the tape (round_ste /
/// additive uniform noise).
template <class S>
TensorT<S> quantize_hard(const TensorT<S>& v, int bound) {
  TensorT<S> out(v.shape());
  S b = static_cast<S>(bound);
  for (int64_t i = 0; i < v.numel(); ++i)
    out[i] = std::min(b, std::max(-b, static_cast<S>(std::nearbyint(v[i]))));
  return out;
}

/// Integer symbols (offset by +L into [0, 2L]) for one channel of a hard-
/// quantized [1,C,h,w] grid, in row-major scan order.
template <class S>
std::vector<int> channel_symbols(const TensorT<S>& code, int channel, int bound) {
  int h = code.dim(2), w = code.dim(3);
  std::vector<int> out(static_cast<size_t>(h) * static_cast<size_t>(w));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      S v = code.at(0, channel, y, x);
      int iv = static_cast<int>(std::lrint(double(v)));
      if (iv < -bound || iv > bound)
        throw std::invalid_argument("channel_symbols: value outside alphabet [-L, L]");
      out[static_cast<size_t>(y) * w + static_cast<size_t>(x)] = iv + bound;
    }
  return out;
}

template <class S>
TensorT<S> grid_from_symbols(const std::vector<std::vector<int>>& per_channel, int h, int w, int bound) {
  int C = static_cast<int>(per_channel.size());
  TensorT<S> out({1, C, h, w});
  for (int c = 0; c < C; ++c) {
    if (per_channel[static_cast<size_t>(c)].size() != static_cast<size_t>(h) * static_cast<size_t>(w))
      throw std::invalid_argument("grid_from_symbols: bad symbol count");
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(0, c, y, x) =
            static_cast<S>(per_channel[static_cast<size_t>(c)][static_cast<size_t>(y) * w + static_cast<size_t>(x)] - bound);
  }
  return out;
}

/// Learned factorized prior: an independent logistic mixture per code
/// channel, normalized over the coding alphabet. Drives both the
/// differentiable rate estimate and the frozen 16-bit coder tables.
template <class S>
struct EntropyModelT {
  int channels = 0;
  int components = 0;
  int bound = 0;
  std::string logits_name, means_name, scales_name;

  static EntropyModelT create(ParamStoreT<S>& ps, const TransformConfig& cfg, Rng&) {
    EntropyModelT m;
    m.channels = cfg.code_channels;
    m.components = cfg.mix_components;
    m.bound = cfg.alphabet_bound;
    m.logits_name = "entropy.logits";
    m.means_name = "entropy.means";
    m.scales_name = "entropy.log_scales";
    auto& logits = ps.create(m.logits_name, {m.channels, m.components}, ParamGroup::kGenerator);
    auto& means = ps.create(m.means_name, {m.channels, m.components}, ParamGroup::kGenerator);
    auto& scales = ps.create(m.scales_name, {m.channels, m.components}, ParamGroup::kGenerator);
    logits.fill(S(0));
    // Spread the components so the initial prior covers the alphabet: one
    // wide component anchored at zero plus offset medium-width ones.
    for (int c = 0; c < m.channels; ++c)
      for (int k = 0; k < m.components; ++k) {
        double frac = m.components > 1 ? double(k) / double(m.components - 1) : 0.5;
        means[int64_t(c) * m.components + k] = static_cast<S>((frac - 0.5) * 2.0);
        scales[int64_t(c) * m.components + k] =
            static_cast<S>(k == m.components / 2 ? std::log(6.0) : std::log(1.5));
      }
    return m;
  }

  /// Differentiable total bits of a (possibly non-integer) code grid.
  int rate_bits_node(ParamBind<S>& pb, int values) const {
    return pb.tape().rate_bits(values, pb.node(logits_name), pb.node(means_name),
                               pb.node(scales_name), bound);
  }

  /// Inference-path estimate: total bits and per-channel split, computed in
  /// double. With `strict_support`, integer grid values outside [-L, L] are
  /// an error (they could never be coded).
  double estimate_bits(const ParamStoreT<S>& ps, const TensorT<S>& grid,
                       std::vector<double>* per_channel = nullptr, bool strict_support = true) const {
    if (grid.rank() != 4 || grid.dim(1) != channels)
      throw std::invalid_argument("estimate_bits: grid must be [N,C,h,w] with C=code channels");
    const auto& logits = ps.value(logits_name);
    const auto& means = ps.value(means_name);
    const auto& scales = ps.value(scales_name);
    if (per_channel) per_channel->assign(static_cast<size_t>(channels), 0.0);
    double total = 0;
    int N = grid.dim(0), h = grid.dim(2), w = grid.dim(3);
    for (int c = 0; c < channels; ++c) {
      std::vector<double> wk(static_cast<size_t>(components)), mk(static_cast<size_t>(components)),
          sk(static_cast<size_t>(components));
      mixture_snapshot(logits, means, scales, c, wk, mk, sk);
      double z = mix_cdf(wk, mk, sk, bound + 0.5) - mix_cdf(wk, mk, sk, -bound - 0.5);
      double bits_c = 0;
      for (int n = 0; n < N; ++n)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            double v = double(grid.at(n, c, y, x));
            if (strict_support && (v < -double(bound) - 1e-9 || v > double(bound) + 1e-9))
              throw std::invalid_argument("estimate_bits: value outside model support");
            double p = (mix_cdf(wk, mk, sk, v + 0.5) - mix_cdf(wk, mk, sk, v - 0.5)) / z;
            p = std::max(p, 1e-12);
            bits_c -= std::log2(p);
          }
      if (per_channel) (*per_channel)[static_cast<size_t>(c)] = bits_c;
      total += bits_c;
    }
    return total;
  }

  /// Freezes the continuous prior into strictly monotone integer CDF tables
  /// (total mass 65536, every symbol >= 1) for the range coder.
  std::vector<CdfTable> fit_cdf_tables(const ParamStoreT<S>& ps) const {
    const auto& logits = ps.value(logits_name);
    const auto& means = ps.value(means_name);
    const auto& scales = ps.value(scales_name);
    std::vector<CdfTable> tables;
    tables.reserve(static_cast<size_t>(channels));
    int alphabet = 2 * bound + 1;
    for (int c = 0; c < channels; ++c) {
      std::vector<double> wk(static_cast<size_t>(components)), mk(static_cast<size_t>(components)),
          sk(static_cast<size_t>(components));
      mixture_snapshot(logits, means, scales, c, wk, mk, sk);
      double lo_edge = mix_cdf(wk, mk, sk, -bound - 0.5);
      double z = mix_cdf(wk, mk, sk, bound + 0.5) - lo_edge;
      if (!(z > 0)) throw CodingError("fit_cdf_tables: non-monotone or degenerate learned CDF");
      std::vector<uint64_t> counts(static_cast<size_t>(alphabet));
      double prev = 0.0;
      constexpr double kQuantum = 1ull << 32;  // high-resolution pmf before 16-bit apportionment
      for (int i = -bound; i <= bound; ++i) {
        double cdf_hi = (mix_cdf(wk, mk, sk, i + 0.5) - lo_edge) / z;
        if (cdf_hi < prev - 1e-12) throw CodingError("fit_cdf_tables: non-monotone learned CDF");
        counts[static_cast<size_t>(i + bound)] =
            static_cast<uint64_t>(std::llround(std::max(0.0, cdf_hi - prev) * kQuantum));
        prev = cdf_hi;
      }
      tables.push_back(CdfTable::from_counts(counts));
    }
    return tables;
  }

 private:
  void mixture_snapshot(const TensorT<S>& logits, const TensorT<S>& means, const TensorT<S>& scales,
                        int c, std::vector<double>& wk, std::vector<double>& mk,
                        std::vector<double>& sk) const {
    double mx = -1e300;
    for (int k = 0; k < components; ++k) mx = std::max(mx, double(logits[int64_t(c) * components + k]));
    double tot = 0;
    for (int k = 0; k < components; ++k) {
      wk[static_cast<size_t>(k)] = std::exp(double(logits[int64_t(c) * components + k]) - mx);
      tot += wk[static_cast<size_t>(k)];
    }
    for (int k = 0; k < components; ++k) {
      wk[static_cast<size_t>(k)] /= tot;
      mk[static_cast<size_t>(k)] = double(means[int64_t(c) * components + k]);
      sk[static_cast<size_t>(k)] = std::exp(double(scales[int64_t(c) * components + k]));
    }
  }

  static double mix_cdf(const std::vector<double>& w, const std::vector<double>& m,
                        const std::vector<double>& s, double u) {
    double acc = 0;
    for (size_t k = 0; k < w.size(); ++k) acc += w[k] * detail::stable_sigmoid((u - m[k]) / s[k]);
    return acc;
  }
};

/// Analysis/synthesis transform pair between the VAE latent (4x space) and
/// the code grid (8x space): three residual blocks around one stride-2
/// resample on each side.
template <class S>
struct LatentCodecT {
  TransformConfig cfg;
  Conv2dLayer<S> a_in, a_down;
  ResBlock<S> a_r1, a_r2, a_r3;
  Conv2dLayer<S> s_in, s_out;
  ResBlock<S> s_r1, s_r2, s_r3;

  static LatentCodecT create(ParamStoreT<S>& ps, const TransformConfig& cfg, Rng& rng) {
    LatentCodecT c;
    c.cfg = cfg;
    int W = cfg.width;
    auto G = ParamGroup::kGenerator;
    c.a_in = Conv2dLayer<S>::create(ps, "ga.in", cfg.latent_channels, W, 3, 1, 1, rng, G);
    c.a_r1 = ResBlock<S>::create(ps, "ga.res1", W, W, 0, cfg.gn_groups, rng, G);
    c.a_r2 = ResBlock<S>::create(ps, "ga.res2", W, W, 0, cfg.gn_groups, rng, G);
    c.a_r3 = ResBlock<S>::create(ps, "ga.res3", W, W, 0, cfg.gn_groups, rng, G);
    c.a_down = Conv2dLayer<S>::create(ps, "ga.down", W, cfg.code_channels, 4, 2, 1, rng, G);
    c.s_in = Conv2dLayer<S>::create(ps, "gs.in", cfg.code_channels, W, 3, 1, 1, rng, G);
    c.s_r1 = ResBlock<S>::create(ps, "gs.res1", W, W, 0, cfg.gn_groups, rng, G);
    c.s_r2 = ResBlock<S>::create(ps, "gs.res2", W, W, 0, cfg.gn_groups, rng, G);
    c.s_r3 = ResBlock<S>::create(ps, "gs.res3", W, W, 0, cfg.gn_groups, rng, G);
    c.s_out = Conv2dLayer<S>::create(ps, "gs.out", W, cfg.latent_channels, 3, 1, 1, rng, G);
    return c;
  }

  /// [N,4,h,w] -> [N,C_code,h/2,w/2]
  int analysis(ParamBind<S>& pb, int y0) const {
    Tape<S>& t = pb.tape();
    const auto& shp = t.val(y0).shape();
    if (shp.size() != 4 || shp[1] != cfg.latent_channels)
      throw std::invalid_argument("analysis: latent must have " + std::to_string(cfg.latent_channels) +
                                  " channels");
    if (shp[2] % 2 != 0 || shp[3] % 2 != 0)
      throw std::invalid_argument("analysis: latent dims must be even");
    int h = a_in(pb, y0);
    h = a_r1(pb, h);
    h = a_r2(pb, h);
    h = a_r3(pb, h);
    return a_down(pb, h);
  }

  /// [N,C_code,hc,wc] -> [N,4,2hc,2wc]
  int synthesis(ParamBind<S>& pb, int code) const {
    Tape<S>& t = pb.tape();
    const auto& shp = t.val(code).shape();
    if (shp.size() != 4 || shp[1] != cfg.code_channels)
      throw std::invalid_argument("synthesis: code must have " + std::to_string(cfg.code_channels) +
                                  " channels");
    int h = s_in(pb, code);
    h = t.upsample_nearest_2x(h);
    h = s_r1(pb, h);
    h = s_r2(pb, h);
    h = s_r3(pb, h);
    return s_out(pb, h);
  }
};

}  // namespace osdiff
