// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "osdiff/bitstream.hpp"
#include "osdiff/model.hpp"

namespace osdiff {

class PipelineError : public std::runtime_error {
 public:
  explicit PipelineError(const std::string& what) : std::runtime_error(what) {}
};

struct CompressResult {
  std::vector<uint8_t> bytes;
  OsdfHeader header;
  double bpp = 0;                 // 8 * file bytes / (H * W)
  double estimated_bits = 0;      // entropy-model estimate over the code grid
  std::vector<double> estimated_bits_per_channel;
  std::vector<size_t> payload_bytes_per_channel;
};

/// encode -> analysis -> hard quantize -> per-channel range coding -> pack.
template <class S>
CompressResult compress(OsdiffModelT<S>& model, const Image& image, uint64_t decode_seed = 0) {
  int h = image.dim(1), w = image.dim(2);
  if (h % 32 != 0 || w % 32 != 0)
    throw PipelineError("compress: image dimensions must be divisible by 32");
  if (h > 0xFFFF || w > 0xFFFF) throw PipelineError("compress: image too large for header");
  if (model.cdf_tables.empty()) throw PipelineError("compress: entropy tables not fitted");

  Tape<S> tape;
  ParamBind<S> pb(tape, model.params, /*inference=*/true);
  int x = tape.constant(stack_images<S>({image}, {0}));
  int y0 = model.vae.encode(pb, x);
  int v = model.codec.analysis(pb, y0);
  TensorT<S> code = quantize_hard(tape.val(v), model.cfg.alphabet_bound);

  CompressResult res;
  res.estimated_bits = model.entropy.estimate_bits(model.params, code, &res.estimated_bits_per_channel);

  std::vector<std::vector<uint8_t>> payloads;
  for (int c = 0; c < model.cfg.code_channels; ++c) {
    std::vector<int> symbols = channel_symbols(code, c, model.cfg.alphabet_bound);
    payloads.push_back(range_encode(symbols, model.cdf_tables[static_cast<size_t>(c)]));
    res.payload_bytes_per_channel.push_back(payloads.back().size());
  }

  res.header.width = static_cast<uint16_t>(w);
  res.header.height = static_cast<uint16_t>(h);
  res.header.code_channels = static_cast<uint8_t>(model.cfg.code_channels);
  res.header.alphabet_bound = static_cast<uint8_t>(model.cfg.alphabet_bound);
  res.header.t_star = static_cast<uint16_t>(model.cfg.t_star);
  res.header.decode_seed = decode_seed;
  res.header.lambda_config_id = model.cfg.lambda_id;
  res.header.model_hash = model.file_hash;
  res.bytes = pack_bitstream(res.header, payloads);
  res.bpp = 8.0 * double(res.bytes.size()) / (double(h) * double(w));
  return res;
}

/// unpack -> range decode -> synthesis -> seeded one-step denoise -> VAE
/// decode. `steps` > 1 switches the denoise stage to the N-step reverse
/// chain (the latency-comparison path); the coded latent is identical.
template <class S>
Image decompress(OsdiffModelT<S>& model, const std::vector<uint8_t>& bytes, int steps = 1) {
  OsdfFile f = unpack_bitstream(bytes);
  if (f.header.model_hash != model.file_hash)
    throw PipelineError("decompress: bitstream was produced with a different model (hash mismatch)");
  if (f.header.code_channels != model.cfg.code_channels ||
      f.header.alphabet_bound != model.cfg.alphabet_bound)
    throw PipelineError("decompress: header geometry does not match model");
  int h = f.header.height, w = f.header.width;
  if (h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0)
    throw PipelineError("decompress: bad image dimensions in header");
  int ch = h / 8, cw = w / 8;

  std::vector<std::vector<int>> per_channel;
  for (int c = 0; c < model.cfg.code_channels; ++c) {
    const auto& payload = f.payloads[static_cast<size_t>(c)];
    per_channel.push_back(range_decode(payload.data(), payload.size(),
                                       static_cast<size_t>(ch) * static_cast<size_t>(cw),
                                       model.cdf_tables[static_cast<size_t>(c)]));
  }
  TensorT<S> code = grid_from_symbols<S>(per_channel, ch, cw, model.cfg.alphabet_bound);

  TensorT<S> y_c;
  {
    Tape<S> tape;
    ParamBind<S> pb(tape, model.params, /*inference=*/true);
    int code_node = tape.constant(code);
    y_c = tape.val(model.codec.synthesis(pb, code_node));
  }

  int t_star = f.header.t_star;
  TensorT<S> y_r =
      steps <= 1
          ? model.denoiser.decode_one_step(model.params, model.schedule, y_c, t_star, f.header.decode_seed)
          : model.denoiser.decode_multi_step(model.params, model.schedule, y_c, steps, t_star,
                                             f.header.decode_seed);

  Tape<S> tape;
  ParamBind<S> pb(tape, model.params, /*inference=*/true);
  int yr_node = tape.constant(y_r);
  int img_node = model.vae.decode(pb, yr_node);
  Image out = image_from_batch(tape.val(img_node), 0);
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(1.0f, std::max(0.0f, out[i]));
  return out;
}

}  // namespace osdiff
