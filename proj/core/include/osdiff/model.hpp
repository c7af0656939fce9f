// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "osdiff/adversarial.hpp"
#include "osdiff/autoencoder.hpp"
#include "osdiff/denoiser.hpp"
#include "osdiff/latent_codec.hpp"
#include "osdiff/serialize.hpp"

namespace osdiff {

/// Whole-model hyperparameters; serialized inside the model file so a loaded
/// model rebuilds the exact same architecture and schedule.
struct ModelConfig {
  int vae_base = 16;
  int transform_width = 32;
  int code_channels = 8;
  int alphabet_bound = 31;
  int mix_components = 3;
  int denoiser_base = 64;
  std::vector<int> channel_mult = {1, 2};
  int res_blocks = 2;
  int temb_dim = 128;
  int gn_groups = 8;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int t_star = 999;
  int disc_tsteps = 500;  // T_d: discriminator noising range
  int mlp_hidden = 64;
  uint8_t lambda_id = 1;  // rate point: lambda2 = lambda_id
  DiscVariant disc_variant = DiscVariant::kLatent;

  VaeConfig vae() const { return VaeConfig{vae_base, gn_groups, 4}; }
  TransformConfig transform() const {
    return TransformConfig{transform_width, code_channels, alphabet_bound, mix_components, gn_groups, 4};
  }
  DenoiserConfig denoiser() const {
    return DenoiserConfig{denoiser_base, channel_mult, res_blocks, temb_dim, t_star, gn_groups, 4};
  }

  std::vector<float> to_floats() const {
    std::vector<float> v = {1.0f,  // config layout version
                            float(vae_base), float(transform_width), float(code_channels),
                            float(alphabet_bound), float(mix_components), float(denoiser_base),
                            float(channel_mult.size())};
    for (int m : channel_mult) v.push_back(float(m));
    v.insert(v.end(), {float(res_blocks), float(temb_dim), float(gn_groups), float(T),
                       float(beta_start), float(beta_end), float(t_star), float(disc_tsteps),
                       float(mlp_hidden), float(lambda_id), float(int(disc_variant))});
    return v;
  }

  static ModelConfig from_floats(const std::vector<float>& v) {
    size_t i = 0;
    auto next = [&]() -> float {
      if (i >= v.size()) throw ModelFileError("model config: truncated");
      return v[i++];
    };
    if (int(next()) != 1) throw ModelFileError("model config: unknown layout version");
    ModelConfig c;
    c.vae_base = int(next());
    c.transform_width = int(next());
    c.code_channels = int(next());
    c.alphabet_bound = int(next());
    c.mix_components = int(next());
    c.denoiser_base = int(next());
    int nm = int(next());
    c.channel_mult.clear();
    for (int k = 0; k < nm; ++k) c.channel_mult.push_back(int(next()));
    c.res_blocks = int(next());
    c.temb_dim = int(next());
    c.gn_groups = int(next());
    c.T = int(next());
    c.beta_start = double(next());
    c.beta_end = double(next());
    c.t_star = int(next());
    c.disc_tsteps = int(next());
    c.mlp_hidden = int(next());
    c.lambda_id = static_cast<uint8_t>(next());
    c.disc_variant = static_cast<DiscVariant>(int(next()));
    return c;
  }
};

/// The assembled codec: frozen VAE pair, transform codec with entropy model,
/// conditional denoiser, optional discriminator, plus the frozen CDF tables
/// and the schedule. One ParamStore holds every named tensor.
template <class S>
struct OsdiffModelT {
  ModelConfig cfg;
  ParamStoreT<S> params;
  NoiseSchedule schedule;
  VaeT<S> vae;
  LatentCodecT<S> codec;
  EntropyModelT<S> entropy;
  DenoiserT<S> denoiser;
  std::optional<LatentDiscriminatorT<S>> latent_disc;
  std::optional<PixelDiscriminatorT<S>> pixel_disc;
  std::vector<CdfTable> cdf_tables;
  uint64_t file_hash = 0;  // hash of the last serialized/loaded byte image

  static OsdiffModelT build(const ModelConfig& cfg, uint64_t init_seed,
                            bool with_discriminator = true) {
    OsdiffModelT m;
    m.cfg = cfg;
    m.schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    Rng rng(init_seed ^ 0xA5A5A5A5DEADBEEFull);
    m.vae = VaeT<S>::create(m.params, cfg.vae(), rng);
    m.codec = LatentCodecT<S>::create(m.params, cfg.transform(), rng);
    m.entropy = EntropyModelT<S>::create(m.params, cfg.transform(), rng);
    m.denoiser = DenoiserT<S>::create(m.params, cfg.denoiser(), rng);
    if (with_discriminator) {
      if (cfg.disc_variant == DiscVariant::kLatent)
        m.latent_disc = LatentDiscriminatorT<S>::create(m.params, cfg.denoiser(), cfg.mlp_hidden, rng);
      else if (cfg.disc_variant == DiscVariant::kPixel)
        m.pixel_disc = PixelDiscriminatorT<S>::create(m.params, cfg.mlp_hidden, cfg.gn_groups, rng);
    }
    m.refresh_cdf_tables();
    return m;
  }

  void refresh_cdf_tables() { cdf_tables = entropy.fit_cdf_tables(params); }

  /// Serializes parameters plus the config and CDF-table meta tensors;
  /// returns (and remembers) the content hash stored in bitstream headers.
  uint64_t save(const std::string& path) {
    sync_meta_tensors();
    std::vector<uint8_t> bytes = serialize_store(params);
    file_hash = model_bytes_hash(bytes);
    write_file(path, bytes);
    return file_hash;
  }

  /// Rebuilds the model from a file. With include_discriminator = false the
  /// "disc." tensors are skipped (compress/decompress never needs them); the
  /// content hash always covers the full file bytes.
  static OsdiffModelT load(const std::string& path, bool include_discriminator = true) {
    std::vector<uint8_t> bytes = read_file(path);
    uint64_t hash = model_bytes_hash(bytes);
    auto tensors = parse_model_bytes(bytes);

    auto cfg_it = tensors.find("meta.config");
    if (cfg_it == tensors.end()) throw ModelFileError("model file: missing meta.config");
    ModelConfig cfg = ModelConfig::from_floats(cfg_it->second.data);

    OsdiffModelT m = build(cfg, /*init_seed=*/0, include_discriminator);
    m.file_hash = hash;
    m.sync_meta_tensors();  // creates the meta slots so loading can fill them

    m.params.for_each([&](const std::string& name, ParamEntry<S>& e) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw ModelFileError("model file: missing tensor '" + name + "'");
      if (it->second.shape != e.value.shape())
        throw ModelFileError("model file: shape mismatch for '" + name + "'");
      for (int64_t i = 0; i < e.value.numel(); ++i)
        e.value[i] = static_cast<S>(it->second.data[static_cast<size_t>(i)]);
    });
    m.load_cdf_from_meta();
    return m;
  }

  /// Marks the frozen components (VAE pair and denoiser main branch).
  void freeze_backbones() {
    params.freeze_prefix("vae.");
    params.freeze_prefix("denoiser.main.");
    params.freeze_prefix("meta.");
  }

 private:
  void sync_meta_tensors() {
    std::vector<float> cfgf = cfg.to_floats();
    ensure_meta("meta.config", {static_cast<int>(cfgf.size())});
    auto& cv = params.value("meta.config");
    for (size_t i = 0; i < cfgf.size(); ++i) cv[static_cast<int64_t>(i)] = static_cast<S>(cfgf[i]);

    int alphabet = 2 * cfg.alphabet_bound + 1;
    ensure_meta("meta.entropy_cdf", {cfg.code_channels, alphabet + 1});
    auto& tv = params.value("meta.entropy_cdf");
    if (cdf_tables.size() != static_cast<size_t>(cfg.code_channels))
      throw ModelFileError("model: cdf tables not fitted");
    for (int c = 0; c < cfg.code_channels; ++c)
      for (int i = 0; i <= alphabet; ++i)
        tv[int64_t(c) * (alphabet + 1) + i] =
            static_cast<S>(cdf_tables[static_cast<size_t>(c)].cum[static_cast<size_t>(i)]);
  }

  void ensure_meta(const std::string& name, const Shape& shape) {
    if (!params.contains(name)) {
      params.create(name, shape, ParamGroup::kGenerator);
      params.entry(name).trainable = false;
    } else if (params.value(name).shape() != shape) {
      throw ModelFileError("model: meta tensor shape drift for " + name);
    }
  }

  void load_cdf_from_meta() {
    int alphabet = 2 * cfg.alphabet_bound + 1;
    const auto& tv = params.value("meta.entropy_cdf");
    cdf_tables.assign(static_cast<size_t>(cfg.code_channels), CdfTable{});
    for (int c = 0; c < cfg.code_channels; ++c) {
      auto& tab = cdf_tables[static_cast<size_t>(c)];
      tab.cum.resize(static_cast<size_t>(alphabet) + 1);
      for (int i = 0; i <= alphabet; ++i)
        tab.cum[static_cast<size_t>(i)] =
            static_cast<uint32_t>(tv[int64_t(c) * (alphabet + 1) + i]);
      tab.validate();
    }
  }
};

using OsdiffModel = OsdiffModelT<float>;

}  // namespace osdiff
