// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "osdiff/eval.hpp"
#include "osdiff/training.hpp"

namespace osdiff {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  int batch = 8;
  int steps = 5000;
  double lr = 1e-4;
  double disc_lr = 1e-4;
  int warmup_steps = 500;  // generator GAN term off for the first steps
  uint64_t seed = 0;

  // data source: a directory of PNGs, or the seeded synthetic corpus
  std::string corpus_dir;
  uint64_t corpus_seed = 2024;
  int corpus_size = 1000;
  int holdout_size = 100;
  int image_size = 64;

  // backbone pretraining (only when base_model is empty)
  int vae_epochs = 12;
  double vae_lr = 1e-3;
  int vae_batch = 8;
  int den_pre_steps = 600;
  double den_pre_lr = 2e-4;
  int den_pre_batch = 4;
  int transform_pre_steps = 1000;  // rate-distortion warm-up of G_a/G_s/entropy
  double transform_pre_lr = 4e-4;
  int transform_pre_batch = 8;
  std::string base_model;  // reuse a pretrained frozen backbone

  std::string out_model = "model.osdm";
  std::string out_log;  // JSONL training log; empty disables
  int checkpoint_every = 1000;
  int log_every = 10;
  double divergence_threshold = 1e4;
};

struct CorpusSplit {
  std::vector<Image> train;
  std::vector<Image> holdout;
};

inline CorpusSplit load_corpus(const TrainConfig& cfg) {
  CorpusSplit s;
  if (!cfg.corpus_dir.empty()) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(cfg.corpus_dir))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (static_cast<int>(files.size()) < cfg.corpus_size + cfg.holdout_size)
      throw std::invalid_argument("corpus dir holds fewer images than corpus_size + holdout_size");
    for (int i = 0; i < cfg.corpus_size; ++i) s.train.push_back(read_png(files[static_cast<size_t>(i)]));
    for (int i = 0; i < cfg.holdout_size; ++i)
      s.holdout.push_back(read_png(files[static_cast<size_t>(cfg.corpus_size + i)]));
    return s;
  }
  std::vector<Image> all =
      make_toy_corpus(cfg.corpus_seed, cfg.corpus_size + cfg.holdout_size, cfg.image_size, cfg.image_size);
  s.train.assign(all.begin(), all.begin() + cfg.corpus_size);
  s.holdout.assign(all.begin() + cfg.corpus_size, all.end());
  return s;
}

struct TrainResult {
  std::string model_path;
  uint64_t model_hash = 0;
  StepMetrics last;
  std::vector<StepMetrics> history;
  double vae_holdout_psnr = 0;  // meaningful only when pretraining ran here
};

namespace detail {

inline void append_log_line(std::ofstream& log, int step, const StepMetrics& m) {
  if (!log.is_open()) return;
  auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::system_clock::now().time_since_epoch())
                 .count();
  char line[512];
  std::snprintf(line, sizeof(line),
                "{\"step\":%d,\"ts_ms\":%lld,\"L_diff\":%.8g,\"L_rate\":%.8g,\"L_feature\":%.8g,"
                "\"L_G\":%.8g,\"L_D\":%.8g,\"bpp_est\":%.8g}\n",
                step, static_cast<long long>(now), m.L_diff, m.L_rate, m.L_feature, m.L_G, m.L_D,
                m.bpp_est);
  log << line;
  log.flush();
}

/// Copies every value tensor present in both the file and the store.
template <class S>
void load_overlapping(ParamStoreT<S>& ps, const std::string& path) {
  auto tensors = parse_model_bytes(read_file(path));
  ps.for_each([&](const std::string& name, ParamEntry<S>& e) {
    auto it = tensors.find(name);
    if (it == tensors.end()) return;
    if (it->second.shape != e.value.shape()) return;
    for (int64_t i = 0; i < e.value.numel(); ++i)
      e.value[i] = static_cast<S>(it->second.data[static_cast<size_t>(i)]);
  });
}

}  // namespace detail

/// Pretrains the frozen backbone (VAE pair, then the unconditional denoiser
/// main branch), seeds the control branch from it, and saves the result for
/// reuse across rate points and ablation arms.
template <class S>
VaePretrainResult prepare_base_model(TrainConfig cfg, const std::string& out_path,
                                     const std::function<void(const std::string&)>& on_stage = {}) {
  cfg.model.disc_variant = DiscVariant::kNone;
  CorpusSplit data = load_corpus(cfg);
  OsdiffModelT<S> model = OsdiffModelT<S>::build(cfg.model, cfg.seed);

  if (on_stage) on_stage("vae-pretrain");
  VaePretrainConfig vc;
  vc.epochs = cfg.vae_epochs;
  vc.batch = cfg.vae_batch;
  vc.lr = cfg.vae_lr;
  vc.seed = cfg.seed ^ 0x5EEDull;
  VaePretrainResult vres = pretrain_vae(model.vae, model.params, data.train, data.holdout, vc);

  if (on_stage) on_stage("denoiser-pretrain");
  std::vector<TensorT<S>> latents = encode_corpus(model, data.train);
  Rng rng(cfg.seed ^ 0xD0DEull);
  pretrain_denoiser(model, latents, cfg.den_pre_steps, cfg.den_pre_batch, cfg.den_pre_lr, rng);

  seed_control_branch(model.params, model.cfg.denoiser());
  model.save(out_path);
  return vres;
}

/// One full codec training run: load/pretrain the frozen backbone, then the
/// alternating generator/discriminator loop with warm-up, logging,
/// checkpoints and a divergence guard. Saves the final model with fresh
/// entropy tables and returns its hash.
template <class S>
TrainResult train(const TrainConfig& cfg) {
  cfg.weights.validate();
  CorpusSplit data = load_corpus(cfg);

  ModelConfig mc = cfg.model;
  mc.lambda_id = static_cast<uint8_t>(std::min(255.0, std::max(0.0, std::round(cfg.weights.lambda2))));
  OsdiffModelT<S> model = OsdiffModelT<S>::build(mc, cfg.seed);

  TrainResult res;
  if (!cfg.base_model.empty()) {
    detail::load_overlapping(model.params, cfg.base_model);
  } else {
    VaePretrainConfig vc;
    vc.epochs = cfg.vae_epochs;
    vc.batch = cfg.vae_batch;
    vc.lr = cfg.vae_lr;
    vc.seed = cfg.seed ^ 0x5EEDull;
    VaePretrainResult vres = pretrain_vae(model.vae, model.params, data.train, data.holdout, vc);
    res.vae_holdout_psnr = vres.holdout_psnr;
    std::vector<TensorT<S>> latents = encode_corpus(model, data.train);
    Rng prng(cfg.seed ^ 0xD0DEull);
    pretrain_denoiser(model, latents, cfg.den_pre_steps, cfg.den_pre_batch, cfg.den_pre_lr, prng);
    seed_control_branch(model.params, model.cfg.denoiser());
  }
  if (model.latent_disc) copy_params_prefix(model.params, "denoiser.main.", "disc.fd.");

  // Rate-point-specific warm-up of the transform codec: the rate/distortion
  // equilibrium depends on lambda2, so it runs per training run rather than
  // in the shared backbone.
  if (cfg.transform_pre_steps > 0) {
    std::vector<TensorT<S>> latents = encode_corpus(model, data.train);
    Rng trng(cfg.seed ^ 0x7A7Aull);
    pretrain_transforms(model, latents, cfg.transform_pre_steps, cfg.transform_pre_batch,
                        cfg.transform_pre_lr, cfg.weights.lambda2, cfg.weights.lambda3, trng);
  }
  model.freeze_backbones();

  std::ofstream log;
  if (!cfg.out_log.empty()) {
    log.open(cfg.out_log, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open training log " + cfg.out_log);
  }

  Rng rng(cfg.seed);
  std::string ckpt_path = cfg.out_model + ".ckpt";
  bool have_checkpoint = false;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<size_t> idx(static_cast<size_t>(cfg.batch));
    for (auto& i : idx) i = static_cast<size_t>(rng.uniform_int(data.train.size()));
    TensorT<S> batch = stack_images<S>(data.train, idx);

    TrainStepConfig sc;
    sc.weights = cfg.weights;
    sc.gan_active = step >= cfg.warmup_steps;
    sc.lr = cfg.lr;
    sc.disc_lr = cfg.disc_lr;
    StepMetrics m = train_step(model, batch, sc, rng);

    double gen_total = cfg.weights.lambda1 * m.L_diff + cfg.weights.lambda2 * m.L_rate +
                       cfg.weights.lambda3 * m.L_feature +
                       (sc.gan_active ? cfg.weights.lambda4 * m.L_G : 0.0);
    if (!std::isfinite(gen_total) || gen_total > cfg.divergence_threshold)
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + " (loss " +
                             std::to_string(gen_total) + ")" +
                             (have_checkpoint ? "; last checkpoint kept at " + ckpt_path : ""));

    res.history.push_back(m);
    res.last = m;
    if (step % cfg.log_every == 0) detail::append_log_line(log, step, m);
    if (cfg.checkpoint_every > 0 && step > 0 && step % cfg.checkpoint_every == 0) {
      model.refresh_cdf_tables();
      model.save(ckpt_path);
      have_checkpoint = true;
    }
  }
  if (!res.history.empty()) detail::append_log_line(log, cfg.steps - 1, res.last);

  model.refresh_cdf_tables();
  res.model_hash = model.save(cfg.out_model);
  res.model_path = cfg.out_model;
  return res;
}

// ---- ablation harness ----------------------------------------------------------

struct AblationArm {
  std::string name;
  DiscVariant variant = DiscVariant::kNone;
  RdCurve curve;
  double bd_rate_msssim_vs_anchor = 0;  // anchor = the no-discriminator arm
};

struct AblationReport {
  std::vector<AblationArm> arms;
  std::string table_text;
};

/// Trains {no discriminator, pixel-space, latent-space} at the given rate
/// points from one shared frozen backbone, evaluates each arm on the
/// held-out set, and emits a BD-rate table (MS-SSIM quality axis) against
/// the no-discriminator anchor.
template <class S>
AblationReport run_ablation(const TrainConfig& base_cfg, const std::string& base_model_path,
                            const std::vector<double>& lambda2_points, const std::string& out_dir,
                            const std::function<void(const std::string&)>& on_stage = {}) {
  std::filesystem::create_directories(out_dir);
  CorpusSplit data = load_corpus(base_cfg);

  const std::vector<std::pair<std::string, DiscVariant>> variants = {
      {"no_disc", DiscVariant::kNone},
      {"pixel_disc", DiscVariant::kPixel},
      {"latent_disc", DiscVariant::kLatent},
  };

  AblationReport report;
  for (const auto& [vname, variant] : variants) {
    AblationArm arm;
    arm.name = vname;
    arm.variant = variant;
    arm.curve.model_id = vname;
    for (double l2 : lambda2_points) {
      TrainConfig cfg = base_cfg;
      cfg.model.disc_variant = variant;
      cfg.weights.lambda2 = l2;
      if (variant == DiscVariant::kNone) cfg.weights.lambda4 = 0.0;
      cfg.base_model = base_model_path;
      char suffix[64];
      std::snprintf(suffix, sizeof(suffix), "%s_l%g", vname.c_str(), l2);
      cfg.out_model = out_dir + "/model_" + suffix + ".osdm";
      cfg.out_log = out_dir + "/train_" + suffix + ".jsonl";
      if (on_stage) on_stage("train " + std::string(suffix));
      train<S>(cfg);

      OsdiffModelT<S> m = OsdiffModelT<S>::load(cfg.out_model);
      EvalSummary ev = eval_model(m, data.holdout);
      arm.curve.points.push_back(ev.mean);
    }
    std::sort(arm.curve.points.begin(), arm.curve.points.end(),
              [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
    write_rd_curve(out_dir + "/curve_" + vname + ".tsv", arm.curve);
    report.arms.push_back(std::move(arm));
  }

  const RdCurve& anchor = report.arms[0].curve;
  std::string table = "config\tbd_rate_msssim_%\n" + report.arms[0].name + "\t0.00\n";
  for (size_t i = 1; i < report.arms.size(); ++i) {
    report.arms[i].bd_rate_msssim_vs_anchor =
        bd_rate(anchor, report.arms[i].curve, QualityMetric::kMsSsim);
    char line[128];
    std::snprintf(line, sizeof(line), "%s\t%.2f\n", report.arms[i].name.c_str(),
                  report.arms[i].bd_rate_msssim_vs_anchor);
    table += line;
  }
  report.table_text = table;
  std::ofstream tf(out_dir + "/bd_rate_table.tsv", std::ios::trunc);
  tf << table;
  return report;
}

}  // namespace osdiff
