// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface of the codec: train, compress, decompress, eval,
// bdrate, bench, inspect, gen-corpus.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "osdiff/eval.hpp"
#include "osdiff/train_pipeline.hpp"

namespace fs = std::filesystem;
using namespace osdiff;

namespace {

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::map<std::string, std::string> kv;
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
      continue;
    }
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (!key.empty()) kv[key] = val;
  }
  return kv;
}

DiscVariant parse_variant(const std::string& s) {
  if (s == "none") return DiscVariant::kNone;
  if (s == "pixel") return DiscVariant::kPixel;
  if (s == "latent") return DiscVariant::kLatent;
  throw std::runtime_error("unknown discriminator variant '" + s + "' (none|pixel|latent)");
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  if (out.empty()) throw std::runtime_error("empty integer list");
  return out;
}

void apply_config_kv(TrainConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "vae_base") cfg.model.vae_base = std::stoi(v);
    else if (k == "transform_width") cfg.model.transform_width = std::stoi(v);
    else if (k == "code_channels") cfg.model.code_channels = std::stoi(v);
    else if (k == "alphabet_bound") cfg.model.alphabet_bound = std::stoi(v);
    else if (k == "mix_components") cfg.model.mix_components = std::stoi(v);
    else if (k == "denoiser_base") cfg.model.denoiser_base = std::stoi(v);
    else if (k == "channel_mult") cfg.model.channel_mult = parse_int_list(v);
    else if (k == "res_blocks") cfg.model.res_blocks = std::stoi(v);
    else if (k == "temb_dim") cfg.model.temb_dim = std::stoi(v);
    else if (k == "gn_groups") cfg.model.gn_groups = std::stoi(v);
    else if (k == "T") cfg.model.T = std::stoi(v);
    else if (k == "beta_start") cfg.model.beta_start = std::stod(v);
    else if (k == "beta_end") cfg.model.beta_end = std::stod(v);
    else if (k == "t_star") cfg.model.t_star = std::stoi(v);
    else if (k == "disc_tsteps") cfg.model.disc_tsteps = std::stoi(v);
    else if (k == "mlp_hidden") cfg.model.mlp_hidden = std::stoi(v);
    else if (k == "disc_variant") cfg.model.disc_variant = parse_variant(v);
    else if (k == "lambda1") cfg.weights.lambda1 = std::stod(v);
    else if (k == "lambda2") cfg.weights.lambda2 = std::stod(v);
    else if (k == "lambda3") cfg.weights.lambda3 = std::stod(v);
    else if (k == "lambda4") cfg.weights.lambda4 = std::stod(v);
    else if (k == "batch") cfg.batch = std::stoi(v);
    else if (k == "steps") cfg.steps = std::stoi(v);
    else if (k == "lr") cfg.lr = std::stod(v);
    else if (k == "disc_lr") cfg.disc_lr = std::stod(v);
    else if (k == "warmup_steps") cfg.warmup_steps = std::stoi(v);
    else if (k == "seed") cfg.seed = std::stoull(v);
    else if (k == "corpus_dir") cfg.corpus_dir = v;
    else if (k == "corpus_seed") cfg.corpus_seed = std::stoull(v);
    else if (k == "corpus_size") cfg.corpus_size = std::stoi(v);
    else if (k == "holdout_size") cfg.holdout_size = std::stoi(v);
    else if (k == "image_size") cfg.image_size = std::stoi(v);
    else if (k == "vae_epochs") cfg.vae_epochs = std::stoi(v);
    else if (k == "vae_lr") cfg.vae_lr = std::stod(v);
    else if (k == "vae_batch") cfg.vae_batch = std::stoi(v);
    else if (k == "den_pre_steps") cfg.den_pre_steps = std::stoi(v);
    else if (k == "den_pre_lr") cfg.den_pre_lr = std::stod(v);
    else if (k == "den_pre_batch") cfg.den_pre_batch = std::stoi(v);
    else if (k == "base_model") cfg.base_model = v;
    else if (k == "out_model") cfg.out_model = v;
    else if (k == "out_log") cfg.out_log = v;
    else if (k == "checkpoint_every") cfg.checkpoint_every = std::stoi(v);
    else if (k == "log_every") cfg.log_every = std::stoi(v);
    else throw std::runtime_error("unknown config key '" + k + "'");
  }
}

/// Small everything preset sized for CPU smoke runs; the built-in defaults
/// match the full toy configuration.
void apply_toy_fast_preset(TrainConfig& cfg) {
  cfg.model.vae_base = 16;
  cfg.model.transform_width = 16;
  cfg.model.denoiser_base = 32;
  cfg.model.res_blocks = 1;
  cfg.model.temb_dim = 64;
  cfg.model.t_star = 400;
  cfg.model.disc_tsteps = 200;
  cfg.batch = 4;
  cfg.steps = 600;
  cfg.warmup_steps = 150;
  cfg.vae_epochs = 4;
  cfg.den_pre_steps = 400;
}

std::vector<Image> load_images_arg(const std::string& images_dir, int synthetic_count,
                                   uint64_t corpus_seed, int image_size) {
  std::vector<Image> images;
  if (!images_dir.empty()) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images_dir))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .png files under " + images_dir);
    for (const auto& p : files) images.push_back(read_png(p));
  } else {
    images = make_toy_corpus(corpus_seed, synthetic_count, image_size, image_size);
  }
  return images;
}

int cmd_train(const TrainConfig& cfg, bool prepare_base_only, const std::string& base_out) {
  auto stage = [](const std::string& s) { std::fprintf(stderr, "[train] stage: %s\n", s.c_str()); };
  if (prepare_base_only) {
    VaePretrainResult r = prepare_base_model<float>(cfg, base_out, stage);
    std::printf("base model written to %s (vae holdout psnr %.2f dB)\n", base_out.c_str(),
                r.holdout_psnr);
    return 0;
  }
  TrainResult r = train<float>(cfg);
  std::printf("model written to %s (hash %016llx)\n", r.model_path.c_str(),
              static_cast<unsigned long long>(r.model_hash));
  std::printf("final: L_diff %.5f L_rate %.5f L_feature %.5f L_G %.5f L_D %.5f bpp_est %.4f\n",
              r.last.L_diff, r.last.L_rate, r.last.L_feature, r.last.L_G, r.last.L_D, r.last.bpp_est);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"osdiff: one-step diffusion perceptual image codec"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train the codec on a toy corpus");
  std::string cfg_file, preset = "default", disc = "", base_out;
  bool prepare_base = false;
  TrainConfig cli;  // receives flag values; merged over preset/config below
  train_cmd->add_option("--config", cfg_file, "key = value config file");
  train_cmd->add_option("--preset", preset, "default|toy-fast")->check(CLI::IsMember({"default", "toy-fast"}));
  train_cmd->add_option("--lambda2", cli.weights.lambda2, "rate weight (rate point), usually 1 or 2");
  train_cmd->add_option("--lambda4", cli.weights.lambda4, "adversarial weight");
  train_cmd->add_option("--steps", cli.steps, "optimization steps");
  train_cmd->add_option("--batch", cli.batch, "batch size");
  train_cmd->add_option("--seed", cli.seed, "training seed");
  train_cmd->add_option("--disc", disc, "discriminator variant: none|pixel|latent");
  train_cmd->add_option("--corpus-dir", cli.corpus_dir, "directory of PNG training images");
  train_cmd->add_option("--synthetic-corpus", cli.corpus_size, "synthetic corpus size");
  train_cmd->add_option("--corpus-seed", cli.corpus_seed, "synthetic corpus seed");
  train_cmd->add_option("--base-model", cli.base_model, "pretrained backbone model to reuse");
  train_cmd->add_option("--out-model", cli.out_model, "output model path");
  train_cmd->add_option("--out-log", cli.out_log, "JSONL training log path");
  train_cmd->add_flag("--prepare-base", prepare_base, "only pretrain the frozen backbone and exit");
  train_cmd->add_option("--base-out", base_out, "output path for --prepare-base");

  // ---- compress ----
  auto* comp_cmd = app.add_subcommand("compress", "compress a PNG into an .osdf bitstream");
  std::string c_model, c_in, c_out;
  uint64_t c_seed = 0;
  comp_cmd->add_option("--model", c_model, "model file")->required();
  comp_cmd->add_option("--input", c_in, "input PNG")->required();
  comp_cmd->add_option("--output", c_out, "output .osdf")->required();
  comp_cmd->add_option("--seed", c_seed, "decode seed stored in the header");

  // ---- decompress ----
  auto* dec_cmd = app.add_subcommand("decompress", "decode an .osdf bitstream to a PNG");
  std::string d_model, d_in, d_out;
  int d_steps = 1;
  dec_cmd->add_option("--model", d_model, "model file")->required();
  dec_cmd->add_option("--input", d_in, "input .osdf")->required();
  dec_cmd->add_option("--output", d_out, "output PNG")->required();
  dec_cmd->add_option("--steps", d_steps, "denoising steps (1 = production path)");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "rate/distortion over an image set, emits an RD point");
  std::string e_model, e_images, e_curve, e_id = "osdiff";
  int e_count = 100;
  uint64_t e_seed = 3000;
  eval_cmd->add_option("--model", e_model, "model file")->required();
  eval_cmd->add_option("--images", e_images, "directory of PNGs (default: synthetic hold-out)");
  eval_cmd->add_option("--synthetic-corpus", e_count, "synthetic image count");
  eval_cmd->add_option("--seed", e_seed, "synthetic corpus seed");
  eval_cmd->add_option("--curve", e_curve, "append the mean RD point to this curve file");
  eval_cmd->add_option("--id", e_id, "model id written into the curve");

  // ---- bdrate ----
  auto* bd_cmd = app.add_subcommand("bdrate", "Bjontegaard delta rate between two RD curves");
  std::string b_anchor, b_test, b_metric = "msssim";
  bd_cmd->add_option("--anchor", b_anchor, "anchor curve file")->required();
  bd_cmd->add_option("--test", b_test, "test curve file")->required();
  bd_cmd->add_option("--metric", b_metric, "quality axis: psnr|msssim")
      ->check(CLI::IsMember({"psnr", "msssim"}));

  // ---- bench ----
  auto* bench_cmd = app.add_subcommand("bench", "encode/decode latency at several step counts");
  std::string bn_model, bn_image, bn_steps = "1,10,50", bn_report;
  int bn_runs = 20, bn_size = 64;
  uint64_t bn_seed = 4000;
  bench_cmd->add_option("--model", bn_model, "model file")->required();
  bench_cmd->add_option("--image", bn_image, "input PNG (default: one synthetic image)");
  bench_cmd->add_option("--steps", bn_steps, "comma-separated decode step counts");
  bench_cmd->add_option("--runs", bn_runs, "timed runs per configuration (median reported)");
  bench_cmd->add_option("--report", bn_report, "write the timing table here as TSV");
  bench_cmd->add_option("--size", bn_size, "synthetic image size");
  bench_cmd->add_option("--seed", bn_seed, "synthetic image seed");

  // ---- inspect ----
  auto* ins_cmd = app.add_subcommand("inspect", "dump f_d feature histograms (real vs generated)");
  std::string i_model, i_images, i_out = "features.tsv";
  int i_count = 16, i_bins = 64;
  uint64_t i_seed = 5000;
  ins_cmd->add_option("--model", i_model, "model file")->required();
  ins_cmd->add_option("--images", i_images, "directory of PNGs (default: synthetic)");
  ins_cmd->add_option("--synthetic-corpus", i_count, "synthetic image count");
  ins_cmd->add_option("--seed", i_seed, "seed");
  ins_cmd->add_option("--bins", i_bins, "histogram bins");
  ins_cmd->add_option("--output", i_out, "output TSV");

  // ---- gen-corpus ----
  auto* gen_cmd = app.add_subcommand("gen-corpus", "write the synthetic toy corpus as PNGs");
  std::string g_out;
  int g_count = 1100, g_size = 64;
  uint64_t g_seed = 2024;
  gen_cmd->add_option("--out", g_out, "output directory")->required();
  gen_cmd->add_option("--synthetic-corpus", g_count, "number of images");
  gen_cmd->add_option("--seed", g_seed, "generator seed");
  gen_cmd->add_option("--size", g_size, "image side length");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      // precedence: defaults < preset < config file < explicit flags
      TrainConfig tc;
      if (preset == "toy-fast") apply_toy_fast_preset(tc);
      if (!cfg_file.empty()) apply_config_kv(tc, parse_config_file(cfg_file));
      auto setflag = [&](const char* name) { return train_cmd->count(name) > 0; };
      if (setflag("--lambda2")) tc.weights.lambda2 = cli.weights.lambda2;
      if (setflag("--lambda4")) tc.weights.lambda4 = cli.weights.lambda4;
      if (setflag("--steps")) tc.steps = cli.steps;
      if (setflag("--batch")) tc.batch = cli.batch;
      if (setflag("--seed")) tc.seed = cli.seed;
      if (setflag("--corpus-dir")) tc.corpus_dir = cli.corpus_dir;
      if (setflag("--synthetic-corpus")) tc.corpus_size = cli.corpus_size;
      if (setflag("--corpus-seed")) tc.corpus_seed = cli.corpus_seed;
      if (setflag("--base-model")) tc.base_model = cli.base_model;
      if (setflag("--out-model")) tc.out_model = cli.out_model;
      if (setflag("--out-log")) tc.out_log = cli.out_log;
      if (!disc.empty()) tc.model.disc_variant = parse_variant(disc);
      if (prepare_base && base_out.empty()) base_out = tc.out_model;
      return cmd_train(tc, prepare_base, base_out);
    }
    if (*comp_cmd) {
      OsdiffModel model = OsdiffModel::load(c_model, /*include_discriminator=*/false);
      Image img = read_png(c_in);
      CompressResult r = compress(model, img, c_seed);
      write_file(c_out, r.bytes);
      std::printf("%s: %zu bytes, %.4f bpp (estimate %.1f bits, coded %.1f bits)\n", c_out.c_str(),
                  r.bytes.size(), r.bpp, r.estimated_bits,
                  8.0 * double(r.bytes.size() - size_t(r.header.header_bytes())));
      return 0;
    }
    if (*dec_cmd) {
      OsdiffModel model = OsdiffModel::load(d_model, /*include_discriminator=*/false);
      std::vector<uint8_t> bytes = read_file(d_in);
      Image img = decompress(model, bytes, d_steps);
      write_png(d_out, img);
      std::printf("%s: %dx%d decoded with %d step(s)\n", d_out.c_str(), image_width(img),
                  image_height(img), d_steps);
      return 0;
    }
    if (*eval_cmd) {
      OsdiffModel model = OsdiffModel::load(e_model, /*include_discriminator=*/false);
      std::vector<Image> images = load_images_arg(e_images, e_count, e_seed, 64);
      EvalSummary s = eval_model(model, images);
      std::printf("image\tbpp\tpsnr_db\tms_ssim\n");
      for (const EvalRow& r : s.rows)
        std::printf("%s\t%.6f\t%.4f\t%.6f\n", r.name.c_str(), r.bpp, r.psnr_db, r.msssim);
      std::printf("mean\t%.6f\t%.4f\t%.6f\n", s.mean.bpp, s.mean.psnr, s.mean.ms_ssim);
      if (!e_curve.empty()) {
        RdCurve curve;
        if (fs::exists(e_curve)) curve = read_rd_curve(e_curve);
        curve.model_id = e_id;
        curve.points.push_back(s.mean);
        std::sort(curve.points.begin(), curve.points.end(),
                  [](const RdPoint& a, const RdPoint& b) { return a.bpp < b.bpp; });
        write_rd_curve(e_curve, curve);
      }
      return 0;
    }
    if (*bd_cmd) {
      RdCurve anchor = read_rd_curve(b_anchor);
      RdCurve test = read_rd_curve(b_test);
      QualityMetric m = b_metric == "psnr" ? QualityMetric::kPsnr : QualityMetric::kMsSsim;
      std::printf("bd_rate(%s): %+.2f%%\n", b_metric.c_str(), bd_rate(anchor, test, m));
      return 0;
    }
    if (*bench_cmd) {
      OsdiffModel model = OsdiffModel::load(bn_model, /*include_discriminator=*/false);
      Image img = bn_image.empty() ? make_toy_image(bn_seed, 0, bn_size, bn_size) : read_png(bn_image);
      BenchReport rep = bench_latency(model, img, parse_int_list(bn_steps), bn_runs);
      std::string table = "steps\tencode_s\tdecode_s\tevals\tratio_vs_1step\n";
      for (const BenchEntry& e : rep.entries) {
        char line[160];
        std::snprintf(line, sizeof(line), "%d\t%.6f\t%.6f\t%lld\t%.2f\n", e.steps, rep.enc_median_s,
                      e.dec_median_s, static_cast<long long>(e.evals_per_decode), e.ratio_vs_one_step);
        table += line;
      }
      std::fputs(table.c_str(), stdout);
      if (!bn_report.empty()) {
        std::ofstream f(bn_report, std::ios::trunc);
        f << table;
      }
      return 0;
    }
    if (*ins_cmd) {
      OsdiffModel model = OsdiffModel::load(i_model, /*include_discriminator=*/true);
      std::vector<Image> images = load_images_arg(i_images, i_count, i_seed, 64);
      FeatureHistogram h = inspect_features(model, images, i_seed, i_bins);
      write_histogram(i_out, h);
      std::printf("%s: %d bins, js divergence %.4f bits\n", i_out.c_str(),
                  static_cast<int>(h.real_counts.size()), h.js_divergence_bits);
      return 0;
    }
    if (*gen_cmd) {
      fs::create_directories(g_out);
      for (int i = 0; i < g_count; ++i) {
        Image img = make_toy_image(g_seed, static_cast<uint64_t>(i), g_size, g_size);
        char name[64];
        std::snprintf(name, sizeof(name), "toy_%05d.png", i);
        write_png((fs::path(g_out) / name).string(), img);
      }
      std::printf("%d images written under %s (seed %llu)\n", g_count, g_out.c_str(),
                  static_cast<unsigned long long>(g_seed));
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
