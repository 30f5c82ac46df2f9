// Copyright (c) 2026 gifnet-cpp authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "gifnet/dataset.hpp"
#include "gifnet/fusion.hpp"
#include "gifnet/metrics.hpp"
#include "gifnet/runconfig.hpp"
#include "gifnet/trainer.hpp"

namespace {

using namespace gifnet;

// 0 success, 1 runtime failure, 2 usage/argument error.
int run_guarded(int& code, const std::function<void()>& body) {
  try {
    body();
    code = 0;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    code = 1;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gifnet: generalized image fusion toolkit"};
  app.require_subcommand(1);
  int code = 0;

  // ---- augment ----
  auto* aug = app.add_subcommand(
      "augment", "Synthesize the joint (vis, ir, near, far) training set");
  std::string aug_vis, aug_ir, aug_out;
  std::string aug_mask = mask_kind_name(MaskKind::CenteredDisk);
  float aug_sigma = 3.0f;
  int64_t aug_seed = 0;
  aug->add_option("--vis", aug_vis, "Directory of visible RGB images")->required();
  aug->add_option("--ir", aug_ir, "Directory of matching infrared images")->required();
  aug->add_option("--out", aug_out, "Output dataset directory")->required();
  aug->add_option("--sigma", aug_sigma, "Defocus blur strength");
  aug->add_option("--mask", aug_mask, "Focus mask: left-half|top-half|centered-disk");
  aug->add_option("--seed", aug_seed, "Mask randomization seed");
  aug->callback([&] {
    run_guarded(code, [&] {
      DatasetConfig cfg;
      cfg.seed = aug_seed;
      cfg.blur_sigma = aug_sigma;
      cfg.mask_kind = parse_mask_kind(aug_mask);
      build_dataset(aug_vis, aug_ir, aug_out, cfg);
      std::cout << aug_out << "/manifest.txt\n";
    });
  });

  // ---- train ----
  auto* tr = app.add_subcommand("train", "Run the alternating two-task trainer");
  std::string tr_data, tr_out, tr_config;
  int tr_steps = 0, tr_batch = 0, tr_crop = 0, tr_ckpt_every = 0;
  float tr_lr = 0.0f, tr_clip = 0.0f;
  uint64_t tr_seed = 0;
  std::string tr_alt, tr_saliency;
  bool tr_multi = true, tr_cfgm = true, tr_rec = true, tr_raw = false;
  tr->add_option("--data", tr_data, "Path to a dataset manifest.txt")->required();
  tr->add_option("--out", tr_out, "Output directory (checkpoints + step log)")
      ->required();
  tr->add_option("--config", tr_config,
                 "key=value config file; flags override it.\nSchema:\n" +
                     config_schema_text());
  tr->add_option("--steps", tr_steps, "Optimization steps");
  tr->add_option("--batch", tr_batch, "Samples per step");
  tr->add_option("--crop", tr_crop, "Square crop side");
  tr->add_option("--lr", tr_lr, "Learning rate");
  tr->add_option("--clip-norm", tr_clip, "Global gradient-norm cap (0 disables)");
  tr->add_option("--seed", tr_seed, "Init/crop seed");
  tr->add_option("--alternation", tr_alt, "per-step|per-epoch");
  tr->add_option("--checkpoint-every", tr_ckpt_every, "Periodic checkpoint stride");
  tr->add_option("--multi-task", tr_multi, "Alternate MM/DP roles (0/1)");
  tr->add_option("--use-cfgm", tr_cfgm, "Enable cross-branch gating (0/1)");
  tr->add_option("--use-rec", tr_rec, "Enable the reconstruction branch (0/1)");
  tr->add_option("--saliency", tr_saliency, "spatial-grad|classifier-grad");
  tr->add_option("--raw-softmax", tr_raw, "Disable softmax temperature (0/1)");
  tr->callback([&] {
    run_guarded(code, [&] {
      RunConfig rc;
      if (tr->count("--config")) rc = parse_config_file(tr_config);
      if (tr->count("--steps")) rc.train.steps = tr_steps;
      if (tr->count("--batch")) rc.train.batch = tr_batch;
      if (tr->count("--crop")) rc.train.crop = tr_crop;
      if (tr->count("--lr")) rc.train.lr = tr_lr;
      if (tr->count("--clip-norm")) rc.train.clip_norm = tr_clip;
      if (tr->count("--seed")) rc.train.seed = tr_seed;
      if (tr->count("--alternation")) rc.train.alternation = parse_alternation(tr_alt);
      if (tr->count("--checkpoint-every")) rc.train.checkpoint_every = tr_ckpt_every;
      if (tr->count("--multi-task")) rc.train.multi_task = tr_multi;
      if (tr->count("--use-cfgm")) rc.train.use_cfgm = tr_cfgm;
      if (tr->count("--use-rec")) rc.train.use_rec = tr_rec;
      if (tr->count("--saliency"))
        rc.train.saliency = parse_saliency_backend(tr_saliency);
      if (tr->count("--raw-softmax")) rc.train.raw_softmax = tr_raw;
      rc.arch.validate();
      rc.train.validate(rc.arch);

      const DatasetManifest manifest = read_manifest(tr_data);
      Trainer trainer(Model(rc.arch, rc.train.seed), rc.train);
      trainer.train_loop(manifest, tr_out);
      std::cout << tr_out << "/model_final.gfck\n";
    });
  });

  // ---- fuse ----
  auto* fu = app.add_subcommand("fuse", "Fuse an aligned image pair");
  std::string fu_ckpt, fu_a, fu_b, fu_out, fu_color = "a";
  bool fu_no_cfgm = false;
  fu->add_option("--ckpt", fu_ckpt, "Trained checkpoint")->required();
  fu->add_option("--a", fu_a, "First input image")->required();
  fu->add_option("--b", fu_b, "Second input image")->required();
  fu->add_option("--out", fu_out, "Output PNG path")->required();
  fu->add_option("--color", fu_color, "Chroma donor: a|b|none");
  fu->add_flag("--no-cfgm", fu_no_cfgm, "Disable cross-branch gating");
  fu->callback([&] {
    run_guarded(code, [&] {
      FusionRequest req;
      req.color_source = parse_color_source(fu_color);
      req.use_cfgm = !fu_no_cfgm;
      const Model m = load_checkpoint(fu_ckpt);
      req.input_a = load_image(fu_a);
      req.input_b = load_image(fu_b);
      save_image(fuse_pair(m, req), fu_out);
      std::cout << fu_out << '\n';
    });
  });

  // ---- enhance ----
  auto* en = app.add_subcommand("enhance", "Single-image enhancement, F(X, X)");
  std::string en_ckpt, en_in, en_out;
  bool en_no_cfgm = false;
  en->add_option("--ckpt", en_ckpt, "Trained checkpoint")->required();
  en->add_option("--in", en_in, "Input image")->required();
  en->add_option("--out", en_out, "Output PNG path")->required();
  en->add_flag("--no-cfgm", en_no_cfgm, "Disable cross-branch gating");
  en->callback([&] {
    run_guarded(code, [&] {
      const Model m = load_checkpoint(en_ckpt);
      const Image x = load_image(en_in);
      if (en_no_cfgm) {
        FusionRequest req;
        req.input_a = x;
        req.input_b = x;
        req.use_cfgm = false;
        save_image(fuse_pair(m, req), en_out);
      } else {
        save_image(enhance_single(m, x), en_out);
      }
      std::cout << en_out << '\n';
    });
  });

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "Score fused images against their sources");
  std::string ev_fused, ev_a, ev_b, ev_out;
  ev->add_option("--fused", ev_fused, "Directory of fused images")->required();
  ev->add_option("--a", ev_a, "Directory of first sources")->required();
  ev->add_option("--b", ev_b, "Directory of second sources")->required();
  ev->add_option("--out", ev_out, "Report TSV path")->required();
  ev->callback([&] {
    run_guarded(code, [&] {
      const MetricReport report = evaluate_dir(ev_fused, ev_a, ev_b);
      write_metric_report(report, ev_out);
      const MetricRow& m = report.mean;
      std::cout << "MEAN\tei=" << m.ei << "\tag=" << m.ag << "\tvif=" << m.vif
                << "\tscd=" << m.scd << '\n';
    });
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int parse_code = app.exit(e);
    return parse_code == 0 ? 0 : 2;
  }
  return code;
}
