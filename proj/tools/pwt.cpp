// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "pwt/error.hpp"
#include "pwt/pipeline.hpp"

namespace {

using namespace pwt;
using namespace pwt::pipeline;

bool is_validation_code(const std::string& code) {
  static const char* prefixes[] = {"bad-", "checkpoint-incompatible", "empty-map",
                                   "phantom-too-small", "image-too-small", "shape-mismatch",
                                   "calibration-degenerate"};
  for (const char* p : prefixes)
    if (code.rfind(p, 0) == 0) return true;
  return false;
}

std::pair<int, int> parse_range(const std::string& s) {
  const auto pos = s.find("..");
  if (pos == std::string::npos) throw Error("bad-config", "range must look like a..b: " + s);
  return {std::stoi(s.substr(0, pos)), std::stoi(s.substr(pos + 2))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pwt: lung ultrasound simulation and aeration reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
  double scale = 0.0;
  std::string out_dir;
  app.add_option("--config", config_path, "pipeline config JSON");
  app.add_option("--seed", seed, "global seed override")->each([&](const std::string&) {
    seed_set = true;
  });
  app.add_option("--workers", workers, "worker threads (PWT_WORKERS as fallback)");
  app.add_option("--scale", scale, "frequency scale factor for default configs");
  app.add_option("--out", out_dir, "output directory override");

  auto* c_gen = app.add_subcommand("generate", "synthesize phantom + RF dataset records");
  int gen_n = 8;
  std::string gen_split = "train", gen_records, gen_events;
  bool no_previews = false;
  c_gen->add_option("-n,--count", gen_n, "number of records");
  c_gen->add_option("--split", gen_split, "split name (train/val/eval/finetune)");
  c_gen->add_option("--records", gen_records, "record sub-range a..b for sharded runs");
  c_gen->add_option("--events", gen_events, "event sub-range a..b for sharded runs");
  c_gen->add_flag("--no-previews", no_previews, "skip PGM previews");

  auto* c_beam = app.add_subcommand("beamform", "RF tensor file -> B-mode image + tensor");
  std::string beam_rf, beam_out = "bmode";
  c_beam->add_option("rf", beam_rf, "input RF tensor (.pwt)")->required();
  c_beam->add_option("--out-base", beam_out, "output basename");

  auto* c_train = app.add_subcommand("train", "pretrain on a simulated manifest");
  std::string train_manifest, train_val;
  c_train->add_option("--manifest", train_manifest, "training manifest")->required();
  c_train->add_option("--val", train_val, "validation manifest (optional)");

  auto* c_ft = app.add_subcommand("finetune", "aeration-loss-only fine-tuning");
  std::string ft_ckpt, ft_manifest;
  c_ft->add_option("--checkpoint", ft_ckpt, "pretrained checkpoint")->required();
  c_ft->add_option("--manifest", ft_manifest, "fine-tuning manifest")->required();

  auto* c_infer = app.add_subcommand("infer", "predict aeration maps for a manifest");
  std::string in_ckpt, in_manifest;
  c_infer->add_option("--checkpoint", in_ckpt, "checkpoint")->required();
  c_infer->add_option("--manifest", in_manifest, "manifest")->required();

  auto* c_eval = app.add_subcommand("evaluate", "score predictions against a manifest");
  std::string ev_manifest, ev_pred;
  c_eval->add_option("--manifest", ev_manifest, "truth manifest")->required();
  c_eval->add_option("--pred", ev_pred, "prediction directory")->required();

  auto* c_cal = app.add_subcommand("calibrate", "Platt-scale a checkpoint on a manifest");
  std::string cal_ckpt, cal_manifest;
  c_cal->add_option("--checkpoint", cal_ckpt, "checkpoint")->required();
  c_cal->add_option("--manifest", cal_manifest, "validation manifest")->required();

  auto* c_self = app.add_subcommand("selftest", "fast internal consistency checks");

  CLI11_PARSE(app, argc, argv);

  try {
    PipelineConfig cfg =
        config_path.empty() ? default_config(scale > 0.0 ? scale : 4.0) : load_config(config_path);
    if (scale > 0.0 && config_path.empty()) cfg = default_config(scale);
    if (seed_set) cfg.seed = seed;
    if (workers > 0) cfg.workers = workers;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (*c_gen) {
      GenerateOptions opt;
      opt.n = gen_n;
      opt.split = gen_split;
      opt.previews = !no_previews;
      if (!gen_records.empty()) std::tie(opt.record_begin, opt.record_end) = parse_range(gen_records);
      if (!gen_events.empty()) std::tie(opt.event_begin, opt.event_end) = parse_range(gen_events);
      const auto res = cmd_generate(cfg, opt);
      std::cout << "generated " << res.generated << ", skipped " << res.skipped << ", failed "
                << res.failed << "; manifest records " << res.manifest.records.size() << "\n";
      return res.failed > 0 ? 2 : 0;
    }
    if (*c_beam) {
      cmd_beamform(cfg, beam_rf, beam_out);
      std::cout << "wrote " << beam_out << ".pwt/.pgm/_x4.pgm\n";
      return 0;
    }
    if (*c_train) {
      const auto res = cmd_train(cfg, train_manifest,
                                 train_val.empty() ? std::nullopt
                                                   : std::optional<fs::path>(train_val));
      std::cout << "checkpoint " << res.checkpoint << "\nloss log " << res.loss_csv << "\n";
      return 0;
    }
    if (*c_ft) {
      const auto res = cmd_finetune(cfg, ft_ckpt, ft_manifest);
      std::cout << "checkpoint " << res.checkpoint << "\n";
      return 0;
    }
    if (*c_infer) {
      const auto res = cmd_infer(cfg, in_ckpt, in_manifest);
      std::cout << "predictions " << res.pred_paths.size() << ", gamma csv " << res.gamma_csv
                << "\n";
      return 0;
    }
    if (*c_eval) {
      const auto rep = cmd_evaluate(cfg, ev_manifest, ev_pred);
      std::cout << "n=" << rep.rows.size() << " aeration_err mean=" << rep.mean_aeration_err()
                << " sd=" << rep.sd_aeration_err() << "\n";
      return 0;
    }
    if (*c_cal) {
      const auto res = cmd_calibrate(cfg, cal_ckpt, cal_manifest);
      std::cout << "platt a=" << res.a << " b=" << res.b << " ece " << res.ece_before << " -> "
                << res.ece_after << "\n";
      return 0;
    }
    if (*c_self) {
      const int failures = cmd_selftest(cfg);
      return failures == 0 ? 0 : 2;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_code(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
