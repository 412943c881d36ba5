// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pwt/beamform.hpp"
#include "pwt/metrics.hpp"
#include "pwt/nop/model.hpp"
#include "pwt/phantom.hpp"
#include "pwt/sequence.hpp"
#include "pwt/solver.hpp"

namespace pwt::pipeline {

namespace fs = std::filesystem;

/// Everything the end-to-end flow needs, derived from the paper-scale
/// constants by a single frequency scale factor: scale s divides f_c and
/// multiplies dx/dt, holding 12 points per wavelength and CFL. scale 1
/// reproduces the full-scale constants (dx 24.68 um, dt 8 ns, T 1822,
/// 64 receivers, 128 events).
struct PipelineConfig {
  double scale = 4.0;
  std::uint64_t seed = 1234;
  int workers = 0;  // 0: PWT_WORKERS env, then hardware concurrency

  // acquisition
  double c_ref = 1540.0;
  double f_c = 1.3e6;
  double dx_m = 0.0;
  double dt_s = 0.0;
  double fs_out = 5.2e6;
  double duration_s = 0.0;
  int n_active = 16;
  int n_events = 32;
  double pitch_m = 0.0;
  double source_pressure_pa = 2.5e6;

  // solver
  int spatial_order = 4;
  bool nonlinear = true;
  int n_relax = 1;
  int boundary_width = 12;
  double atten_alpha0_db_cm_mhz = 0.5;  // power-law target fitted per config
  double atten_y = 1.1;

  // phantom sampling ranges
  double aeration_lo = 0.10, aeration_hi = 0.90;
  double pleura_lo_m = 0.0, pleura_hi_m = 0.0;  // scaled [1,3] cm
  double alveolus_d_m = 0.0, alveolus_spread_m = 0.0, wall_thickness_m = 0.0;
  double curvature_max_per_m = 25.0;
  double scatter_rel_std = 0.025;

  // model + training
  nop::LunaConfig luna;
  nop::SegConfig seg;
  double eta = 0.5;
  double lr_override = 0.0;  // 0: the eta * 0.002 default
  int batch = 8;
  int epochs_pretrain = 30;
  int epochs_finetune = 10;
  int seg_epochs = 3;
  double seg_lr = 1e-3;
  Eigen::Index mask_t_max = 32;   // ~13% of T
  Eigen::Index mask_s_max = 120;  // ~24% of N_t*N_e
  double noise_snr_db = 30.0;

  fs::path out_dir = "out";

  // derived helpers
  Eigen::Index rf_samples() const;                  // T
  int decimation() const;                           // solver-rate / fs_out
  int solver_steps() const;                         // T * decimation
  double pitch_cells() const { return pitch_m / dx_m; }
  sequence::TransducerSpec transducer() const;
  solver::SolverConfig solver_config() const;
  nop::TrainConfig train_config() const;
  solver::RelaxParams fitted_relaxation() const;    // empty when n_relax == 0

  /// Cross-field validation: CFL bound, output Nyquist, mask bounds,
  /// FNO modes vs rFFT length. Throws "bad-config".
  void validate() const;
};

PipelineConfig default_config(double scale = 4.0);
PipelineConfig load_config(const fs::path& path);
void save_config(const fs::path& path, const PipelineConfig& cfg);
nlohmann::json config_to_json(const PipelineConfig& cfg);
PipelineConfig config_from_json(const nlohmann::json& j);

struct RecordEntry {
  int index = 0;
  std::string rf_path, map_path, wall_path, bmode_path;
  double gamma = 0.0;
  double pleura_depth_m = 0.0;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  std::string split;
  std::vector<RecordEntry> records;
};

DatasetManifest load_manifest(const fs::path& path);
void save_manifest(const fs::path& path, const DatasetManifest& m);
/// Existence + header checks on every referenced tensor. Throws on mismatch.
void validate_manifest(const fs::path& manifest_path, const PipelineConfig& cfg);

/// Per-record phantom parameters drawn from the configured ranges,
/// deterministic in (config seed, record index).
struct RecordParams {
  double target_aeration = 0.0;
  double pleura_depth_m = 0.0;
  double curvature_per_m = 0.0;
  std::uint64_t seed = 0;
};
RecordParams draw_record_params(const PipelineConfig& cfg, const std::string& split, int index);

struct GenerateOptions {
  int n = 0;
  std::string split = "train";
  int record_begin = 0, record_end = -1;  // -1: n
  int event_begin = 0, event_end = -1;    // -1: all (sharding)
  bool previews = true;
};

struct GenerateResult {
  DatasetManifest manifest;
  int generated = 0, skipped = 0, failed = 0;
};

/// phantom -> medium -> walking-aperture acquisition, resumable by record.
GenerateResult cmd_generate(const PipelineConfig& cfg, const GenerateOptions& opt);

/// RF tensor file -> B-mode PGM + float tensor (and the x4 display image).
void cmd_beamform(const PipelineConfig& cfg, const fs::path& rf_path, const fs::path& out_base);

struct TrainResult {
  fs::path checkpoint;
  fs::path loss_csv;
  std::vector<double> epoch_loss;  // CE + eta-term per epoch
};

TrainResult cmd_train(const PipelineConfig& cfg, const fs::path& manifest_path,
                      const std::optional<fs::path>& val_manifest = std::nullopt);
TrainResult cmd_finetune(const PipelineConfig& cfg, const fs::path& checkpoint,
                         const fs::path& manifest_path);

struct InferResult {
  std::vector<fs::path> pred_paths;
  fs::path gamma_csv;
};
InferResult cmd_infer(const PipelineConfig& cfg, const fs::path& checkpoint,
                      const fs::path& manifest_path);

metrics::EvalReport cmd_evaluate(const PipelineConfig& cfg, const fs::path& manifest_path,
                                 const fs::path& pred_dir);

struct CalibrateResult {
  double a = 1.0, b = 0.0, ece_before = 0.0, ece_after = 0.0;
};
CalibrateResult cmd_calibrate(const PipelineConfig& cfg, const fs::path& checkpoint,
                              const fs::path& manifest_path);

/// Fast internal consistency checks; returns the number of failures.
int cmd_selftest(const PipelineConfig& cfg);

/// Overfit fixture: a fresh segmentation net trained for `steps` optimizer
/// steps on the manifest records; returns the mean Dice of thresholded
/// predictions against the chest-wall labels.
double segnet_overfit_dice(const PipelineConfig& cfg, const fs::path& manifest_path, int steps);

// -- checkpoint container ---------------------------------------------------
// One tensor file: payload is every parameter concatenated f64, metadata
// carries the ordered name/shape manifest plus model configs and the Platt
// coefficients.
struct Checkpoint {
  nop::ParamStore store;
  nop::LunaParams luna;
  nop::SegParams seg;
  PipelineConfig cfg;
  double platt_a = 1.0, platt_b = 0.0;
};
void save_checkpoint(const fs::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const fs::path& path);

/// Resolves worker count: explicit > PWT_WORKERS > hardware.
int resolve_workers(int requested);

}  // namespace pwt::pipeline
