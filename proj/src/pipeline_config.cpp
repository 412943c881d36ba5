// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "pwt/error.hpp"
#include "pwt/pipeline.hpp"
#include "pwt/tensor_file.hpp"

namespace pwt::pipeline {

namespace {

constexpr double kPaperFc = 5.2e6;
constexpr double kPaperDt = 8.0e-9;
constexpr double kPaperDuration = 87.6e-6;
constexpr double kPaperAperture = 12.48e-3;  // 64 elements x 0.195 mm

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Eigen::Index PipelineConfig::rf_samples() const {
  return sequence::rf_sample_count(duration_s, fs_out);
}

int PipelineConfig::decimation() const {
  return static_cast<int>(std::lround((1.0 / dt_s) / fs_out));
}

int PipelineConfig::solver_steps() const {
  return static_cast<int>(rf_samples()) * decimation();
}

sequence::TransducerSpec PipelineConfig::transducer() const {
  sequence::TransducerSpec td;
  td.n_elements_total = n_events - 1 + n_active;
  td.pitch_m = pitch_m;
  td.f_c = f_c;
  td.frac_bandwidth = 0.70;
  td.fs_out = fs_out;
  td.n_active = n_active;
  td.n_events = n_events;
  td.source_pressure_pa = source_pressure_pa;
  return td;
}

solver::SolverConfig PipelineConfig::solver_config() const {
  solver::SolverConfig sc;
  sc.dx_m = dx_m;
  sc.dt_s = dt_s;
  sc.n_steps = solver_steps();
  sc.c_ref = c_ref;
  sc.spatial_order = spatial_order;
  sc.n_relax = n_relax;
  sc.nonlinear = nonlinear;
  sc.boundary.kind = solver::Boundary::Kind::absorbing;
  sc.boundary.width_cells = boundary_width;
  sc.boundary.top = false;  // transducer face stays reflective
  return sc;
}

nop::TrainConfig PipelineConfig::train_config() const {
  nop::TrainConfig tc = nop::TrainConfig::with_eta(eta);
  if (lr_override > 0.0) tc.lr = lr_override;
  tc.batch = batch;
  tc.epochs_pretrain = epochs_pretrain;
  tc.epochs_finetune = epochs_finetune;
  tc.mask_t_max = mask_t_max;
  tc.mask_s_max = mask_s_max;
  tc.noise_snr_db = noise_snr_db;
  return tc;
}

solver::RelaxParams PipelineConfig::fitted_relaxation() const {
  if (n_relax == 0 || atten_alpha0_db_cm_mhz == 0.0) return {};
  const auto fit = solver::fit_attenuation(atten_alpha0_db_cm_mhz, atten_y, 0.5 * f_c, 1.5 * f_c,
                                           n_relax, c_ref, dt_s);
  return fit.params;
}

void PipelineConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error("bad-config", what); };
  if (scale <= 0.0) fail("scale must be positive");
  solver_config().validate();  // CFL and grid checks before any compute
  transducer().validate();
  if (std::abs((1.0 / dt_s) / decimation() - fs_out) > 0.005 * fs_out)
    fail("solver rate is not an integer multiple of fs_out within 0.5%");
  if (aeration_lo < 0.0 || aeration_hi > 1.0 || aeration_lo >= aeration_hi)
    fail("aeration range must satisfy 0 <= lo < hi <= 1");
  if (pleura_lo_m <= 0.0 || pleura_lo_m >= pleura_hi_m) fail("pleura depth range");
  if (alveolus_d_m <= wall_thickness_m) fail("alveolus diameter must exceed wall thickness");
  if (luna.T != rf_samples()) fail("luna.T must equal the RF sample count");
  if (luna.n_rx != n_active || luna.n_events != n_events) fail("luna dims must match acquisition");
  luna.validate();  // includes modes <= T/2+1
  seg.validate();
  if (mask_t_max > luna.T || mask_s_max > luna.n_rx * luna.n_events)
    fail("mask bounds exceed tensor dims");
  if (batch < 1 || epochs_pretrain < 1) fail("training sizes");
  if (eta < 0.0) fail("eta must be nonnegative");
}

PipelineConfig default_config(double scale) {
  PipelineConfig c;
  c.scale = scale;
  c.f_c = kPaperFc / scale;
  c.dx_m = c.c_ref / (12.0 * c.f_c);  // 12 points per wavelength
  c.dt_s = kPaperDt * scale;
  c.fs_out = 4.0 * c.f_c;
  const bool paper = scale == 1.0;
  c.n_active = paper ? 64 : 16;
  c.n_events = paper ? 128 : 32;
  c.duration_s = paper ? kPaperDuration : 256.0 / c.fs_out;
  // aperture kept at the paper's physical span relative to the focal range
  // so the f-number window carries over; element pitch snaps to grid cells
  const double pitch_nominal = (kPaperAperture / scale) / c.n_active;
  c.pitch_m = std::max(1.0, std::round(pitch_nominal / c.dx_m)) * c.dx_m;

  c.pleura_lo_m = 0.01 / scale;
  c.pleura_hi_m = 0.03 / scale;
  c.alveolus_d_m = 94e-6 * scale;
  c.alveolus_spread_m = 42e-6 * scale;  // ~0.45 of the mean diameter
  c.wall_thickness_m = std::max(16.5e-6 * scale, c.dx_m);

  c.luna.T = c.rf_samples();
  c.luna.n_rx = c.n_active;
  c.luna.n_events = c.n_events;
  c.luna.fno_channels = paper ? 32 : 8;
  // paper: 87 modes of the 912-bin rFFT; scaled proportionally elsewhere
  c.luna.modes = paper ? 87
                       : std::max<Eigen::Index>(
                             1, std::llround(87.0 * static_cast<double>(c.luna.freq_bins()) / 912.0));
  c.luna.spatial_base = paper ? 64 : 16;
  c.luna.out_depth = paper ? 128 : 32;
  c.seg.image_size = paper ? 400 : 96;
  c.seg.base = paper ? 64 : 16;
  c.mask_t_max = paper ? 200 : std::llround(0.13 * static_cast<double>(c.luna.T));
  c.mask_s_max = paper ? 2000
                       : std::llround(0.24 * static_cast<double>(c.luna.n_rx * c.luna.n_events));
  c.batch = paper ? 26 : 8;
  c.epochs_pretrain = paper ? 90 : 30;
  return c;
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["scale"] = c.scale;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["acquisition"] = {{"c_ref", c.c_ref},
                      {"f_c", c.f_c},
                      {"dx_m", c.dx_m},
                      {"dt_s", c.dt_s},
                      {"fs_out", c.fs_out},
                      {"duration_s", c.duration_s},
                      {"n_active", c.n_active},
                      {"n_events", c.n_events},
                      {"pitch_m", c.pitch_m},
                      {"source_pressure_pa", c.source_pressure_pa}};
  j["solver"] = {{"spatial_order", c.spatial_order},
                 {"nonlinear", c.nonlinear},
                 {"n_relax", c.n_relax},
                 {"boundary_width", c.boundary_width},
                 {"atten_alpha0_db_cm_mhz", c.atten_alpha0_db_cm_mhz},
                 {"atten_y", c.atten_y}};
  j["phantom"] = {{"aeration_lo", c.aeration_lo},
                  {"aeration_hi", c.aeration_hi},
                  {"pleura_lo_m", c.pleura_lo_m},
                  {"pleura_hi_m", c.pleura_hi_m},
                  {"alveolus_d_m", c.alveolus_d_m},
                  {"alveolus_spread_m", c.alveolus_spread_m},
                  {"wall_thickness_m", c.wall_thickness_m},
                  {"curvature_max_per_m", c.curvature_max_per_m},
                  {"scatter_rel_std", c.scatter_rel_std}};
  j["model"] = {{"fno_channels", c.luna.fno_channels}, {"modes", c.luna.modes},
                {"spatial_base", c.luna.spatial_base}, {"out_depth", c.luna.out_depth},
                {"seg_image", c.seg.image_size},       {"seg_base", c.seg.base}};
  j["train"] = {{"eta", c.eta},
                {"lr", c.lr_override},
                {"batch", c.batch},
                {"epochs_pretrain", c.epochs_pretrain},
                {"epochs_finetune", c.epochs_finetune},
                {"seg_epochs", c.seg_epochs},
                {"seg_lr", c.seg_lr},
                {"mask_t_max", c.mask_t_max},
                {"mask_s_max", c.mask_s_max},
                {"noise_snr_db", c.noise_snr_db}};
  j["out_dir"] = c.out_dir.string();
  return j;
}

PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c = default_config(j.value("scale", 4.0));
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  if (j.contains("acquisition")) {
    const auto& a = j["acquisition"];
    c.c_ref = a.value("c_ref", c.c_ref);
    c.f_c = a.value("f_c", c.f_c);
    c.dx_m = a.value("dx_m", c.dx_m);
    c.dt_s = a.value("dt_s", c.dt_s);
    c.fs_out = a.value("fs_out", c.fs_out);
    c.duration_s = a.value("duration_s", c.duration_s);
    c.n_active = a.value("n_active", c.n_active);
    c.n_events = a.value("n_events", c.n_events);
    c.pitch_m = a.value("pitch_m", c.pitch_m);
    c.source_pressure_pa = a.value("source_pressure_pa", c.source_pressure_pa);
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    c.spatial_order = s.value("spatial_order", c.spatial_order);
    c.nonlinear = s.value("nonlinear", c.nonlinear);
    c.n_relax = s.value("n_relax", c.n_relax);
    c.boundary_width = s.value("boundary_width", c.boundary_width);
    c.atten_alpha0_db_cm_mhz = s.value("atten_alpha0_db_cm_mhz", c.atten_alpha0_db_cm_mhz);
    c.atten_y = s.value("atten_y", c.atten_y);
  }
  if (j.contains("phantom")) {
    const auto& p = j["phantom"];
    c.aeration_lo = p.value("aeration_lo", c.aeration_lo);
    c.aeration_hi = p.value("aeration_hi", c.aeration_hi);
    c.pleura_lo_m = p.value("pleura_lo_m", c.pleura_lo_m);
    c.pleura_hi_m = p.value("pleura_hi_m", c.pleura_hi_m);
    c.alveolus_d_m = p.value("alveolus_d_m", c.alveolus_d_m);
    c.alveolus_spread_m = p.value("alveolus_spread_m", c.alveolus_spread_m);
    c.wall_thickness_m = p.value("wall_thickness_m", c.wall_thickness_m);
    c.curvature_max_per_m = p.value("curvature_max_per_m", c.curvature_max_per_m);
    c.scatter_rel_std = p.value("scatter_rel_std", c.scatter_rel_std);
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    c.luna.fno_channels = m.value("fno_channels", c.luna.fno_channels);
    c.luna.modes = m.value("modes", c.luna.modes);
    c.luna.spatial_base = m.value("spatial_base", c.luna.spatial_base);
    c.luna.out_depth = m.value("out_depth", c.luna.out_depth);
    c.seg.image_size = m.value("seg_image", c.seg.image_size);
    c.seg.base = m.value("seg_base", c.seg.base);
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    c.eta = t.value("eta", c.eta);
    c.lr_override = t.value("lr", c.lr_override);
    c.batch = t.value("batch", c.batch);
    c.epochs_pretrain = t.value("epochs_pretrain", c.epochs_pretrain);
    c.epochs_finetune = t.value("epochs_finetune", c.epochs_finetune);
    c.seg_epochs = t.value("seg_epochs", c.seg_epochs);
    c.seg_lr = t.value("seg_lr", c.seg_lr);
    c.mask_t_max = t.value("mask_t_max", c.mask_t_max);
    c.mask_s_max = t.value("mask_s_max", c.mask_s_max);
    c.noise_snr_db = t.value("noise_snr_db", c.noise_snr_db);
  }
  c.out_dir = j.value("out_dir", c.out_dir.string());
  // acquisition dims feed the model config
  c.luna.T = c.rf_samples();
  c.luna.n_rx = c.n_active;
  c.luna.n_events = c.n_events;
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("bad-config", "cannot open config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad-config", std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c = config_from_json(j);
  c.validate();
  return c;
}

void save_config(const fs::path& path, const PipelineConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io-error", "cannot write config: " + path.string());
  out << config_to_json(cfg).dump(2) << "\n";
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("bad-manifest", "cannot open manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad-manifest", std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m;
  m.split = j.value("split", "train");
  for (const auto& r : j.value("records", nlohmann::json::array())) {
    RecordEntry e;
    e.index = r.value("index", 0);
    e.rf_path = r.value("rf", "");
    e.map_path = r.value("map", "");
    e.wall_path = r.value("wall", "");
    e.bmode_path = r.value("bmode", "");
    e.gamma = r.value("gamma", 0.0);
    e.pleura_depth_m = r.value("pleura_depth_m", 0.0);
    e.seed = r.value("seed", 0ULL);
    m.records.push_back(e);
  }
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& m) {
  nlohmann::json j;
  j["split"] = m.split;
  j["records"] = nlohmann::json::array();
  for (const auto& e : m.records) {
    j["records"].push_back({{"index", e.index},
                            {"rf", e.rf_path},
                            {"map", e.map_path},
                            {"wall", e.wall_path},
                            {"bmode", e.bmode_path},
                            {"gamma", e.gamma},
                            {"pleura_depth_m", e.pleura_depth_m},
                            {"seed", e.seed}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("io-error", "cannot write manifest: " + path.string());
  out << j.dump(2) << "\n";
}

void validate_manifest(const fs::path& manifest_path, const PipelineConfig& cfg) {
  const DatasetManifest m = load_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  for (const auto& e : m.records) {
    const auto rf = read_tensor(base / e.rf_path);
    if (rf.dims != std::vector<std::int64_t>{cfg.rf_samples(), cfg.n_active, cfg.n_events})
      throw Error("bad-manifest", "rf dims mismatch in " + e.rf_path);
    const auto map = read_tensor(base / e.map_path);
    if (map.dims != std::vector<std::int64_t>{cfg.luna.out_depth, cfg.n_events})
      throw Error("bad-manifest", "map dims mismatch in " + e.map_path);
    if (!e.wall_path.empty()) (void)read_tensor(base / e.wall_path);
  }
}

RecordParams draw_record_params(const PipelineConfig& cfg, const std::string& split, int index) {
  CounterRng rng(cfg.seed, fnv1a(split) + static_cast<std::uint64_t>(index) * 7919ULL);
  RecordParams p;
  p.target_aeration = rng.uniform(cfg.aeration_lo, cfg.aeration_hi);
  p.pleura_depth_m = rng.uniform(cfg.pleura_lo_m, cfg.pleura_hi_m);
  p.curvature_per_m = rng.uniform(0.0, cfg.curvature_max_per_m);
  p.seed = rng.next_u64();
  return p;
}

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PWT_WORKERS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  std::vector<double> payload(static_cast<std::size_t>(ck.store.total_scalars()));
  nlohmann::json params = nlohmann::json::array();
  std::size_t off = 0;
  for (int i = 0; i < ck.store.count(); ++i) {
    const auto& v = ck.store.value(i);
    params.push_back({{"name", ck.store.name(i)}, {"shape", v.shape}});
    for (Eigen::Index k = 0; k < v.size(); ++k) payload[off++] = v.data(k);
  }
  TensorFile t = TensorFile::from_f64({static_cast<std::int64_t>(payload.size())}, payload);
  t.meta["params"] = params;
  t.meta["config"] = config_to_json(ck.cfg);
  t.meta["platt"] = {{"a", ck.platt_a}, {"b", ck.platt_b}};
  write_tensor(path, t);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const TensorFile t = read_tensor(path);
  if (!t.meta.contains("params") || !t.meta.contains("config"))
    throw Error("checkpoint-incompatible", "missing parameter manifest");
  Checkpoint ck;
  ck.cfg = config_from_json(t.meta["config"]);
  // rebuild the parameter layout the same way training created it
  ck.luna = nop::init_luna(ck.store, ck.cfg.luna, CounterRng(ck.cfg.seed, 0x10A0));
  ck.seg = nop::init_segnet(ck.store, ck.cfg.seg, CounterRng(ck.cfg.seed, 0x5E60));
  const auto& params = t.meta["params"];
  if (static_cast<int>(params.size()) != ck.store.count())
    throw Error("checkpoint-incompatible", "parameter count mismatch");
  const auto payload = t.as_f64();
  std::size_t off = 0;
  for (int i = 0; i < ck.store.count(); ++i) {
    const auto& pj = params[static_cast<std::size_t>(i)];
    auto& v = ck.store.value(i);
    if (pj.value("name", "") != ck.store.name(i) ||
        pj.value("shape", std::vector<std::int64_t>{}) != v.shape)
      throw Error("checkpoint-incompatible", "parameter " + ck.store.name(i) + " mismatch");
    if (off + static_cast<std::size_t>(v.size()) > payload.size())
      throw Error("checkpoint-incompatible", "payload too short");
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data(k) = payload[off++];
  }
  ck.platt_a = t.meta["platt"].value("a", 1.0);
  ck.platt_b = t.meta["platt"].value("b", 0.0);
  return ck;
}

}  // namespace pwt::pipeline
