// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <atomic>
#include <cstdio>
#include <limits>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>
#include <thread>

#include "pwt/error.hpp"
#include "pwt/pgm.hpp"
#include "pwt/pipeline.hpp"
#include "pwt/tensor_file.hpp"

namespace pwt::pipeline {

namespace {

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string record_name(const char* stem, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", stem, index, ext);
  return buf;
}

struct RecordGeometry {
  int pc = 0;             // grid cells per element pitch
  int first_col = 0;      // medium column of element 0
  int span = 0;           // total elements across the walk
  Eigen::Index width = 0; // medium columns
  int source_row = 2;
  std::vector<int> center_col;  // aperture center per event
};

RecordGeometry record_geometry(const PipelineConfig& cfg) {
  RecordGeometry g;
  g.pc = static_cast<int>(std::lround(cfg.pitch_cells()));
  g.span = cfg.n_events - 1 + cfg.n_active;
  const int margin = cfg.boundary_width + 10;
  g.first_col = margin;
  g.width = 2 * margin + (g.span - 1) * g.pc + 1;
  for (int e = 0; e < cfg.n_events; ++e) {
    const double center = g.first_col + (e + 0.5 * (cfg.n_active - 1)) * cfg.pitch_cells();
    g.center_col.push_back(static_cast<int>(std::lround(center)));
  }
  return g;
}

void write_rf_file(const fs::path& path, const sequence::RfTensor& rf, int event_begin) {
  std::vector<float> payload(rf.data.begin(), rf.data.end());
  TensorFile t = TensorFile::from_f32({rf.T, rf.n_rx, rf.n_events}, payload);
  t.meta["fs"] = rf.fs;
  t.meta["t0"] = rf.t0;
  t.meta["pitch_m"] = rf.pitch_m;
  t.meta["f_c"] = rf.f_c;
  t.meta["focal_depth_m"] = rf.focal_depth_m;
  t.meta["event_begin"] = event_begin;
  write_tensor(path, t);
}

sequence::RfTensor read_rf_file(const fs::path& path) {
  const TensorFile t = read_tensor(path);
  if (t.dims.size() != 3) throw Error("bad-tensor-header", "rf tensor must be 3-D");
  sequence::RfTensor rf;
  rf.T = t.dims[0];
  rf.n_rx = t.dims[1];
  rf.n_events = t.dims[2];
  const auto v = t.to_f64_widened();
  rf.data.assign(v.begin(), v.end());
  rf.fs = t.meta.value("fs", 0.0);
  rf.t0 = t.meta.value("t0", 0.0);
  rf.pitch_m = t.meta.value("pitch_m", 0.0);
  rf.f_c = t.meta.value("f_c", 0.0);
  rf.focal_depth_m = t.meta.value("focal_depth_m", std::vector<double>{});
  return rf;
}

struct BuiltPhantom {
  phantom::AssembledMedium assembled;
  Eigen::ArrayXXd truth_map;  // out_depth x n_events, block means in [0,1]
  double gamma = 0.0;
};

BuiltPhantom build_phantom(const PipelineConfig& cfg, const RecordGeometry& geom,
                           const RecordParams& rp) {
  phantom::PhantomSpec spec;
  spec.target_aeration = rp.target_aeration;
  spec.pleura_depth_m = rp.pleura_depth_m;
  spec.alveolus_diameter_m = cfg.alveolus_d_m;
  spec.alveolus_spread_m = cfg.alveolus_spread_m;
  spec.wall_thickness_m = cfg.wall_thickness_m;
  spec.curvature_per_m = rp.curvature_per_m;
  spec.rng_seed = rp.seed;

  const Eigen::Index tex_rows = cfg.luna.out_depth * geom.pc;
  auto tex = phantom::generate_alveolar_texture(spec, static_cast<int>(tex_rows),
                                                static_cast<int>(geom.width), cfg.dx_m);
  tex = phantom::derecruit_to_target(tex, rp.target_aeration, rp.seed ^ 0xD3C4);

  phantom::MediumModel model = phantom::default_medium_model();
  model.scatter_rel_std = cfg.scatter_rel_std;
  model.scatter_seed = rp.seed ^ 0x5CA7;

  BuiltPhantom out;
  out.assembled = phantom::assemble_medium(tex, spec, model);

  // Training target: per-(row, event) block means of the flat lung texture.
  // Column blocks sit under each event's aperture center; block means keep
  // the window aeration exact.
  out.truth_map.resize(cfg.luna.out_depth, cfg.n_events);
  for (Eigen::Index r = 0; r < cfg.luna.out_depth; ++r)
    for (int e = 0; e < cfg.n_events; ++e) {
      const int c0 = geom.center_col[static_cast<std::size_t>(e)] - geom.pc / 2;
      out.truth_map(r, e) = tex.grid.block(r * geom.pc, c0, geom.pc, geom.pc).mean();
    }
  out.gamma = out.truth_map.mean();

  // Bottom pad below the lung window: plain tissue feeding the absorber.
  auto& m = out.assembled.medium;
  const Eigen::Index H = m.rows(), W = m.cols();
  const Eigen::Index pad = cfg.boundary_width + 6;
  const auto lung = phantom::default_medium_model().lung_tissue;
  m.rho0.conservativeResize(H + pad, W);
  m.c0.conservativeResize(H + pad, W);
  m.beta.conservativeResize(H + pad, W);
  m.atten_class.conservativeResize(H + pad, W);
  m.air_mask.conservativeResize(H + pad, W);
  m.rho0.bottomRows(pad).setConstant(lung.rho0);
  m.c0.bottomRows(pad).setConstant(lung.c0);
  m.beta.bottomRows(pad).setConstant(lung.beta);
  m.atten_class.bottomRows(pad).setConstant(lung.atten_class);
  m.air_mask.bottomRows(pad).setConstant(false);
  out.assembled.chest_wall_mask.conservativeResize(H + pad, W);
  out.assembled.chest_wall_mask.bottomRows(pad).setConstant(false);
  return out;
}

// Chest-wall label in B-mode image coordinates (depth sample x event).
Eigen::ArrayXXd wall_label_image(const PipelineConfig& cfg, const RecordGeometry& geom,
                                 const phantom::AssembledMedium& assembled,
                                 const sequence::RfTensor& rf) {
  Eigen::ArrayXXd label = Eigen::ArrayXXd::Zero(rf.T, cfg.n_events);
  for (int e = 0; e < cfg.n_events; ++e) {
    const double pleura_z =
        (assembled.pleura_row(geom.center_col[static_cast<std::size_t>(e)]) - geom.source_row) *
        cfg.dx_m;
    for (Eigen::Index r = 0; r < rf.T; ++r) {
      const double z = 0.5 * cfg.c_ref * (rf.t0 + static_cast<double>(r) / rf.fs);
      label(r, e) = (z < pleura_z) ? 1.0 : 0.0;
    }
  }
  return label;
}

struct ShardInfo {
  int begin = 0, end = 0;
  fs::path path;
};

std::vector<ShardInfo> find_shards(const fs::path& dir, int index) {
  std::vector<ShardInfo> out;
  if (!fs::exists(dir)) return out;
  char prefix[64];
  std::snprintf(prefix, sizeof(prefix), "rf_%04d.ev", index);
  const std::regex pat(std::string(prefix) + R"((\d+)-(\d+)\.pwt)");
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pat))
      out.push_back({std::stoi(m[1]), std::stoi(m[2]), entry.path()});
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.begin < b.begin; });
  return out;
}

bool merge_shards(const PipelineConfig& cfg, const fs::path& dir, int index,
                  const fs::path& final_path) {
  const auto shards = find_shards(dir, index);
  if (shards.empty()) return false;
  int cursor = 0;
  for (const auto& s : shards) {
    if (s.begin != cursor) return false;
    cursor = s.end;
  }
  if (cursor != cfg.n_events) return false;

  sequence::RfTensor merged;
  bool first = true;
  for (const auto& s : shards) {
    const sequence::RfTensor part = read_rf_file(s.path);
    if (first) {
      merged = part;
      merged.n_events = cfg.n_events;
      merged.data.assign(static_cast<std::size_t>(merged.T * merged.n_rx * cfg.n_events), 0.0);
      merged.focal_depth_m.assign(static_cast<std::size_t>(cfg.n_events),
                                  part.focal_depth_m.empty() ? 0.0 : part.focal_depth_m[0]);
      first = false;
    }
    for (Eigen::Index t = 0; t < merged.T; ++t)
      for (Eigen::Index m = 0; m < merged.n_rx; ++m)
        for (Eigen::Index e = 0; e < part.n_events; ++e)
          merged.at(t, m, e + s.begin) = part.at(t, m, e);
  }
  write_rf_file(final_path, merged, 0);
  return true;
}

}  // namespace

GenerateResult cmd_generate(const PipelineConfig& cfg, const GenerateOptions& opt) {
  cfg.validate();
  const RecordGeometry geom = record_geometry(cfg);
  const fs::path dir = cfg.out_dir / opt.split;
  fs::create_directories(dir);

  const int r_begin = opt.record_begin;
  const int r_end = (opt.record_end < 0) ? opt.n : opt.record_end;
  const int e_begin = opt.event_begin;
  const int e_end = (opt.event_end < 0) ? cfg.n_events : opt.event_end;
  const bool full_events = (e_begin == 0 && e_end == cfg.n_events);

  GenerateResult res;
  res.manifest.split = opt.split;
  std::vector<std::string> failures(static_cast<std::size_t>(std::max(0, r_end - r_begin)));
  std::vector<int> status(static_cast<std::size_t>(std::max(0, r_end - r_begin)), 0);

  const int workers = resolve_workers(cfg.workers);
  parallel_for(r_end - r_begin, workers, [&](int k) {
    const int index = r_begin + k;
    const fs::path rf_path = dir / record_name("rf", index, "pwt");
    const fs::path map_path = dir / record_name("map", index, "pwt");
    const fs::path wall_path = dir / record_name("wall", index, "pwt");
    try {
      if (fs::exists(rf_path) && fs::exists(map_path) && fs::exists(wall_path)) {
        status[static_cast<std::size_t>(k)] = 1;  // resumable skip
        return;
      }
      const RecordParams rp = draw_record_params(cfg, opt.split, index);
      const BuiltPhantom built = build_phantom(cfg, geom, rp);

      if (!fs::exists(rf_path) && !merge_shards(cfg, dir, index, rf_path)) {
        sequence::AcquisitionGeometry ag;
        ag.first_element_col = geom.first_col;
        ag.source_row = geom.source_row;
        const auto relax = cfg.fitted_relaxation();
        const auto rf = sequence::acquire(built.assembled.medium, cfg.transducer(),
                                          rp.pleura_depth_m, cfg.solver_config(), relax, ag,
                                          e_begin, e_end, 1);
        if (full_events) {
          write_rf_file(rf_path, rf, 0);
        } else {
          char suffix[48];
          std::snprintf(suffix, sizeof(suffix), "rf_%04d.ev%d-%d.pwt", index, e_begin, e_end);
          write_rf_file(dir / suffix, rf, e_begin);
          merge_shards(cfg, dir, index, rf_path);
        }
      }
      if (!fs::exists(rf_path)) {
        status[static_cast<std::size_t>(k)] = 2;  // shard written, record incomplete
        return;
      }

      // truth map + wall label + preview
      {
        TensorFile t = TensorFile::from_matrix(built.truth_map);
        t.meta["gamma"] = built.gamma;
        t.meta["pleura_depth_m"] = rp.pleura_depth_m;
        write_tensor(map_path, t);
      }
      {
        const auto rf = read_rf_file(rf_path);
        const Eigen::ArrayXXd label = wall_label_image(cfg, geom, built.assembled, rf);
        std::vector<std::uint8_t> bytes(static_cast<std::size_t>(label.size()));
        for (Eigen::Index r = 0; r < label.rows(); ++r)
          for (Eigen::Index c = 0; c < label.cols(); ++c)
            bytes[static_cast<std::size_t>(r * label.cols() + c)] =
                label(r, c) > 0.5 ? 1 : 0;
        write_tensor(wall_path, TensorFile::from_u8({label.rows(), label.cols()}, bytes));
      }
      if (opt.previews)
        write_pgm(dir / record_name("map", index, "pgm"), built.truth_map, 0.0, 1.0);
      status[static_cast<std::size_t>(k)] = 0;
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(k)] = e.what();
      status[static_cast<std::size_t>(k)] = 3;
    }
  });

  for (int k = 0; k < r_end - r_begin; ++k) {
    const int index = r_begin + k;
    switch (status[static_cast<std::size_t>(k)]) {
      case 0: ++res.generated; break;
      case 1: ++res.skipped; break;
      case 2: break;  // shard only
      case 3:
        ++res.failed;
        std::cerr << "record " << index << " failed: " << failures[static_cast<std::size_t>(k)]
                  << "\n";
        continue;
    }
    const fs::path rf_path = dir / record_name("rf", index, "pwt");
    const fs::path map_path = dir / record_name("map", index, "pwt");
    if (!fs::exists(rf_path) || !fs::exists(map_path)) continue;
    const RecordParams rp = draw_record_params(cfg, opt.split, index);
    RecordEntry e;
    e.index = index;
    e.rf_path = record_name("rf", index, "pwt");
    e.map_path = record_name("map", index, "pwt");
    e.wall_path = record_name("wall", index, "pwt");
    e.gamma = read_tensor(map_path).meta.value("gamma", 0.0);
    e.pleura_depth_m = rp.pleura_depth_m;
    e.seed = rp.seed;
    res.manifest.records.push_back(e);
  }
  save_manifest(dir / "manifest.json", res.manifest);
  return res;
}

void cmd_beamform(const PipelineConfig& cfg, const fs::path& rf_path, const fs::path& out_base) {
  const auto rf = read_rf_file(rf_path);
  const auto img = beamform::bmode_pipeline(rf, cfg.c_ref);
  {
    std::vector<float> payload(static_cast<std::size_t>(img.img.size()));
    for (Eigen::Index r = 0; r < img.img.rows(); ++r)
      for (Eigen::Index c = 0; c < img.img.cols(); ++c)
        payload[static_cast<std::size_t>(r * img.img.cols() + c)] =
            static_cast<float>(img.img(r, c));
    TensorFile t = TensorFile::from_f32({img.img.rows(), img.img.cols()}, payload);
    t.meta["axial_pitch_m"] = img.axial_pitch_m;
    t.meta["lateral_pitch_m"] = img.lateral_pitch_m;
    t.meta["db_range"] = std::vector<double>{-60.0, 0.0};
    write_tensor(fs::path(out_base.string() + ".pwt"), t);
  }
  write_pgm(fs::path(out_base.string() + ".pgm"), img.img, -60.0, 0.0);
  const auto up = beamform::upsample_display(img, 4);
  write_pgm(fs::path(out_base.string() + "_x4.pgm"), up.img, -60.0, 0.0);
}

namespace {

struct LoadedRecord {
  RecordEntry entry;
  std::vector<float> rf;          // [T, n_rx, n_events]
  Eigen::ArrayXXd truth_map;      // out_depth x n_events
  Eigen::ArrayXXd wall_label;     // T x n_events (0/1)
  nop::Tensor bmode;              // [1, S, S] normalized to [0, 1]
  nop::Tensor seg_label;          // [S*S] 0/1 (1 = chest wall)
  Eigen::ArrayXd wall_profile;    // per event, normalized depth
  double rf_t0 = 0.0, rf_fs = 0.0;
};

nop::Tensor rf_tensor_of(const LoadedRecord& rec, const PipelineConfig& cfg) {
  nop::Tensor t({cfg.luna.T, cfg.n_active, cfg.n_events});
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = rec.rf[static_cast<std::size_t>(i)];
  return t;
}

// The reconstruction consumes delayed RF: per-receiver time-of-flight
// compensation applied, no summation.
nop::Tensor delayed_rf_tensor(const LoadedRecord& rec, const PipelineConfig& cfg,
                              const nop::Tensor& rf_raw) {
  sequence::RfTensor rf;
  rf.T = cfg.luna.T;
  rf.n_rx = cfg.n_active;
  rf.n_events = cfg.n_events;
  rf.data.assign(rf_raw.data.data(), rf_raw.data.data() + rf_raw.size());
  rf.fs = rec.rf_fs;
  rf.t0 = rec.rf_t0;
  rf.pitch_m = cfg.pitch_m;
  rf.f_c = cfg.f_c;
  const auto delayed = beamform::apply_delays(rf, cfg.c_ref);
  nop::Tensor out(rf_raw.shape);
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out.data(i) = delayed.rf.data[static_cast<std::size_t>(i)];
  return out;
}

std::vector<LoadedRecord> load_records(const PipelineConfig& cfg, const fs::path& manifest_path) {
  const DatasetManifest m = load_manifest(manifest_path);
  if (m.records.empty()) throw Error("bad-manifest", "manifest has no records");
  const fs::path base = manifest_path.parent_path();
  std::vector<LoadedRecord> out(m.records.size());
  const int workers = resolve_workers(cfg.workers);
  parallel_for(static_cast<int>(m.records.size()), workers, [&](int i) {
    LoadedRecord rec;
    rec.entry = m.records[static_cast<std::size_t>(i)];
    const auto rf_file = read_tensor(base / rec.entry.rf_path);
    if (rf_file.dims != std::vector<std::int64_t>{cfg.luna.T, cfg.n_active, cfg.n_events})
      throw Error("bad-manifest", "rf dims mismatch in " + rec.entry.rf_path);
    rec.rf = rf_file.as_f32();
    rec.rf_t0 = rf_file.meta.value("t0", 0.0);
    rec.rf_fs = rf_file.meta.value("fs", cfg.fs_out);
    rec.truth_map = read_tensor(base / rec.entry.map_path).as_matrix();
    if (!rec.entry.wall_path.empty())
      rec.wall_label = read_tensor(base / rec.entry.wall_path).as_matrix();

    // B-mode input for segmentation: log-compressed image mapped to [0, 1].
    sequence::RfTensor rf = read_rf_file(base / rec.entry.rf_path);
    const auto img = beamform::bmode_pipeline(rf, cfg.c_ref);
    const Eigen::ArrayXXd norm = (img.img + 60.0) / 60.0;
    const Eigen::Index S = cfg.seg.image_size;
    const Eigen::ArrayXXd resized = nop::resize_bilinear(norm, S, S);
    rec.bmode = nop::Tensor({1, S, S});
    for (Eigen::Index r = 0; r < S; ++r)
      for (Eigen::Index c = 0; c < S; ++c) rec.bmode.data(r * S + c) = resized(r, c);
    if (rec.wall_label.size() > 0) {
      const Eigen::ArrayXXd lab = nop::resize_bilinear(rec.wall_label, S, S);
      rec.seg_label = nop::Tensor({S * S});
      for (Eigen::Index r = 0; r < S; ++r)
        for (Eigen::Index c = 0; c < S; ++c)
          rec.seg_label.data(r * S + c) = lab(r, c) > 0.5 ? 1.0 : 0.0;
    }
    out[static_cast<std::size_t>(i)] = std::move(rec);
  });
  return out;
}

Eigen::ArrayXd profile_from_seg(const PipelineConfig& cfg, const Eigen::ArrayXXd& wall_prob) {
  const Eigen::ArrayXd rows = nop::pleural_line_rows(wall_prob);
  const Eigen::Index S = cfg.seg.image_size;
  Eigen::ArrayXd profile(cfg.n_events);
  for (int e = 0; e < cfg.n_events; ++e) {
    const double col = (e + 0.5) * static_cast<double>(S) / cfg.n_events - 0.5;
    const auto c0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(col)), 0, S - 1);
    const auto c1 = std::min<Eigen::Index>(c0 + 1, S - 1);
    const double w = std::clamp(col - static_cast<double>(c0), 0.0, 1.0);
    profile(e) = ((1.0 - w) * rows(c0) + w * rows(c1)) / static_cast<double>(S);
  }
  return profile;
}

void compute_wall_profiles(const PipelineConfig& cfg, const nop::ParamStore& store,
                           const nop::SegParams& seg, std::vector<LoadedRecord>& records) {
  const int workers = resolve_workers(cfg.workers);
  parallel_for(static_cast<int>(records.size()), workers, [&](int i) {
    auto& rec = records[static_cast<std::size_t>(i)];
    const Eigen::ArrayXXd prob = nop::segnet_infer(store, seg, rec.bmode);
    rec.wall_profile = profile_from_seg(cfg, prob);
  });
}

void shuffle_indices(std::vector<int>& idx, CounterRng rng) {
  for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
    const auto j = i + rng.next_below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
}

void train_segnet(const PipelineConfig& cfg, nop::ParamStore& store, const nop::SegParams& seg,
                  std::vector<LoadedRecord>& records, int epochs, int steps_cap = -1) {
  nop::TrainConfig sc;
  sc.lr = cfg.seg_lr;
  sc.beta1 = 0.9;
  sc.beta2 = 0.999;
  nop::AdamState adam;
  const int seg_batch = 4;
  const int workers = resolve_workers(cfg.workers);
  const Eigen::Index S = cfg.seg.image_size;
  int steps = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<int> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    shuffle_indices(order, CounterRng(cfg.seed, 0x5E6E + static_cast<std::uint64_t>(epoch)));
    for (std::size_t b = 0; b < order.size(); b += seg_batch) {
      const int nb = static_cast<int>(std::min<std::size_t>(seg_batch, order.size() - b));
      std::vector<std::vector<nop::Tensor>> grads(static_cast<std::size_t>(nb));
      parallel_for(nb, workers, [&](int s) {
        const auto& rec = records[static_cast<std::size_t>(order[b + static_cast<std::size_t>(s)])];
        nop::Tape tape(store);
        auto out = nop::segnet_forward(tape, seg, rec.bmode);
        auto loss = tape.scale(tape.ce2_sum(out, rec.seg_label),
                               1.0 / static_cast<double>(S * S));
        tape.backward(loss);
        grads[static_cast<std::size_t>(s)] = std::move(tape.param_grads);
      });
      std::vector<nop::Tensor> total = store.zero_grads();
      for (int s = 0; s < nb; ++s)
        for (std::size_t p = 0; p < total.size(); ++p)
          if (grads[static_cast<std::size_t>(s)][p].size() > 0)
            total[p].data += grads[static_cast<std::size_t>(s)][p].data;
      nop::adam_step(store, total, sc, adam);
      if (steps_cap > 0 && ++steps >= steps_cap) return;
    }
  }
}

struct EpochStats {
  double ce = 0.0, gamma = 0.0;
};

EpochStats train_luna_epoch(const PipelineConfig& cfg, nop::ParamStore& store,
                            const nop::LunaParams& luna, std::vector<LoadedRecord>& records,
                            const nop::TrainConfig& tc, nop::AdamState& adam, int epoch,
                            bool fine_tune) {
  const int workers = resolve_workers(cfg.workers);
  std::vector<int> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  shuffle_indices(order, CounterRng(cfg.seed, 0xE90C + static_cast<std::uint64_t>(epoch)));

  EpochStats stats;
  for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(tc.batch)) {
    const int nb = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(tc.batch),
                                                          order.size() - b));
    std::vector<std::vector<nop::Tensor>> grads(static_cast<std::size_t>(nb));
    std::vector<nop::LossParts> parts(static_cast<std::size_t>(nb));
    parallel_for(nb, workers, [&](int s) {
      const int ri = order[b + static_cast<std::size_t>(s)];
      const auto& rec = records[static_cast<std::size_t>(ri)];
      CounterRng aug_rng(cfg.seed, 0xA06000ULL + static_cast<std::uint64_t>(epoch) * 65537ULL +
                                       static_cast<std::uint64_t>(rec.entry.index));
      const nop::Tensor rf = nop::augment(rf_tensor_of(rec, cfg), tc, aug_rng);
      const auto feat = nop::temporal_fourier_features(delayed_rf_tensor(rec, cfg, rf));
      nop::Tensor truth({cfg.luna.out_depth, cfg.n_events});
      for (Eigen::Index r = 0; r < cfg.luna.out_depth; ++r)
        for (Eigen::Index c = 0; c < cfg.n_events; ++c)
          truth.data(r * cfg.n_events + c) = rec.truth_map(r, c);
      nop::Tape tape(store);
      auto pred = nop::luna_forward(tape, luna, feat, rec.wall_profile);
      auto loss = nop::loss_total(tape, pred, truth, rec.entry.gamma, tc.eta, fine_tune,
                                  &parts[static_cast<std::size_t>(s)]);
      tape.backward(loss);
      grads[static_cast<std::size_t>(s)] = std::move(tape.param_grads);
    });
    std::vector<nop::Tensor> total = store.zero_grads();
    for (int s = 0; s < nb; ++s) {
      for (std::size_t p = 0; p < total.size(); ++p)
        if (grads[static_cast<std::size_t>(s)][p].size() > 0)
          total[p].data += grads[static_cast<std::size_t>(s)][p].data;
      stats.ce += parts[static_cast<std::size_t>(s)].ce;
      stats.gamma += parts[static_cast<std::size_t>(s)].gamma_term;
    }
    nop::adam_step(store, total, tc, adam);
  }
  stats.ce /= static_cast<double>(records.size());
  stats.gamma /= static_cast<double>(records.size());
  return stats;
}

double val_gamma_mae(const PipelineConfig& cfg, const nop::ParamStore& store,
                     const nop::LunaParams& luna, std::vector<LoadedRecord>& records) {
  const int workers = resolve_workers(cfg.workers);
  std::vector<double> errs(records.size(), 0.0);
  parallel_for(static_cast<int>(records.size()), workers, [&](int i) {
    auto& rec = records[static_cast<std::size_t>(i)];
    const auto rf = rf_tensor_of(rec, cfg);
    const auto pred =
        nop::luna_infer(store, luna, delayed_rf_tensor(rec, cfg, rf), rec.wall_profile);
    errs[static_cast<std::size_t>(i)] = std::abs(pred.mean() - rec.entry.gamma);
  });
  double s = 0.0;
  for (double e : errs) s += e;
  return s / static_cast<double>(records.size());
}

TrainResult run_training(const PipelineConfig& cfg, const fs::path& manifest_path,
                         const std::optional<fs::path>& val_manifest, Checkpoint ck,
                         bool fine_tune, int epochs, const char* ckpt_stem) {
  auto records = load_records(cfg, manifest_path);
  if (!fine_tune) {
    // Stage one: the chest-wall segmenter that feeds the wall channel.
    bool have_labels = true;
    for (const auto& r : records) have_labels = have_labels && r.seg_label.size() > 0;
    if (have_labels) train_segnet(cfg, ck.store, ck.seg, records, cfg.seg_epochs);
  }
  compute_wall_profiles(cfg, ck.store, ck.seg, records);

  std::vector<LoadedRecord> val_records;
  if (val_manifest) {
    val_records = load_records(cfg, *val_manifest);
    compute_wall_profiles(cfg, ck.store, ck.seg, val_records);
  }

  const nop::TrainConfig tc = cfg.train_config();
  nop::AdamState adam;
  fs::create_directories(cfg.out_dir);
  TrainResult res;
  res.loss_csv = cfg.out_dir / (std::string(ckpt_stem) + "_loss.csv");
  std::ofstream log(res.loss_csv, std::ios::trunc);
  log << "epoch,ce,gamma_term,val_mae\n";
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const EpochStats st = train_luna_epoch(cfg, ck.store, ck.luna, records, tc, adam, epoch,
                                           fine_tune);
    res.epoch_loss.push_back(st.ce + st.gamma);
    char buf[128];
    if (!val_records.empty()) {
      const double mae = val_gamma_mae(cfg, ck.store, ck.luna, val_records);
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", epoch, st.ce, st.gamma, mae);
    } else {
      std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,\n", epoch, st.ce, st.gamma);
    }
    log << buf;
    log.flush();
  }
  res.checkpoint = cfg.out_dir / (std::string(ckpt_stem) + ".pwt");
  save_checkpoint(res.checkpoint, ck);
  return res;
}

}  // namespace

TrainResult cmd_train(const PipelineConfig& cfg, const fs::path& manifest_path,
                      const std::optional<fs::path>& val_manifest) {
  cfg.validate();
  Checkpoint ck;
  ck.cfg = cfg;
  ck.luna = nop::init_luna(ck.store, cfg.luna, CounterRng(cfg.seed, 0x10A0));
  const auto luna_scalars = ck.store.total_scalars();
  ck.seg = nop::init_segnet(ck.store, cfg.seg, CounterRng(cfg.seed, 0x5E60));
  std::cout << "parameters: reconstruction " << luna_scalars << ", segmentation "
            << ck.store.total_scalars() - luna_scalars << "\n";
  return run_training(cfg, manifest_path, val_manifest, std::move(ck), false,
                      cfg.epochs_pretrain, "checkpoint");
}

TrainResult cmd_finetune(const PipelineConfig& cfg, const fs::path& checkpoint,
                         const fs::path& manifest_path) {
  cfg.validate();
  Checkpoint ck = load_checkpoint(checkpoint);
  return run_training(cfg, manifest_path, std::nullopt, std::move(ck), true,
                      cfg.epochs_finetune, "checkpoint_ft");
}

InferResult cmd_infer(const PipelineConfig& cfg, const fs::path& checkpoint,
                      const fs::path& manifest_path) {
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint);
  auto records = load_records(cfg, manifest_path);
  compute_wall_profiles(cfg, ck.store, ck.seg, records);
  const fs::path dir = cfg.out_dir / "predictions";
  fs::create_directories(dir);

  InferResult res;
  res.pred_paths.resize(records.size());
  std::vector<double> gammas(records.size());
  const int workers = resolve_workers(cfg.workers);
  nop::PlattFit platt;
  platt.a = ck.platt_a;
  platt.b = ck.platt_b;
  parallel_for(static_cast<int>(records.size()), workers, [&](int i) {
    auto& rec = records[static_cast<std::size_t>(i)];
    const auto rf = rf_tensor_of(rec, cfg);
    Eigen::ArrayXXd pred =
        nop::luna_infer(ck.store, ck.luna, delayed_rf_tensor(rec, cfg, rf), rec.wall_profile);
    pred = nop::platt_apply(pred, platt);
    const fs::path p = dir / record_name("pred", rec.entry.index, "pwt");
    TensorFile t = TensorFile::from_matrix(pred);
    t.meta["gamma_pred"] = pred.mean();
    t.meta["record_index"] = rec.entry.index;
    write_tensor(p, t);
    res.pred_paths[static_cast<std::size_t>(i)] = p;
    gammas[static_cast<std::size_t>(i)] = pred.mean();
  });

  res.gamma_csv = dir / "gamma.csv";
  std::ofstream csv(res.gamma_csv, std::ios::trunc);
  csv << "index,gamma_pred,gamma_truth\n";
  for (std::size_t i = 0; i < records.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g\n", records[i].entry.index, gammas[i],
                  records[i].entry.gamma);
    csv << buf;
  }
  return res;
}

metrics::EvalReport cmd_evaluate(const PipelineConfig& cfg, const fs::path& manifest_path,
                                 const fs::path& pred_dir) {
  cfg.validate();
  const DatasetManifest m = load_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  metrics::EvalReport rep;
  for (const auto& e : m.records) {
    const Eigen::ArrayXXd truth = read_tensor(base / e.map_path).as_matrix();
    const fs::path pred_path = pred_dir / record_name("pred", e.index, "pwt");
    const Eigen::ArrayXXd pred = read_tensor(pred_path).as_matrix();
    metrics::SampleMetrics sm;
    sm.truth_gamma = e.gamma;
    sm.pred_gamma = pred.mean();
    sm.wall_depth_m = e.pleura_depth_m;
    sm.aeration_err = metrics::aeration_error(e.gamma, sm.pred_gamma);
    sm.nmse = metrics::nmse(pred, truth);
    sm.psnr_db = metrics::psnr_db(pred, truth);
    sm.ssim = (pred.rows() >= 11 && pred.cols() >= 11)
                  ? metrics::ssim(pred, truth)
                  : std::numeric_limits<double>::quiet_NaN();
    sm.dice = metrics::dice((pred > 0.5).cast<double>(), (truth > 0.5).cast<double>());
    rep.rows.push_back(sm);
  }

  fs::create_directories(cfg.out_dir);
  std::ofstream csv(cfg.out_dir / "eval.csv", std::ios::trunc);
  csv << "truth_gamma,pred_gamma,wall_depth_m,aeration_err,nmse,psnr_db,ssim,dice\n";
  for (const auto& r : rep.rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.truth_gamma,
                  r.pred_gamma, r.wall_depth_m, r.aeration_err, r.nmse, r.psnr_db, r.ssim,
                  r.dice.value_or(-1.0));
    csv << buf;
  }
  nlohmann::json j;
  j["n"] = rep.rows.size();
  j["aeration_err_mean"] = rep.mean_aeration_err();
  j["aeration_err_sd"] = rep.sd_aeration_err();
  auto dump_groups = [](const std::vector<metrics::GroupStat>& gs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& g : gs)
      arr.push_back({{"lo", g.lo}, {"hi", g.hi}, {"n", g.n}, {"mean", g.mean}, {"sd", g.sd}});
    return arr;
  };
  j["by_aeration_decile"] = dump_groups(rep.by_aeration_decile());
  j["by_wall_depth"] = dump_groups(rep.by_wall_depth());
  std::ofstream js(cfg.out_dir / "eval.json", std::ios::trunc);
  js << j.dump(2) << "\n";
  return rep;
}

CalibrateResult cmd_calibrate(const PipelineConfig& cfg, const fs::path& checkpoint,
                              const fs::path& manifest_path) {
  cfg.validate();
  Checkpoint ck = load_checkpoint(checkpoint);
  auto records = load_records(cfg, manifest_path);
  compute_wall_profiles(cfg, ck.store, ck.seg, records);

  std::vector<double> preds, truths;
  for (auto& rec : records) {
    const auto rf = rf_tensor_of(rec, cfg);
    const auto pred =
        nop::luna_infer(ck.store, ck.luna, delayed_rf_tensor(rec, cfg, rf), rec.wall_profile);
    for (Eigen::Index r = 0; r < pred.rows(); ++r)
      for (Eigen::Index c = 0; c < pred.cols(); ++c) {
        preds.push_back(pred(r, c));
        truths.push_back(rec.truth_map(r, c) > 0.5 ? 1.0 : 0.0);
      }
  }
  Eigen::ArrayXd p = Eigen::Map<Eigen::ArrayXd>(preds.data(), static_cast<Eigen::Index>(preds.size()));
  Eigen::ArrayXd t = Eigen::Map<Eigen::ArrayXd>(truths.data(), static_cast<Eigen::Index>(truths.size()));
  const auto fit = nop::platt_calibrate(p, t);
  ck.platt_a = fit.a;
  ck.platt_b = fit.b;
  save_checkpoint(checkpoint, ck);
  return {fit.a, fit.b, fit.ece_before, fit.ece_after};
}

double segnet_overfit_dice(const PipelineConfig& cfg, const fs::path& manifest_path, int steps) {
  cfg.validate();
  auto records = load_records(cfg, manifest_path);
  nop::ParamStore store;
  const nop::SegParams seg = nop::init_segnet(store, cfg.seg, CounterRng(cfg.seed, 0x0F17));
  train_segnet(cfg, store, seg, records, steps /* epochs cap; steps_cap ends earlier */, steps);
  const Eigen::Index S = cfg.seg.image_size;
  double dice_sum = 0.0;
  for (const auto& rec : records) {
    const Eigen::ArrayXXd prob = nop::segnet_infer(store, seg, rec.bmode);
    Eigen::ArrayXXd pred = (prob >= 0.5).cast<double>();
    Eigen::ArrayXXd truth(S, S);
    for (Eigen::Index r = 0; r < S; ++r)
      for (Eigen::Index c = 0; c < S; ++c) truth(r, c) = rec.seg_label.data(r * S + c);
    dice_sum += metrics::dice(pred, truth);
  }
  return dice_sum / static_cast<double>(records.size());
}

int cmd_selftest(const PipelineConfig& cfg) {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
    if (!ok) ++failures;
  };
  try {
    cfg.validate();
    check("config-valid", true);
  } catch (const std::exception& e) {
    std::cout << "FAIL config-valid: " << e.what() << "\n";
    ++failures;
  }
  // paper-constant regression at scale 1
  const PipelineConfig paper = default_config(1.0);
  check("paper-dx", std::abs(paper.dx_m * 1e6 - 24.68) < 0.01);
  check("paper-dt", paper.dt_s == 8.0e-9);
  check("paper-cfl", std::abs(paper.solver_config().cfl() - 0.5008) < 0.01 * 0.5008);
  check("paper-T", paper.rf_samples() == 1822);
  check("paper-aperture", paper.n_active == 64 && paper.n_events == 128);
  check("paper-decimation", paper.decimation() == 6);
  // tensor round trip
  try {
    const fs::path tmp = fs::temp_directory_path() / "pwt_selftest.pwt";
    std::vector<double> v = {1.0, -2.0, std::numeric_limits<double>::quiet_NaN()};
    write_tensor(tmp, TensorFile::from_f64({3}, v));
    const auto rt = read_tensor(tmp);
    check("tensor-roundtrip", rt.payload == TensorFile::from_f64({3}, v).payload);
    fs::remove(tmp);
  } catch (const std::exception&) {
    check("tensor-roundtrip", false);
  }
  // focusing delays stay mirror symmetric
  const auto tau = sequence::focal_delays(17, 0.01, 0.195e-3, 1540.0);
  bool sym = true;
  for (int i = 0; i < 17; ++i) sym = sym && std::abs(tau(i) - tau(16 - i)) < 1e-15;
  check("delays-symmetric", sym && tau.minCoeff() == 0.0);
  return failures;
}

}  // namespace pwt::pipeline
