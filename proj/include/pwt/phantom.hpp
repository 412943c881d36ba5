// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pwt/rng.hpp"

namespace pwt::phantom {

using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Air/tissue grid. Values in [0,1]; ground-truth maps are strictly {0,1}
/// with 1 = air. Row 0 is the shallowest row.
struct AerationMap {
  Eigen::ArrayXXd grid;  // H x W
  double pitch_m = 0.0;  // isotropic meters per pixel

  Eigen::Index rows() const { return grid.rows(); }
  Eigen::Index cols() const { return grid.cols(); }
};

struct PhantomSpec {
  double target_aeration = 0.5;       // fraction in [0.1, 0.9] when sampled
  double pleura_depth_m = 0.02;       // chest wall thickness
  double alveolus_diameter_m = 94e-6; // mean linear-intercept target
  double alveolus_spread_m = 30e-6;   // site jitter amplitude
  double wall_thickness_m = 16.5e-6;  // alveolar wall (septum) thickness
  double curvature_per_m = 0.0;       // pleural line curvature, 0 = flat
  std::uint64_t rng_seed = 0;
};

/// One chest-wall band. Fractions are normalized over the layer stack and
/// stretched per column to fill the local wall depth.
struct TissueLayer {
  std::string name;
  double fraction = 1.0;
  double c0 = 1540.0;
  double rho0 = 1000.0;
  double beta = 7.0;  // 1 + B/A, B/A = 6 soft-tissue default
  int atten_class = 0;
};

struct MediumModel {
  std::vector<TissueLayer> wall_layers;
  TissueLayer lung_tissue;        // non-air lung parenchyma
  double scatter_rel_std = 0.025; // per-cell density jitter (sub-resolution scatterers)
  std::uint64_t scatter_seed = 1;
};

MediumModel default_medium_model();

/// Per-cell acoustic properties consumed by the solver. All grids share
/// dims; air cells carry background tissue values and are flagged in
/// air_mask (pressure is clamped there, so the values never matter).
struct MediumMap {
  Eigen::ArrayXXd rho0;   // kg/m^3
  Eigen::ArrayXXd c0;     // m/s
  Eigen::ArrayXXd beta;   // 1 + B/A
  Eigen::ArrayXXi atten_class;
  BoolGrid air_mask;
  double pitch_m = 0.0;

  Eigen::Index rows() const { return rho0.rows(); }
  Eigen::Index cols() const { return rho0.cols(); }
};

struct AssembledMedium {
  MediumMap medium;
  BoolGrid chest_wall_mask;             // true above the pleural line
  Eigen::ArrayXd pleura_row;            // per-column first lung row index
  Eigen::Index lung_rows = 0;           // rows of the embedded lung map
};

/// Packed air polygons separated by tissue walls on a jittered lattice.
/// Deterministic in (spec, H, W). Throws "phantom-too-small" when the grid
/// cannot fit a single alveolus.
AerationMap generate_alveolar_texture(const PhantomSpec& spec, int H, int W, double pitch_m);

/// Flips air pixels at air/non-air interfaces (4-neighborhood), pass by
/// pass, until aeration reaches `target` to within 1/(H*W). Targets above
/// the current aeration convert boundary non-air pixels instead.
AerationMap derecruit_to_target(const AerationMap& map, double target, std::uint64_t rng_seed);

/// gamma = sum(grid) / (H*W). Throws "empty-map" on zero-sized input.
double compute_aeration(const AerationMap& map);

/// Per-column mean; length W.
Eigen::ArrayXd column_aeration(const AerationMap& map);

/// Stacks layered chest wall on top of the lung texture, deforming lung
/// columns to conform to the (possibly curved) pleural line.
AssembledMedium assemble_medium(const AerationMap& lung, const PhantomSpec& spec,
                                const MediumModel& model);

/// True iff every value is exactly 0 or 1.
bool is_binary(const AerationMap& map);

}  // namespace pwt::phantom
