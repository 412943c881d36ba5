// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>

#include "pwt/phantom.hpp"
#include "pwt/solver.hpp"

namespace pwt::testutil {

inline phantom::MediumMap homogeneous_medium(Eigen::Index H, Eigen::Index W, double dx,
                                             double c0 = 1540.0, double rho0 = 1000.0,
                                             double beta = 7.0) {
  phantom::MediumMap m;
  m.pitch_m = dx;
  m.rho0.setConstant(H, W, rho0);
  m.c0.setConstant(H, W, c0);
  m.beta.setConstant(H, W, beta);
  m.atten_class.setConstant(H, W, 0);
  m.air_mask.setConstant(H, W, false);
  return m;
}

/// Gaussian-windowed tone, zero-padded to n samples.
inline Eigen::ArrayXd tone_burst(double f_c, double n_cycles, double dt, Eigen::Index n,
                                 double amp = 1.0) {
  Eigen::ArrayXd w = Eigen::ArrayXd::Zero(n);
  const double dur = n_cycles / f_c;
  const double sigma = dur / 6.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = i * dt;
    if (t > dur) break;
    const double env = std::exp(-0.5 * std::pow((t - 0.5 * dur) / sigma, 2));
    w(i) = amp * env * std::sin(2.0 * std::numbers::pi * f_c * t);
  }
  return w;
}

/// Plane one-way pulse travelling toward increasing depth: p(z,0) is a
/// Gaussian envelope times an optional carrier, vy set from the +z
/// characteristic relation at the half-step offset.
inline void init_downward_plane_pulse(solver::WaveState& s, const phantom::MediumMap& m,
                                      const solver::SolverConfig& cfg, double z0_cells,
                                      double sigma_cells, double amp = 1.0,
                                      double f_carrier = 0.0) {
  const double c = m.c0(0, 0);
  const double rho = 1000.0;  // characteristic from nominal density (scatter-free fixtures)
  const double Z = rho * c;
  const double shift = 0.5 * cfg.dt_s * c / cfg.dx_m;  // v lives at t = -dt/2
  const double k_cell = 2.0 * std::numbers::pi * f_carrier * cfg.dx_m / c;
  auto wave = [&](double z_cells) {
    const double u = (z_cells - z0_cells) / sigma_cells;
    const double carrier = (f_carrier > 0.0) ? std::sin(k_cell * (z_cells - z0_cells)) : 1.0;
    return amp * std::exp(-0.5 * u * u) * carrier;
  };
  for (Eigen::Index r = 0; r < s.p.rows(); ++r) s.p.row(r).setConstant(wave(static_cast<double>(r)));
  for (Eigen::Index r = 0; r < s.vy.rows(); ++r)
    s.vy.row(r).setConstant(wave(static_cast<double>(r) + 0.5 + shift) / Z);
}

/// Index of the first sample whose magnitude crosses frac * max, linearly
/// interpolated between samples.
inline double crossing_time(const Eigen::ArrayXd& env, double frac) {
  const double thr = frac * env.maxCoeff();
  for (Eigen::Index i = 1; i < env.size(); ++i) {
    if (env(i) >= thr && env(i - 1) < thr) {
      const double t = (thr - env(i - 1)) / (env(i) - env(i - 1));
      return static_cast<double>(i - 1) + t;
    }
  }
  return -1.0;
}

}  // namespace pwt::testutil
