// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "pwt/phantom.hpp"
#include "pwt/solver.hpp"

namespace pwt::sequence {

/// Linear-array acquisition geometry. Paper-scale defaults: 5.2 MHz center,
/// 0.195 mm pitch, walking 64-element aperture over 128 events, RF sampled
/// at 20.8 MHz for 87.6 us. A scale factor s divides f_c and multiplies
/// dx/dt, holding 12 points per wavelength and CFL.
struct TransducerSpec {
  int n_elements_total = 191;  // covers the walking aperture span
  double pitch_m = 0.195e-3;
  double f_c = 5.2e6;
  double frac_bandwidth = 0.70;
  double fs_out = 20.8e6;
  int n_active = 64;
  int n_events = 128;
  double source_pressure_pa = 2.5e6;  // 2-cycle pulse amplitude

  void validate() const;  // Nyquist and aperture bounds
};

struct TransmitEvent {
  int event_index = 0;
  int first_element = 0;  // active range [first_element, first_element + n_active)
  double focal_depth_m = 0.0;
  Eigen::ArrayXd delays_s;   // per active element, min exactly 0
  Eigen::ArrayXd pulse;      // waveform at solver dt
  double pulse_center_s = 0.0;
};

/// Received traces, time x receiver x event (row-major on disk, f32).
struct RfTensor {
  Eigen::Index T = 0, n_rx = 0, n_events = 0;
  std::vector<double> data;  // [t][m][e]
  double fs = 0.0;
  double t0 = 0.0;  // two-way time of sample 0 (transmit lag compensated)
  double pitch_m = 0.0;
  double f_c = 0.0;
  std::vector<double> focal_depth_m;  // per event

  double& at(Eigen::Index t, Eigen::Index m, Eigen::Index e) {
    return data[static_cast<std::size_t>((t * n_rx + m) * n_events + e)];
  }
  double at(Eigen::Index t, Eigen::Index m, Eigen::Index e) const {
    return data[static_cast<std::size_t>((t * n_rx + m) * n_events + e)];
  }
  /// One receiver trace as a dense column.
  Eigen::ArrayXd trace(Eigen::Index m, Eigen::Index e) const;
};

/// Hann-windowed n-cycle sinusoid at f_c sampled at dt; -6 dB fractional
/// bandwidth lands in [0.6, 0.8] for the default two cycles. Throws when dt
/// cannot resolve f_c (less than 10 samples per cycle).
Eigen::ArrayXd synth_pulse(double f_c, double n_cycles, double frac_bandwidth, double dt,
                           double amplitude = 1.0);

/// Geometric focusing delays for a contiguous aperture: the edge elements
/// (longest path) fire first, min delay is exactly 0.
Eigen::ArrayXd focal_delays(int n_active, double focal_depth_m, double pitch_m, double c_ref);

struct EventRun {
  Eigen::ArrayXXd traces;  // n_steps x n_active at solver rate
  double pulse_center_s = 0.0;
  double center_delay_s = 0.0;  // transmit delay of the aperture center
};

/// Simulates one transmit-receive event on a laterally cropped window of the
/// medium. Elements map to medium columns via elem_col; traces are recorded
/// at the same fired element cells.
EventRun run_event(const phantom::MediumMap& medium, const TransducerSpec& td,
                   const TransmitEvent& ev, const solver::SolverConfig& cfg,
                   const solver::RelaxParams& relax, const std::vector<int>& elem_col,
                   int source_row);

/// Anti-aliased decimation from the solver rate 1/dt to fs_out. The ratio
/// must be integer within 0.5%; the FIR cutoff sits at 0.45 fs_out.
Eigen::ArrayXd decimate(const Eigen::ArrayXd& x, double fs_in, double fs_out);
Eigen::ArrayXXd decimate_columns(const Eigen::ArrayXXd& x, double fs_in, double fs_out);

struct AcquisitionGeometry {
  int elements_per_column = 1;   // grid columns per element pitch
  int first_element_col = 0;     // medium column of element 0
  int source_row = 2;            // transducer face row
};

/// Walking-aperture acquisition: n_events transmits, the aperture advancing
/// one element pitch per event, focal depth at the pleura. Events are
/// independent; per-event work may run on a caller-provided pool.
RfTensor acquire(const phantom::MediumMap& medium, const TransducerSpec& td,
                 double pleura_depth_m, const solver::SolverConfig& cfg,
                 const solver::RelaxParams& relax, const AcquisitionGeometry& geom,
                 int event_begin = 0, int event_end = -1, int n_workers = 1);

/// Duration -> sample count at the nominal output rate.
Eigen::Index rf_sample_count(double duration_s, double fs_out);

}  // namespace pwt::sequence
