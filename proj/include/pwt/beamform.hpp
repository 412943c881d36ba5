// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include "pwt/sequence.hpp"

namespace pwt::beamform {

/// Log-compressed envelope image in dB, range [-60, 0].
struct BModeImage {
  Eigen::ArrayXXd img;  // depth x lateral
  double axial_pitch_m = 0.0;
  double lateral_pitch_m = 0.0;
};

/// Per-receiver delay-compensated traces, same shape as the source tensor.
struct DelayedRf {
  sequence::RfTensor rf;
};

/// Dynamic receive focusing: tau_m(z) = (sqrt(z^2 + x_m^2) - z) / c_ref in
/// samples at fs. Depth follows the two-way mapping z = c (t0 + n/fs) / 2,
/// clamped at zero.
Eigen::ArrayXXd receive_delays(Eigen::Index depth_samples, const Eigen::ArrayXd& elem_offsets_m,
                               double c_ref, double fs, double t0 = 0.0);

/// Delay-and-sum per event with linear inter-sample interpolation;
/// out-of-range samples contribute zero. Output is depth x events.
Eigen::ArrayXXd das_sum(const sequence::RfTensor& rf, double c_ref = 1540.0);

/// Per-receiver delayed (unsummed) representation; summing over receivers
/// reproduces das_sum exactly.
DelayedRf apply_delays(const sequence::RfTensor& rf, double c_ref = 1540.0);

/// Analytic-signal magnitude along depth, one line per event.
Eigen::ArrayXXd envelope_lines(const Eigen::ArrayXXd& lines);

/// 20 log10(env / max), clamped to [-dynamic_range, 0]; an all-zero input
/// maps to -dynamic_range everywhere.
BModeImage log_compress(const Eigen::ArrayXXd& env, double axial_pitch_m, double lateral_pitch_m,
                        double dynamic_range_db = 60.0);

/// Separable Catmull-Rom bicubic interpolation; output dims scale by
/// `factor`. Linear edge extrapolation keeps linear fields exact.
BModeImage upsample_display(const BModeImage& img, int factor = 4);

/// Full conventional pipeline: das -> envelope -> log-compress.
BModeImage bmode_pipeline(const sequence::RfTensor& rf, double c_ref = 1540.0,
                          double dynamic_range_db = 60.0);

}  // namespace pwt::beamform
