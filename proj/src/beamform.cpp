// SPDX-License-Identifier: Apache-2.0
#include "pwt/beamform.hpp"

#include <cmath>

#include "pwt/error.hpp"
#include "pwt/fftutil.hpp"

namespace pwt::beamform {

namespace {

// Linear interpolation at a fractional sample index; out-of-range samples
// contribute zero.
double sample_at(const sequence::RfTensor& rf, double t_frac, Eigen::Index m, Eigen::Index e) {
  const auto i0 = static_cast<Eigen::Index>(std::floor(t_frac));
  const double frac = t_frac - static_cast<double>(i0);
  double v = 0.0;
  if (i0 >= 0 && i0 < rf.T) v += (1.0 - frac) * rf.at(i0, m, e);
  if (i0 + 1 >= 0 && i0 + 1 < rf.T && frac != 0.0) v += frac * rf.at(i0 + 1, m, e);
  return v;
}

Eigen::ArrayXd centered_offsets(Eigen::Index n_rx, double pitch_m) {
  Eigen::ArrayXd x(n_rx);
  const double mid = 0.5 * static_cast<double>(n_rx - 1);
  for (Eigen::Index m = 0; m < n_rx; ++m) x(m) = (static_cast<double>(m) - mid) * pitch_m;
  return x;
}

}  // namespace

Eigen::ArrayXXd receive_delays(Eigen::Index depth_samples, const Eigen::ArrayXd& elem_offsets_m,
                               double c_ref, double fs, double t0) {
  Eigen::ArrayXXd tau(depth_samples, elem_offsets_m.size());
  for (Eigen::Index n = 0; n < depth_samples; ++n) {
    const double z = std::max(0.0, 0.5 * c_ref * (t0 + static_cast<double>(n) / fs));
    for (Eigen::Index m = 0; m < elem_offsets_m.size(); ++m) {
      const double x = elem_offsets_m(m);
      tau(n, m) = (std::hypot(z, x) - z) / c_ref * fs;
    }
  }
  return tau;
}

Eigen::ArrayXXd das_sum(const sequence::RfTensor& rf, double c_ref) {
  const Eigen::ArrayXd x = centered_offsets(rf.n_rx, rf.pitch_m);
  const Eigen::ArrayXXd tau = receive_delays(rf.T, x, c_ref, rf.fs, rf.t0);
  Eigen::ArrayXXd out = Eigen::ArrayXXd::Zero(rf.T, rf.n_events);
  for (Eigen::Index e = 0; e < rf.n_events; ++e)
    for (Eigen::Index n = 0; n < rf.T; ++n) {
      double acc = 0.0;
      for (Eigen::Index m = 0; m < rf.n_rx; ++m)
        acc += sample_at(rf, static_cast<double>(n) + tau(n, m), m, e);
      out(n, e) = acc;
    }
  return out;
}

DelayedRf apply_delays(const sequence::RfTensor& rf, double c_ref) {
  const Eigen::ArrayXd x = centered_offsets(rf.n_rx, rf.pitch_m);
  const Eigen::ArrayXXd tau = receive_delays(rf.T, x, c_ref, rf.fs, rf.t0);
  DelayedRf out;
  out.rf = rf;
  for (Eigen::Index e = 0; e < rf.n_events; ++e)
    for (Eigen::Index n = 0; n < rf.T; ++n)
      for (Eigen::Index m = 0; m < rf.n_rx; ++m)
        out.rf.at(n, m, e) = sample_at(rf, static_cast<double>(n) + tau(n, m), m, e);
  return out;
}

Eigen::ArrayXXd envelope_lines(const Eigen::ArrayXXd& lines) {
  if (lines.rows() < 8) throw Error("bad-beamform-input", "need at least 8 depth samples");
  Eigen::ArrayXXd out(lines.rows(), lines.cols());
  for (Eigen::Index c = 0; c < lines.cols(); ++c) out.col(c) = envelope(lines.col(c));
  return out;
}

BModeImage log_compress(const Eigen::ArrayXXd& env, double axial_pitch_m, double lateral_pitch_m,
                        double dynamic_range_db) {
  if ((env < 0.0).any()) throw Error("bad-beamform-input", "envelope must be nonnegative");
  BModeImage out;
  out.axial_pitch_m = axial_pitch_m;
  out.lateral_pitch_m = lateral_pitch_m;
  const double peak = env.maxCoeff();
  if (peak <= 0.0) {
    out.img = Eigen::ArrayXXd::Constant(env.rows(), env.cols(), -dynamic_range_db);
    return out;
  }
  out.img = (20.0 * (env / peak).max(1e-300).log10()).max(-dynamic_range_db).min(0.0);
  return out;
}

namespace {

// Catmull-Rom weights for fractional position t in [0,1).
void catmull_rom(double t, double w[4]) {
  const double t2 = t * t, t3 = t2 * t;
  w[0] = -0.5 * t3 + t2 - 0.5 * t;
  w[1] = 1.5 * t3 - 2.5 * t2 + 1.0;
  w[2] = -1.5 * t3 + 2.0 * t2 + 0.5 * t;
  w[3] = 0.5 * t3 - 0.5 * t2;
}

// Sample with linear extrapolation past the ends (keeps ramps exact).
double tap(const Eigen::ArrayXd& v, Eigen::Index i) {
  const Eigen::Index n = v.size();
  if (i < 0) return 2.0 * v(0) - v(std::min<Eigen::Index>(-i, n - 1));
  if (i >= n) return 2.0 * v(n - 1) - v(std::max<Eigen::Index>(2 * n - 2 - i, 0));
  return v(i);
}

Eigen::ArrayXd upsample_vec(const Eigen::ArrayXd& v, int factor) {
  const Eigen::Index n_out = v.size() * factor;
  Eigen::ArrayXd out(n_out);
  double w[4];
  for (Eigen::Index o = 0; o < n_out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const auto i0 = static_cast<Eigen::Index>(std::floor(src));
    catmull_rom(src - static_cast<double>(i0), w);
    out(o) = w[0] * tap(v, i0 - 1) + w[1] * tap(v, i0) + w[2] * tap(v, i0 + 1) +
             w[3] * tap(v, i0 + 2);
  }
  return out;
}

}  // namespace

BModeImage upsample_display(const BModeImage& img, int factor) {
  if (factor < 1) throw Error("bad-beamform-input", "factor must be >= 1");
  if (factor == 1) return img;
  BModeImage out;
  out.axial_pitch_m = img.axial_pitch_m / factor;
  out.lateral_pitch_m = img.lateral_pitch_m / factor;
  // separable passes: rows (depth) then columns (lateral)
  Eigen::ArrayXXd tmp(img.img.rows() * factor, img.img.cols());
  for (Eigen::Index c = 0; c < img.img.cols(); ++c)
    tmp.col(c) = upsample_vec(img.img.col(c), factor);
  out.img.resize(tmp.rows(), tmp.cols() * factor);
  for (Eigen::Index r = 0; r < tmp.rows(); ++r)
    out.img.row(r) = upsample_vec(tmp.row(r).transpose(), factor).transpose();
  return out;
}

BModeImage bmode_pipeline(const sequence::RfTensor& rf, double c_ref, double dynamic_range_db) {
  const Eigen::ArrayXXd lines = das_sum(rf, c_ref);
  const Eigen::ArrayXXd env = envelope_lines(lines);
  return log_compress(env, 0.5 * c_ref / rf.fs, rf.pitch_m, dynamic_range_db);
}

}  // namespace pwt::beamform
