// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace pwt::metrics {

/// |gamma - gamma_hat|.
double aeration_error(double truth_gamma, double pred_gamma);

/// sum((truth - pred)^2) / sum(truth^2). Throws "zero-energy-truth" when the
/// denominator vanishes.
double nmse(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& truth);

/// 10 log10(max(truth)^2 / MSE); identical inputs return +inf.
double psnr_db(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& truth);

/// Windowed SSIM: 11x11 Gaussian sigma 1.5, k1 = 0.01, k2 = 0.03, dynamic
/// range 1.0, mean over valid window positions. Throws on images smaller
/// than the window.
double ssim(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& truth);

/// 2|A n B| / (|A| + |B|) on binary masks; both empty -> 1.
double dice(const Eigen::ArrayXXd& pred_mask, const Eigen::ArrayXXd& truth_mask);

struct CalibrationCurve {
  Eigen::ArrayXd confidence;  // mean predicted probability per bin
  Eigen::ArrayXd accuracy;    // empirical positive rate per bin
  Eigen::ArrayXd count;       // samples per bin
  double ece = 0.0;
};

/// Equal-width bins over predicted probability; ECE = sum (n_b/n)|acc - conf|.
CalibrationCurve calibration_curve(const Eigen::ArrayXd& preds, const Eigen::ArrayXd& truths,
                                   int bins = 10);

struct SampleMetrics {
  double truth_gamma = 0.0;
  double pred_gamma = 0.0;
  double wall_depth_m = 0.0;
  double aeration_err = 0.0;
  double nmse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
  std::optional<double> dice;
};

struct GroupStat {
  double lo = 0.0, hi = 0.0;
  int n = 0;
  double mean = 0.0, sd = 0.0;
};

struct EvalReport {
  std::vector<SampleMetrics> rows;

  double mean_aeration_err() const;
  double sd_aeration_err() const;
  /// Aeration-error stats grouped by truth aeration deciles.
  std::vector<GroupStat> by_aeration_decile() const;
  /// Aeration-error stats grouped into 5 equal-width chest-wall-depth bins.
  std::vector<GroupStat> by_wall_depth(int bins = 5) const;
};

}  // namespace pwt::metrics
