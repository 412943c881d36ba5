// SPDX-License-Identifier: Apache-2.0
#include "pwt/metrics.hpp"

#include <cmath>
#include <limits>

#include "pwt/error.hpp"

namespace pwt::metrics {

double aeration_error(double truth_gamma, double pred_gamma) {
  return std::abs(truth_gamma - pred_gamma);
}

double nmse(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw Error("shape-mismatch", "nmse inputs differ in shape");
  const double denom = truth.square().sum();
  if (denom == 0.0) throw Error("zero-energy-truth", "nmse undefined for an all-zero truth");
  return (truth - pred).square().sum() / denom;
}

double psnr_db(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw Error("shape-mismatch", "psnr inputs differ in shape");
  const double mse = (truth - pred).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  const double peak = truth.maxCoeff();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Eigen::ArrayXXd& pred, const Eigen::ArrayXXd& truth) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols())
    throw Error("shape-mismatch", "ssim inputs differ in shape");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  constexpr double kC1 = 0.01 * 0.01;  // (k1 L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;
  if (pred.rows() < kWin || pred.cols() < kWin)
    throw Error("image-too-small", "ssim needs at least 11x11");

  Eigen::ArrayXXd w(kWin, kWin);
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      w(i, j) = std::exp(-(di * di + dj * dj) / (2.0 * kSigma * kSigma));
    }
  w /= w.sum();

  double acc = 0.0;
  Eigen::Index n_win = 0;
  for (Eigen::Index r = 0; r + kWin <= pred.rows(); ++r)
    for (Eigen::Index c = 0; c + kWin <= pred.cols(); ++c) {
      const auto X = pred.block(r, c, kWin, kWin);
      const auto Y = truth.block(r, c, kWin, kWin);
      const double mx = (w * X).sum();
      const double my = (w * Y).sum();
      const double vx = (w * X.square()).sum() - mx * mx;
      const double vy = (w * Y.square()).sum() - my * my;
      const double cxy = (w * X * Y).sum() - mx * my;
      acc += ((2.0 * mx * my + kC1) * (2.0 * cxy + kC2)) /
             ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      ++n_win;
    }
  return acc / static_cast<double>(n_win);
}

double dice(const Eigen::ArrayXXd& pred_mask, const Eigen::ArrayXXd& truth_mask) {
  if (pred_mask.rows() != truth_mask.rows() || pred_mask.cols() != truth_mask.cols())
    throw Error("shape-mismatch", "dice inputs differ in shape");
  const double a = pred_mask.sum();
  const double b = truth_mask.sum();
  if (a + b == 0.0) return 1.0;
  const double inter = (pred_mask * truth_mask).sum();
  return 2.0 * inter / (a + b);
}

CalibrationCurve calibration_curve(const Eigen::ArrayXd& preds, const Eigen::ArrayXd& truths,
                                   int bins) {
  if (preds.size() != truths.size()) throw Error("shape-mismatch", "calibration inputs differ");
  if (bins < 1) throw Error("bad-calibration", "need at least one bin");
  CalibrationCurve out;
  out.confidence.setZero(bins);
  out.accuracy.setZero(bins);
  out.count.setZero(bins);
  for (Eigen::Index i = 0; i < preds.size(); ++i) {
    int b = static_cast<int>(std::floor(preds(i) * bins));
    b = std::clamp(b, 0, bins - 1);
    out.confidence(b) += preds(i);
    out.accuracy(b) += truths(i);
    out.count(b) += 1.0;
  }
  const double n = static_cast<double>(preds.size());
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    if (out.count(b) == 0.0) continue;
    out.confidence(b) /= out.count(b);
    out.accuracy(b) /= out.count(b);
    ece += (out.count(b) / n) * std::abs(out.accuracy(b) - out.confidence(b));
  }
  out.ece = ece;
  return out;
}

namespace {

GroupStat stat_of(const std::vector<double>& v, double lo, double hi) {
  GroupStat g;
  g.lo = lo;
  g.hi = hi;
  g.n = static_cast<int>(v.size());
  if (v.empty()) return g;
  double sum = 0.0;
  for (double x : v) sum += x;
  g.mean = sum / g.n;
  double ss = 0.0;
  for (double x : v) ss += (x - g.mean) * (x - g.mean);
  g.sd = (g.n > 1) ? std::sqrt(ss / (g.n - 1)) : 0.0;
  return g;
}

}  // namespace

double EvalReport::mean_aeration_err() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.aeration_err;
  return s / static_cast<double>(rows.size());
}

double EvalReport::sd_aeration_err() const {
  if (rows.size() < 2) return 0.0;
  const double m = mean_aeration_err();
  double ss = 0.0;
  for (const auto& r : rows) ss += (r.aeration_err - m) * (r.aeration_err - m);
  return std::sqrt(ss / static_cast<double>(rows.size() - 1));
}

std::vector<GroupStat> EvalReport::by_aeration_decile() const {
  std::vector<GroupStat> out;
  for (int b = 0; b < 10; ++b) {
    const double lo = b / 10.0, hi = (b + 1) / 10.0;
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.truth_gamma >= lo && (r.truth_gamma < hi || (b == 9 && r.truth_gamma <= hi)))
        v.push_back(r.aeration_err);
    out.push_back(stat_of(v, lo, hi));
  }
  return out;
}

std::vector<GroupStat> EvalReport::by_wall_depth(int bins) const {
  std::vector<GroupStat> out;
  if (rows.empty()) return out;
  double lo = rows[0].wall_depth_m, hi = lo;
  for (const auto& r : rows) {
    lo = std::min(lo, r.wall_depth_m);
    hi = std::max(hi, r.wall_depth_m);
  }
  const double width = (hi > lo) ? (hi - lo) / bins : 1.0;
  for (int b = 0; b < bins; ++b) {
    const double b_lo = lo + b * width, b_hi = lo + (b + 1) * width;
    std::vector<double> v;
    for (const auto& r : rows)
      if (r.wall_depth_m >= b_lo && (r.wall_depth_m < b_hi || b == bins - 1))
        v.push_back(r.aeration_err);
    out.push_back(stat_of(v, b_lo, b_hi));
  }
  return out;
}

}  // namespace pwt::metrics
