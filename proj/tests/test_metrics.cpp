// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "pwt/error.hpp"
#include "pwt/metrics.hpp"
#include "pwt/rng.hpp"

using namespace pwt::metrics;

namespace {

// Naive double-loop references, kept deliberately separate from the library.
double naive_nmse(const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& t) {
  double num = 0.0, den = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      num += (t(i, j) - p(i, j)) * (t(i, j) - p(i, j));
      den += t(i, j) * t(i, j);
    }
  return num / den;
}

double naive_psnr(const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& t) {
  double mse = 0.0, peak = t(0, 0);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      mse += (t(i, j) - p(i, j)) * (t(i, j) - p(i, j));
      peak = std::max(peak, t(i, j));
    }
  mse /= static_cast<double>(p.size());
  return 10.0 * std::log10(peak * peak / mse);
}

double naive_ssim(const Eigen::ArrayXXd& p, const Eigen::ArrayXXd& t) {
  const int W = 11;
  double kernel[11][11];
  double ksum = 0.0;
  for (int i = 0; i < W; ++i)
    for (int j = 0; j < W; ++j) {
      kernel[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2.0 * 1.5 * 1.5));
      ksum += kernel[i][j];
    }
  for (int i = 0; i < W; ++i)
    for (int j = 0; j < W; ++j) kernel[i][j] /= ksum;
  double acc = 0.0;
  int n = 0;
  for (Eigen::Index r = 0; r + W <= p.rows(); ++r)
    for (Eigen::Index c = 0; c + W <= p.cols(); ++c) {
      double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
      for (int i = 0; i < W; ++i)
        for (int j = 0; j < W; ++j) {
          const double x = p(r + i, c + j), y = t(r + i, c + j);
          mx += kernel[i][j] * x;
          my += kernel[i][j] * y;
          xx += kernel[i][j] * x * x;
          yy += kernel[i][j] * y * y;
          xy += kernel[i][j] * x * y;
        }
      const double vx = xx - mx * mx, vy = yy - my * my, cxy = xy - mx * my;
      const double c1 = 1e-4, c2 = 9e-4;
      acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++n;
    }
  return acc / n;
}

double naive_dice(const Eigen::ArrayXXd& a, const Eigen::ArrayXXd& b) {
  double na = 0, nb = 0, ni = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      na += a(i, j);
      nb += b(i, j);
      ni += a(i, j) * b(i, j);
    }
  return (na + nb == 0.0) ? 1.0 : 2.0 * ni / (na + nb);
}

double naive_ece(const Eigen::ArrayXd& p, const Eigen::ArrayXd& t, int bins) {
  double ece = 0.0;
  for (int b = 0; b < bins; ++b) {
    double conf = 0, acc = 0, n = 0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      int bi = std::clamp(static_cast<int>(std::floor(p(i) * bins)), 0, bins - 1);
      if (bi != b) continue;
      conf += p(i);
      acc += t(i);
      n += 1.0;
    }
    if (n > 0) ece += (n / static_cast<double>(p.size())) * std::abs(acc / n - conf / n);
  }
  return ece;
}

Eigen::ArrayXXd random16(pwt::CounterRng& rng) {
  Eigen::ArrayXXd a(16, 16);
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 16; ++j) a(i, j) = rng.next_double();
  return a;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("aeration error anchors") {
  CHECK(aeration_error(0.5, 0.5) == 0.0);
  CHECK(aeration_error(0.6, 0.506) == doctest::Approx(0.094).epsilon(1e-12));
  CHECK(aeration_error(0.2, 0.7) == aeration_error(0.7, 0.2));
}

TEST_CASE("nmse anchors and oracle equivalence") {
  Eigen::ArrayXXd t = Eigen::ArrayXXd::Constant(4, 4, 0.5);
  CHECK(nmse(t, t) == 0.0);
  CHECK(nmse(Eigen::ArrayXXd::Zero(4, 4), t) == doctest::Approx(1.0));
  CHECK(nmse((2.0 * t).eval(), t) == doctest::Approx(1.0));
  CHECK_THROWS_WITH_AS(nmse(t, Eigen::ArrayXXd::Zero(4, 4)),
                       doctest::Contains("zero-energy-truth"), pwt::Error);

  pwt::CounterRng rng(3);
  const auto a = random16(rng), b = random16(rng);
  CHECK(std::abs(nmse(a, b) - naive_nmse(a, b)) < 1e-12);
}

TEST_CASE("psnr anchors and oracle equivalence") {
  // MSE 0.01 with max 1 -> 20 dB
  Eigen::ArrayXXd t = Eigen::ArrayXXd::Zero(10, 10);
  t(0, 0) = 1.0;
  Eigen::ArrayXXd p = t + 0.1;
  CHECK(psnr_db(p, t) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(std::isinf(psnr_db(t, t)));

  pwt::CounterRng rng(4);
  const auto a = random16(rng), b = random16(rng);
  CHECK(std::abs(psnr_db(a, b) - naive_psnr(a, b)) < 1e-9);
}

TEST_CASE("ssim: identity, inverted checkerboard, continuity, oracle equivalence") {
  pwt::CounterRng rng(5);
  const auto a = random16(rng);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  Eigen::ArrayXXd checker(16, 16);
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 16; ++j) checker(i, j) = static_cast<double>((i + j) % 2);
  CHECK(ssim((1.0 - checker).eval(), checker) < 0.5);

  Eigen::ArrayXXd c1 = Eigen::ArrayXXd::Constant(16, 16, 0.4);
  CHECK(ssim((c1 + 1e-6).eval(), c1) > 0.999);

  const auto b = random16(rng);
  CHECK(std::abs(ssim(a, b) - naive_ssim(a, b)) < 1e-9);

  CHECK_THROWS_WITH_AS(ssim(Eigen::ArrayXXd::Zero(8, 8), Eigen::ArrayXXd::Zero(8, 8)),
                       doctest::Contains("image-too-small"), pwt::Error);
}

TEST_CASE("dice anchors, symmetry, range") {
  Eigen::ArrayXXd a = Eigen::ArrayXXd::Zero(8, 8), b = Eigen::ArrayXXd::Zero(8, 8);
  a.block(0, 0, 4, 8).setOnes();
  CHECK(dice(a, a) == 1.0);
  b.block(4, 0, 4, 8).setOnes();
  CHECK(dice(a, b) == 0.0);
  Eigen::ArrayXXd half = Eigen::ArrayXXd::Zero(8, 8);
  half.block(2, 0, 4, 8).setOnes();  // overlaps half of a
  CHECK(dice(a, half) == doctest::Approx(0.5));
  CHECK(dice(Eigen::ArrayXXd::Zero(8, 8), Eigen::ArrayXXd::Zero(8, 8)) == 1.0);

  pwt::CounterRng rng(6);
  Eigen::ArrayXXd ra(16, 16), rb(16, 16);
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 16; ++j) {
      ra(i, j) = rng.next_double() < 0.3 ? 1.0 : 0.0;
      rb(i, j) = rng.next_double() < 0.6 ? 1.0 : 0.0;
    }
  CHECK(dice(ra, rb) == doctest::Approx(naive_dice(ra, rb)).epsilon(1e-12));
  CHECK(dice(ra, rb) == dice(rb, ra));
  CHECK(dice(ra, rb) >= 0.0);
  CHECK(dice(ra, rb) <= 1.0);
}

TEST_CASE("calibration curve anchors and oracle equivalence") {
  Eigen::ArrayXd p(6), t(6);
  p << 0.0, 1.0, 1.0, 0.0, 1.0, 0.0;
  t = p;
  CHECK(calibration_curve(p, t).ece == doctest::Approx(0.0));

  Eigen::ArrayXd p2 = Eigen::ArrayXd::Constant(100, 0.5);
  Eigen::ArrayXd t2(100);
  for (int i = 0; i < 100; ++i) t2(i) = (i % 2 == 0) ? 1.0 : 0.0;
  CHECK(calibration_curve(p2, t2).ece == doctest::Approx(0.0));

  Eigen::ArrayXd p3 = Eigen::ArrayXd::Constant(100, 0.9);
  CHECK(calibration_curve(p3, t2).ece == doctest::Approx(0.4));

  pwt::CounterRng rng(8);
  Eigen::ArrayXd pr(500), tr(500);
  for (int i = 0; i < 500; ++i) {
    pr(i) = rng.next_double();
    tr(i) = rng.next_double() < pr(i) ? 1.0 : 0.0;
  }
  CHECK(calibration_curve(pr, tr).ece == doctest::Approx(naive_ece(pr, tr, 10)).epsilon(1e-12));
}

TEST_CASE("metrics are invariant under a shared pixel permutation") {
  pwt::CounterRng rng(7);
  const auto a = random16(rng), b = random16(rng);
  // deterministic permutation: reverse-scan order
  Eigen::ArrayXXd ap(16, 16), bp(16, 16);
  for (Eigen::Index i = 0; i < 16; ++i)
    for (Eigen::Index j = 0; j < 16; ++j) {
      ap(i, j) = a(15 - i, 15 - j);
      bp(i, j) = b(15 - i, 15 - j);
    }
  CHECK(nmse(a, b) == doctest::Approx(nmse(ap, bp)).epsilon(1e-12));
  CHECK(psnr_db(a, b) == doctest::Approx(psnr_db(ap, bp)).epsilon(1e-12));
}

TEST_CASE("report aggregates and groupings recompute from rows") {
  EvalReport rep;
  for (int i = 0; i < 20; ++i) {
    SampleMetrics m;
    m.truth_gamma = 0.05 + 0.045 * i;
    m.wall_depth_m = 0.01 + 0.001 * i;
    m.aeration_err = 0.01 * (i % 5);
    rep.rows.push_back(m);
  }
  const double mean = rep.mean_aeration_err();
  double s = 0.0;
  for (const auto& r : rep.rows) s += r.aeration_err;
  CHECK(mean == doctest::Approx(s / 20.0));

  const auto dec = rep.by_aeration_decile();
  CHECK(dec.size() == 10);
  int total = 0;
  for (const auto& g : dec) total += g.n;
  CHECK(total == 20);

  const auto depth = rep.by_wall_depth();
  CHECK(depth.size() == 5);
  total = 0;
  for (const auto& g : depth) total += g.n;
  CHECK(total == 20);
}

}  // TEST_SUITE
