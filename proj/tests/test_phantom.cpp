// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "pwt/error.hpp"
#include "pwt/phantom.hpp"

using namespace pwt::phantom;

namespace {

// Independent morphometry oracle: mean length of air runs along rows.
double mean_linear_intercept(const Eigen::ArrayXXd& g) {
  double total = 0.0;
  std::int64_t runs = 0;
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    Eigen::Index len = 0;
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      if (g(r, c) == 1.0) {
        ++len;
      } else if (len > 0) {
        total += static_cast<double>(len);
        ++runs;
        len = 0;
      }
    }
    if (len > 0) {
      total += static_cast<double>(len);
      ++runs;
    }
  }
  return runs ? total / static_cast<double>(runs) : 0.0;
}

PhantomSpec px_spec(double alveolus_px, double wall_px, std::uint64_t seed) {
  PhantomSpec s;
  s.alveolus_diameter_m = alveolus_px;
  s.wall_thickness_m = wall_px;
  s.alveolus_spread_m = 0.3 * alveolus_px;
  s.rng_seed = seed;
  return s;
}

std::int64_t count_air(const Eigen::ArrayXXd& g) { return static_cast<std::int64_t>(g.sum()); }

}  // namespace

TEST_SUITE("phantom") {

TEST_CASE("alveolar texture contains both classes and is deterministic") {
  const auto spec = px_spec(8.0, 2.0, 11);
  const auto m1 = generate_alveolar_texture(spec, 64, 64, 1.0);
  const double g = compute_aeration(m1);
  CHECK(g > 0.0);
  CHECK(g < 1.0);
  CHECK(is_binary(m1));

  const auto m2 = generate_alveolar_texture(spec, 64, 64, 1.0);
  CHECK((m1.grid == m2.grid).all());

  auto other = spec;
  other.rng_seed = 12;
  const auto m3 = generate_alveolar_texture(other, 64, 64, 1.0);
  CHECK(!(m1.grid == m3.grid).all());
}

TEST_CASE("alveolar texture hits the requested linear intercept within 20%") {
  const auto spec = px_spec(8.0, 2.0, 5);
  const auto m = generate_alveolar_texture(spec, 256, 256, 1.0);
  const double mli = mean_linear_intercept(m.grid);
  CHECK(mli > 6.4);
  CHECK(mli < 9.6);
}

TEST_CASE("texture rejects grids too small for one alveolus") {
  CHECK_THROWS_WITH_AS(generate_alveolar_texture(px_spec(8.0, 2.0, 1), 8, 64, 1.0),
                       doctest::Contains("phantom-too-small"), pwt::Error);
  CHECK_THROWS_WITH_AS(generate_alveolar_texture(px_spec(40.0, 2.0, 1), 20, 20, 1.0),
                       doctest::Contains("phantom-too-small"), pwt::Error);
}

TEST_CASE("derecruitment reaches the target within one pixel") {
  auto m = generate_alveolar_texture(px_spec(8.0, 2.0, 3), 100, 100, 1.0);
  m = derecruit_to_target(m, 0.60, 77);
  CHECK(compute_aeration(m) == doctest::Approx(0.60).epsilon(2e-4));

  const auto low = derecruit_to_target(m, 0.30, 78);
  const double g = compute_aeration(low);
  CHECK(g >= 0.2999);
  CHECK(g <= 0.3001);

  // monotone: decreasing aeration never creates air
  CHECK(((low.grid <= m.grid)).all());
}

TEST_CASE("derecruitment no-ops at the current aeration and on uniform maps") {
  auto m = generate_alveolar_texture(px_spec(6.0, 1.0, 9), 64, 64, 1.0);
  const double g = compute_aeration(m);
  const auto same = derecruit_to_target(m, g, 1);
  CHECK((same.grid == m.grid).all());

  AerationMap air;
  air.grid = Eigen::ArrayXXd::Ones(32, 32);
  air.pitch_m = 1.0;
  const auto still_air = derecruit_to_target(air, 1.0, 2);
  CHECK((still_air.grid == 1.0).all());
}

TEST_CASE("first pass flips exactly n interface pixels when enough are available") {
  auto m = generate_alveolar_texture(px_spec(8.0, 2.0, 21), 128, 128, 1.0);
  const double current = compute_aeration(m);
  const double hw = 128.0 * 128.0;
  const double target = current - 20.0 / hw;  // well below any interface count
  const auto out = derecruit_to_target(m, target, 5);
  const auto n_expected = static_cast<std::int64_t>(std::floor((current - target) * hw + 0.5));
  const std::int64_t changed = ((out.grid != m.grid).cast<std::int64_t>()).sum();
  CHECK(changed == n_expected);
  // every flipped pixel was air at an air/non-air 4-neighborhood interface
  for (Eigen::Index r = 0; r < 128; ++r)
    for (Eigen::Index c = 0; c < 128; ++c)
      if (out.grid(r, c) != m.grid(r, c)) {
        REQUIRE(m.grid(r, c) == 1.0);
        const bool boundary = (r > 0 && m.grid(r - 1, c) == 0.0) ||
                              (r + 1 < 128 && m.grid(r + 1, c) == 0.0) ||
                              (c > 0 && m.grid(r, c - 1) == 0.0) ||
                              (c + 1 < 128 && m.grid(r, c + 1) == 0.0);
        REQUIRE(boundary);
      }
}

TEST_CASE("derecruit composed with aeration hits any target (property)") {
  pwt::CounterRng rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    AerationMap m;
    const int H = 20 + static_cast<int>(rng.next_below(40));
    const int W = 20 + static_cast<int>(rng.next_below(40));
    m.grid.resize(H, W);
    m.pitch_m = 1.0;
    for (Eigen::Index r = 0; r < H; ++r)
      for (Eigen::Index c = 0; c < W; ++c) m.grid(r, c) = rng.next_double() < 0.5 ? 1.0 : 0.0;
    const double t = rng.next_double();
    const auto out = derecruit_to_target(m, t, rng.next_u64());
    CHECK(std::abs(compute_aeration(out) - t) <= 1.0 / (H * W) + 1e-12);
    // symmetric monotonicity
    if (t < compute_aeration(m)) CHECK((out.grid <= m.grid).all());
  }
}

TEST_CASE("aeration formula anchors") {
  AerationMap ones;
  ones.grid = Eigen::ArrayXXd::Ones(5, 7);
  ones.pitch_m = 1.0;
  CHECK(compute_aeration(ones) == 1.0);

  AerationMap m;
  m.grid.resize(2, 2);
  m.grid << 1, 0, 0, 0;
  m.pitch_m = 1.0;
  CHECK(compute_aeration(m) == 0.25);

  AerationMap empty;
  empty.grid.resize(0, 0);
  CHECK_THROWS_WITH_AS(compute_aeration(empty), doctest::Contains("empty-map"), pwt::Error);

  // counting oracle on a random binary map
  pwt::CounterRng rng(5);
  AerationMap r;
  r.grid.resize(50, 50);
  r.pitch_m = 1.0;
  std::int64_t count = 0;
  for (Eigen::Index i = 0; i < 50; ++i)
    for (Eigen::Index j = 0; j < 50; ++j) {
      r.grid(i, j) = rng.next_double() < 0.37 ? 1.0 : 0.0;
      count += static_cast<std::int64_t>(r.grid(i, j));
    }
  CHECK(compute_aeration(r) == doctest::Approx(static_cast<double>(count) / 2500.0).epsilon(1e-12));
}

TEST_CASE("column aeration matches per-column means and the global mean") {
  AerationMap ones;
  ones.grid = Eigen::ArrayXXd::Ones(6, 4);
  ones.pitch_m = 1.0;
  CHECK((column_aeration(ones) == 1.0).all());

  AerationMap m = ones;
  m.grid.col(2).setZero();
  const auto col = column_aeration(m);
  CHECK(col(2) == 0.0);
  CHECK(col(0) == 1.0);
  CHECK(col.mean() == doctest::Approx(compute_aeration(m)).epsilon(1e-12));
}

TEST_CASE("assemble_medium stacks wall above a conforming lung") {
  PhantomSpec tex = px_spec(6e-4, 1e-4, 31);  // 6 px alveoli at pitch 1e-4
  tex.alveolus_spread_m = 2e-4;
  auto lung = generate_alveolar_texture(tex, 48, 80, 1e-4);
  lung = derecruit_to_target(lung, 0.5, 3);

  PhantomSpec spec;
  spec.pleura_depth_m = 20e-4;  // 20 rows at pitch 1e-4
  spec.curvature_per_m = 0.0;
  const auto asm_flat = assemble_medium(lung, spec, default_medium_model());
  const auto& mm = asm_flat.medium;
  CHECK(mm.rows() == 20 + 48);
  CHECK(mm.cols() == 80);
  // flat pleura: air_mask rows above k are all false, pleural row constant
  CHECK((asm_flat.pleura_row == 20.0).all());
  for (Eigen::Index r = 0; r < 20; ++r)
    for (Eigen::Index c = 0; c < 80; ++c) REQUIRE(!mm.air_mask(r, c));
  // deformation preserves the air pixel count
  std::int64_t mask_count = 0;
  for (Eigen::Index r = 0; r < mm.rows(); ++r)
    for (Eigen::Index c = 0; c < mm.cols(); ++c) mask_count += mm.air_mask(r, c) ? 1 : 0;
  CHECK(mask_count == count_air(lung.grid));
  // chest wall mask covers exactly the wall rows
  for (Eigen::Index c = 0; c < 80; ++c) {
    for (Eigen::Index r = 0; r < 20; ++r) REQUIRE(asm_flat.chest_wall_mask(r, c));
    REQUIRE(!asm_flat.chest_wall_mask(20, c));
  }
  CHECK((mm.rho0 > 0.0).all());
  CHECK((mm.c0 > 0.0).all());

  // curvature bends the pleural line while preserving counts
  PhantomSpec curved = spec;
  curved.curvature_per_m = 40.0;
  const auto asm_curved = assemble_medium(lung, curved, default_medium_model());
  CHECK(asm_curved.pleura_row.maxCoeff() > asm_curved.pleura_row.minCoeff());
  // center column is the shallowest for positive curvature
  CHECK(asm_curved.pleura_row(40) == asm_curved.pleura_row.minCoeff());
}

}  // TEST_SUITE
