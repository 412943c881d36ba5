// SPDX-License-Identifier: Apache-2.0
#include "pwt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pwt/error.hpp"

namespace pwt::phantom {

namespace {

std::int64_t round_half_up(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

struct PixelRef {
  int r;
  int c;
};

}  // namespace

MediumModel default_medium_model() {
  // Literature soft-tissue defaults; configurable, not paper ground truth.
  MediumModel m;
  m.wall_layers = {
      {"connective", 0.15, 1613.0, 1120.0, 7.0, 2},
      {"adipose", 0.35, 1450.0, 950.0, 7.0, 1},
      {"muscle", 0.40, 1580.0, 1050.0, 7.0, 3},
      {"connective", 0.10, 1613.0, 1120.0, 7.0, 2},
  };
  m.lung_tissue = {"lung", 1.0, 1540.0, 1000.0, 7.0, 4};
  return m;
}

AerationMap generate_alveolar_texture(const PhantomSpec& spec, int H, int W, double pitch_m) {
  if (H < 16 || W < 16) throw Error("phantom-too-small", "need at least 16x16 pixels");
  if (pitch_m <= 0.0) throw Error("bad-phantom-spec", "pitch must be positive");
  const double diam_px = spec.alveolus_diameter_m / pitch_m;
  const double wall_px = std::max(spec.wall_thickness_m / pitch_m, 1.0);
  if (!(spec.alveolus_diameter_m > spec.wall_thickness_m))
    throw Error("bad-phantom-spec", "alveolus diameter must exceed wall thickness");

  // Lattice pitch calibrated so the mean linear intercept of the air cells
  // lands on the requested diameter: a convex cell of width a has mean chord
  // ~0.79*a, and the d2-d1 wall rule eats ~wall_px of each cell.
  const double lattice = 1.27 * diam_px + wall_px;
  if (lattice > std::min(H, W)) throw Error("phantom-too-small", "grid cannot fit one alveolus");
  const double jitter_px = 0.3 * lattice;
  // Per-site size offsets realize the alveolar size spread; small cells
  // disappear first under derecruitment, the way a broad real size
  // distribution behaves.
  const double size_px = std::min(0.5 * spec.alveolus_spread_m / pitch_m, 0.4 * lattice);

  CounterRng rng(spec.rng_seed, 0xA17E0);
  const int sites_r = static_cast<int>(std::ceil(H / lattice)) + 3;
  const int sites_c = static_cast<int>(std::ceil(W / lattice)) + 3;
  Eigen::ArrayXXd site_r(sites_r, sites_c), site_c(sites_r, sites_c), site_s(sites_r, sites_c);
  for (int i = 0; i < sites_r; ++i)
    for (int j = 0; j < sites_c; ++j) {
      // Offset every other row for a roughly hexagonal packing.
      const double base_c = (j - 1.0 + ((i % 2) ? 0.5 : 0.0)) * lattice;
      const double base_r = (i - 1.0) * lattice;
      site_r(i, j) = base_r + rng.uniform(-jitter_px, jitter_px);
      site_c(i, j) = base_c + rng.uniform(-jitter_px, jitter_px);
      site_s(i, j) = std::clamp(size_px * rng.next_normal(), -0.45 * lattice, 0.45 * lattice);
    }

  AerationMap out;
  out.pitch_m = pitch_m;
  out.grid.resize(H, W);
  for (int r = 0; r < H; ++r) {
    const int ci = static_cast<int>(std::floor(r / lattice)) + 1;
    for (int c = 0; c < W; ++c) {
      const int cj = static_cast<int>(std::floor(c / lattice)) + 1;
      double d1 = std::numeric_limits<double>::max();
      double d2 = d1;
      for (int di = -2; di <= 2; ++di)
        for (int dj = -2; dj <= 2; ++dj) {
          const int i = ci + di, j = cj + dj;
          if (i < 0 || i >= sites_r || j < 0 || j >= sites_c) continue;
          const double dr = site_r(i, j) - r;
          const double dc = site_c(i, j) - c;
          // additively weighted distance: bigger offsets grow the cell
          const double d = std::sqrt(dr * dr + dc * dc) - site_s(i, j);
          if (d < d1) {
            d2 = d1;
            d1 = d;
          } else if (d < d2) {
            d2 = d;
          }
        }
      out.grid(r, c) = (d2 - d1 < wall_px) ? 0.0 : 1.0;
    }
  }
  // Degenerate jitter/wall combinations could wash out one class; the
  // contract requires a genuine two-phase texture.
  const double g = out.grid.mean();
  if (g <= 0.0 || g >= 1.0)
    throw Error("phantom-degenerate", "texture collapsed to a single class");
  return out;
}

namespace {

// Air pixels 4-adjacent to non-air (to_air=false), or the reverse.
std::vector<PixelRef> interface_pixels(const Eigen::ArrayXXd& g, bool to_air) {
  const auto H = g.rows(), W = g.cols();
  const double from = to_air ? 0.0 : 1.0;
  const double other = 1.0 - from;
  std::vector<PixelRef> out;
  for (Eigen::Index r = 0; r < H; ++r)
    for (Eigen::Index c = 0; c < W; ++c) {
      if (g(r, c) != from) continue;
      const bool boundary = (r > 0 && g(r - 1, c) == other) || (r + 1 < H && g(r + 1, c) == other) ||
                            (c > 0 && g(r, c - 1) == other) || (c + 1 < W && g(r, c + 1) == other);
      if (boundary) out.push_back({static_cast<int>(r), static_cast<int>(c)});
    }
  return out;
}

std::vector<PixelRef> all_pixels_of(const Eigen::ArrayXXd& g, double v) {
  std::vector<PixelRef> out;
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c)
      if (g(r, c) == v) out.push_back({static_cast<int>(r), static_cast<int>(c)});
  return out;
}

}  // namespace

AerationMap derecruit_to_target(const AerationMap& map, double target, std::uint64_t rng_seed) {
  if (!is_binary(map)) throw Error("bad-aeration-map", "derecruitment needs a binary map");
  if (target < 0.0 || target > 1.0) throw Error("bad-aeration-map", "target outside [0,1]");
  AerationMap out = map;
  Eigen::ArrayXXd& g = out.grid;
  const double hw = static_cast<double>(g.size());
  std::int64_t count = static_cast<std::int64_t>(g.sum());
  CounterRng rng(rng_seed, 0xDE5EC);

  const bool to_air = target * hw > static_cast<double>(count);
  std::int64_t n = to_air ? round_half_up(target * hw - static_cast<double>(count))
                          : round_half_up(static_cast<double>(count) - target * hw);
  const double from = to_air ? 0.0 : 1.0;
  while (n > 0) {
    std::vector<PixelRef> pool = interface_pixels(g, to_air);
    if (pool.empty()) pool = all_pixels_of(g, from);  // uniform map: no interface exists
    if (pool.empty()) break;
    const std::int64_t k = std::min<std::int64_t>(n, static_cast<std::int64_t>(pool.size()));
    // Partial Fisher-Yates draw of k pixels without replacement.
    for (std::int64_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::int64_t>(rng.next_below(pool.size() - i));
      std::swap(pool[i], pool[j]);
      g(pool[i].r, pool[i].c) = 1.0 - from;
    }
    n -= k;
  }
  return out;
}

double compute_aeration(const AerationMap& map) {
  if (map.grid.size() == 0) throw Error("empty-map", "aeration of a zero-sized map");
  return map.grid.mean();
}

Eigen::ArrayXd column_aeration(const AerationMap& map) {
  return map.grid.colwise().mean().transpose();
}

bool is_binary(const AerationMap& map) {
  return ((map.grid == 0.0) || (map.grid == 1.0)).all();
}

AssembledMedium assemble_medium(const AerationMap& lung, const PhantomSpec& spec,
                                const MediumModel& model) {
  if (lung.grid.size() == 0) throw Error("empty-map", "lung map is empty");
  if (model.wall_layers.empty()) throw Error("bad-medium-model", "no wall layers");
  const auto W = lung.cols();
  const auto Hl = lung.rows();
  const double pitch = lung.pitch_m;

  // Pleural line depth per column; curvature bends it parabolically about
  // the lateral center.
  Eigen::ArrayXd pleura_row(W);
  Eigen::Index max_k = 0;
  for (Eigen::Index c = 0; c < W; ++c) {
    const double x = (static_cast<double>(c) - 0.5 * static_cast<double>(W - 1)) * pitch;
    const double depth = spec.pleura_depth_m + 0.5 * spec.curvature_per_m * x * x;
    const auto k = static_cast<Eigen::Index>(std::max<std::int64_t>(1, round_half_up(depth / pitch)));
    pleura_row(c) = static_cast<double>(k);
    max_k = std::max(max_k, k);
  }
  const Eigen::Index H = max_k + Hl;
  if (H < 2 || W < 2) throw Error("bad-phantom-spec", "assembled medium too small");

  AssembledMedium out;
  MediumMap& m = out.medium;
  m.pitch_m = pitch;
  m.rho0.setConstant(H, W, model.lung_tissue.rho0);
  m.c0.setConstant(H, W, model.lung_tissue.c0);
  m.beta.setConstant(H, W, model.lung_tissue.beta);
  m.atten_class.setConstant(H, W, model.lung_tissue.atten_class);
  m.air_mask.setConstant(H, W, false);
  out.chest_wall_mask.setConstant(H, W, false);
  out.pleura_row = pleura_row;
  out.lung_rows = Hl;

  double frac_total = 0.0;
  for (const auto& l : model.wall_layers) frac_total += l.fraction;

  for (Eigen::Index c = 0; c < W; ++c) {
    const auto k = static_cast<Eigen::Index>(pleura_row(c));
    // Wall bands stretched to the local wall depth.
    double acc = 0.0;
    Eigen::Index r0 = 0;
    for (std::size_t li = 0; li < model.wall_layers.size(); ++li) {
      const auto& l = model.wall_layers[li];
      acc += l.fraction / frac_total;
      const Eigen::Index r1 =
          (li + 1 == model.wall_layers.size()) ? k : static_cast<Eigen::Index>(std::llround(acc * static_cast<double>(k)));
      for (Eigen::Index r = r0; r < std::min(r1, k); ++r) {
        m.rho0(r, c) = l.rho0;
        m.c0(r, c) = l.c0;
        m.beta(r, c) = l.beta;
        m.atten_class(r, c) = l.atten_class;
        out.chest_wall_mask(r, c) = true;
      }
      r0 = std::min(r1, k);
    }
    for (Eigen::Index r = 0; r < Hl; ++r) {
      const Eigen::Index rr = k + r;
      if (rr >= H) break;
      if (lung.grid(r, c) == 1.0) m.air_mask(rr, c) = true;
    }
  }

  if (model.scatter_rel_std > 0.0) {
    CounterRng rng(model.scatter_seed, 0x5CA77);
    for (Eigen::Index c = 0; c < W; ++c)
      for (Eigen::Index r = 0; r < H; ++r)
        if (!m.air_mask(r, c))
          m.rho0(r, c) *= 1.0 + model.scatter_rel_std * rng.next_normal();
  }
  return out;
}

}  // namespace pwt::phantom
