// SPDX-License-Identifier: Apache-2.0
#include "pwt/solver.hpp"

#include <cmath>
#include <complex>
#include <ostream>

#include "pwt/error.hpp"

namespace pwt::solver {

namespace {

// Staggered central first-derivative coefficients, order 2M.
constexpr double kCoef1[] = {1.0};
constexpr double kCoef2[] = {9.0 / 8.0, -1.0 / 24.0};
constexpr double kCoef3[] = {75.0 / 64.0, -25.0 / 384.0, 3.0 / 640.0};
constexpr double kCoef4[] = {1225.0 / 1024.0, -245.0 / 3072.0, 49.0 / 5120.0, -5.0 / 7168.0};

const double* coeffs_for(int taps) {
  switch (taps) {
    case 1: return kCoef1;
    case 2: return kCoef2;
    case 3: return kCoef3;
    default: return kCoef4;
  }
}

// d/dx of a center field onto x-faces: out(r, f) ~ dP/dx at (r, f + 1/2).
// Order drops toward the lateral edges where the stencil no longer fits.
void d_dx_faces(const Eigen::ArrayXXd& P, Eigen::ArrayXXd& out, int M, double inv_dx) {
  const Eigen::Index H = P.rows();
  const Eigen::Index Wf = P.cols() - 1;
  out.setZero(H, Wf);
  const double* cf = coeffs_for(M);
  const Eigen::Index i0 = M - 1;
  const Eigen::Index i1 = Wf - M;
  if (i1 >= i0) {
    const Eigen::Index n = i1 - i0 + 1;
    for (int m = 1; m <= M; ++m)
      out.middleCols(i0, n) +=
          (cf[m - 1] * inv_dx) * (P.middleCols(i0 + m, n) - P.middleCols(i0 - m + 1, n));
  }
  for (Eigen::Index f = 0; f < Wf; ++f) {
    if (f >= i0 && f <= i1) continue;
    const int Mf = static_cast<int>(std::min<Eigen::Index>({f + 1, Wf - f, M}));
    const double* ce = coeffs_for(Mf);
    out.col(f).setZero();
    for (int m = 1; m <= Mf; ++m)
      out.col(f) += (ce[m - 1] * inv_dx) * (P.col(f + m) - P.col(f - m + 1));
  }
}

void d_dy_faces(const Eigen::ArrayXXd& P, Eigen::ArrayXXd& out, int M, double inv_dx) {
  const Eigen::Index Hf = P.rows() - 1;
  const Eigen::Index W = P.cols();
  out.setZero(Hf, W);
  const double* cf = coeffs_for(M);
  const Eigen::Index i0 = M - 1;
  const Eigen::Index i1 = Hf - M;
  if (i1 >= i0) {
    const Eigen::Index n = i1 - i0 + 1;
    for (int m = 1; m <= M; ++m)
      out.middleRows(i0, n) +=
          (cf[m - 1] * inv_dx) * (P.middleRows(i0 + m, n) - P.middleRows(i0 - m + 1, n));
  }
  for (Eigen::Index f = 0; f < Hf; ++f) {
    if (f >= i0 && f <= i1) continue;
    const int Mf = static_cast<int>(std::min<Eigen::Index>({f + 1, Hf - f, M}));
    const double* ce = coeffs_for(Mf);
    out.row(f).setZero();
    for (int m = 1; m <= Mf; ++m)
      out.row(f) += (ce[m - 1] * inv_dx) * (P.row(f + m) - P.row(f - m + 1));
  }
}

// d/dx of an x-face field onto centers, built as the negative transpose of
// d_dx_faces (per-face coefficient reduction scattered back to centers).
// This pairing conserves the semi-discrete acoustic energy exactly under
// rigid walls; faces beyond the walls are zero.
void div_dx_centers(const Eigen::ArrayXXd& Vx, Eigen::ArrayXXd& out, int M, double inv_dx) {
  const Eigen::Index Wf = Vx.cols();
  const Eigen::Index H = Vx.rows();
  out.setZero(H, Wf + 1);
  const double* cf = coeffs_for(M);
  const Eigen::Index i0 = M - 1;
  const Eigen::Index i1 = Wf - M;
  if (i1 >= i0) {
    const Eigen::Index n = i1 - i0 + 1;
    for (int m = 1; m <= M; ++m) {
      out.middleCols(i0 - m + 1, n) += (cf[m - 1] * inv_dx) * Vx.middleCols(i0, n);
      out.middleCols(i0 + m, n) -= (cf[m - 1] * inv_dx) * Vx.middleCols(i0, n);
    }
  }
  for (Eigen::Index f = 0; f < Wf; ++f) {
    if (f >= i0 && f <= i1) continue;
    const int Mf = static_cast<int>(std::min<Eigen::Index>({f + 1, Wf - f, M}));
    const double* ce = coeffs_for(Mf);
    for (int m = 1; m <= Mf; ++m) {
      out.col(f - m + 1) += (ce[m - 1] * inv_dx) * Vx.col(f);
      out.col(f + m) -= (ce[m - 1] * inv_dx) * Vx.col(f);
    }
  }
}

void div_dy_centers(const Eigen::ArrayXXd& Vy, Eigen::ArrayXXd& out, int M, double inv_dx) {
  const Eigen::Index Hf = Vy.rows();
  const Eigen::Index W = Vy.cols();
  out.setZero(Hf + 1, W);
  const double* cf = coeffs_for(M);
  const Eigen::Index i0 = M - 1;
  const Eigen::Index i1 = Hf - M;
  if (i1 >= i0) {
    const Eigen::Index n = i1 - i0 + 1;
    for (int m = 1; m <= M; ++m) {
      out.middleRows(i0 - m + 1, n) += (cf[m - 1] * inv_dx) * Vy.middleRows(i0, n);
      out.middleRows(i0 + m, n) -= (cf[m - 1] * inv_dx) * Vy.middleRows(i0, n);
    }
  }
  for (Eigen::Index f = 0; f < Hf; ++f) {
    if (f >= i0 && f <= i1) continue;
    const int Mf = static_cast<int>(std::min<Eigen::Index>({f + 1, Hf - f, M}));
    const double* ce = coeffs_for(Mf);
    for (int m = 1; m <= Mf; ++m) {
      out.row(f - m + 1) += (ce[m - 1] * inv_dx) * Vy.row(f);
      out.row(f + m) -= (ce[m - 1] * inv_dx) * Vy.row(f);
    }
  }
}

}  // namespace

void SolverConfig::validate() const {
  if (dx_m <= 0.0 || dt_s <= 0.0) throw Error("bad-solver-config", "dx and dt must be positive");
  if (n_steps < 0) throw Error("bad-solver-config", "negative step count");
  if (cfl() > 0.5 + 1e-9)
    throw Error("bad-solver-config",
                "CFL " + std::to_string(cfl()) + " exceeds the stability bound 0.5");
  if (spatial_order != 2 && spatial_order != 4 && spatial_order != 6 && spatial_order != 8)
    throw Error("bad-solver-config", "spatial order must be one of 2,4,6,8");
  if (n_relax < 0 || n_relax > 3) throw Error("bad-solver-config", "n_relax outside 0..3");
  if (boundary.width_cells < 0) throw Error("bad-solver-config", "negative boundary width");
}

MemCoeff memory_coeffs(double d, double alpha, double kappa, double dt) {
  MemCoeff mc;
  const double g = d / kappa + alpha;
  mc.b = std::exp(-g * dt);
  if (d == 0.0) {
    mc.a = 0.0;
    return mc;
  }
  const double dk2 = d / (kappa * kappa);
  // (b-1)/g -> -dt as g -> 0
  mc.a = (g * dt < 1e-12) ? -dk2 * dt : dk2 * (mc.b - 1.0) / g;
  return mc;
}

std::pair<double, double> update_memory(double psi, double grad, const RelaxMechanism& m,
                                        double kappa, double dt) {
  const MemCoeff mc = memory_coeffs(m.d, m.alpha, kappa, dt);
  const double next = mc.b * psi + mc.a * grad;
  return {next, grad / kappa + next};
}

Stepper::Stepper(const phantom::MediumMap& medium, const SolverConfig& cfg,
                 const RelaxParams& relax, const RelaxProfile* boundary_profile)
    : cfg_(cfg) {
  cfg_.validate();
  H_ = medium.rows();
  W_ = medium.cols();
  taps_ = cfg.spatial_order / 2;
  const int M = taps_;
  if (H_ < 2 * M + 2 || W_ < 2 * M + 2)
    throw Error("bad-solver-config", "grid too small for the spatial order");
  if (medium.pitch_m > 0 && std::abs(medium.pitch_m - cfg.dx_m) > 1e-12 * cfg.dx_m + 1e-15)
    throw Error("bad-solver-config", "medium pitch does not match solver dx");
  const double* cf = coeffs_for(M);
  for (int m = 0; m < M; ++m) coef_[static_cast<std::size_t>(m)] = cf[m];

  // Face-averaged equilibrium properties.
  rho0_x_ = 0.5 * (medium.rho0.leftCols(W_ - 1) + medium.rho0.rightCols(W_ - 1));
  rho0_y_ = 0.5 * (medium.rho0.topRows(H_ - 1) + medium.rho0.bottomRows(H_ - 1));
  k0_cell_ = 1.0 / (medium.rho0 * medium.c0.square());
  k0_x_ = 0.5 * (k0_cell_.leftCols(W_ - 1) + k0_cell_.rightCols(W_ - 1));
  k0_y_ = 0.5 * (k0_cell_.topRows(H_ - 1) + k0_cell_.bottomRows(H_ - 1));
  inv_rho_dt_x_ = cfg.dt_s / rho0_x_;
  inv_rho_dt_y_ = cfg.dt_s / rho0_y_;
  bulk_dt_ = cfg.dt_s * medium.rho0 * medium.c0.square();
  one_m_2beta_k0_ = k0_cell_ * (1.0 - 2.0 * medium.beta);

  air_cells_.clear();
  for (Eigen::Index c = 0; c < W_; ++c)
    for (Eigen::Index r = 0; r < H_; ++r)
      if (medium.air_mask(r, c)) air_cells_.push_back(c * H_ + r);

  auto build_slot = [&](const AxisRelax& ax, bool x_axis, bool face_staggered) {
    MechSlot slot;
    slot.inv_kappa = 1.0 / ax.kappa_scale;
    if (static_cast<int>(ax.mech.size()) > 3)
      throw Error("bad-solver-config", "more than 3 relaxation mechanisms");
    for (const auto& m : ax.mech) slot.uniform.push_back(memory_coeffs(m.d, m.alpha, ax.kappa_scale, cfg.dt_s));
    if (boundary_profile) {
      const Eigen::ArrayXXd& dc = x_axis ? boundary_profile->d_x : boundary_profile->d_y;
      if (dc.size() > 0 && (dc.maxCoeff() > 0.0)) {
        if (dc.rows() != H_ || dc.cols() != W_)
          throw Error("bad-solver-config", "boundary profile dims mismatch");
        Eigen::ArrayXXd d_stag;
        if (!face_staggered)
          d_stag = dc;
        else if (x_axis)
          d_stag = 0.5 * (dc.leftCols(W_ - 1) + dc.rightCols(W_ - 1));
        else
          d_stag = 0.5 * (dc.topRows(H_ - 1) + dc.bottomRows(H_ - 1));
        slot.has_profile = true;
        slot.prof_a.resize(d_stag.rows(), d_stag.cols());
        slot.prof_b.resize(d_stag.rows(), d_stag.cols());
        for (Eigen::Index j = 0; j < d_stag.cols(); ++j)
          for (Eigen::Index i = 0; i < d_stag.rows(); ++i) {
            const MemCoeff mc = memory_coeffs(d_stag(i, j), 0.0, 1.0, cfg.dt_s);
            slot.prof_a(i, j) = mc.a;
            slot.prof_b(i, j) = mc.b;
          }
      }
    }
    return slot;
  };
  // nabla_2 shares the relaxation variables of nabla_1.
  slot_x1_ = build_slot(relax.x, true, true);
  slot_y1_ = build_slot(relax.y, false, true);
  slot_x2_ = build_slot(relax.x, true, false);
  slot_y2_ = build_slot(relax.y, false, false);

  gx_.setZero(H_, W_ - 1);
  gy_.setZero(H_ - 1, W_);
  divx_.setZero(H_, W_);
  divy_.setZero(H_, W_);
  scratch_x_.setZero(H_, W_ - 1);
  scratch_y_.setZero(H_ - 1, W_);
  scratch_c_.setZero(H_, W_);
}

WaveState Stepper::make_state() const {
  WaveState s;
  s.p.setZero(H_, W_);
  s.vx.setZero(H_, W_ - 1);
  s.vy.setZero(H_ - 1, W_);
  auto init_psi = [](std::vector<Eigen::ArrayXXd>& v, const MechSlot& slot, Eigen::Index r,
                     Eigen::Index c) {
    const std::size_t n = slot.uniform.size() + (slot.has_profile ? 1 : 0);
    v.assign(n, Eigen::ArrayXXd::Zero(r, c));
  };
  init_psi(s.psi_x1, slot_x1_, H_, W_ - 1);
  init_psi(s.psi_y1, slot_y1_, H_ - 1, W_);
  init_psi(s.psi_x2, slot_x2_, H_, W_);
  init_psi(s.psi_y2, slot_y2_, H_, W_);
  return s;
}

void Stepper::apply_slot(const MechSlot& slot, std::vector<Eigen::ArrayXXd>& psi,
                         Eigen::ArrayXXd& grad) const {
  const std::size_t n_mech = slot.uniform.size() + (slot.has_profile ? 1 : 0);
  if (psi.size() != n_mech) throw Error("bad-wave-state", "psi count mismatch");
  if (n_mech == 0) {
    if (slot.inv_kappa != 1.0) grad *= slot.inv_kappa;
    return;
  }
  // psi updates consume the raw derivative; the output adds them on top of
  // the kappa-scaled derivative.
  std::size_t k = 0;
  if (slot.inv_kappa == 1.0) {
    for (; k < slot.uniform.size(); ++k) {
      psi[k] = slot.uniform[k].b * psi[k] + slot.uniform[k].a * grad;
    }
    if (slot.has_profile) psi[k] = slot.prof_b * psi[k] + slot.prof_a * grad;
    for (const auto& ps : psi) grad += ps;
    return;
  }
  Eigen::ArrayXXd raw = grad;
  grad *= slot.inv_kappa;
  for (; k < slot.uniform.size(); ++k) {
    psi[k] = slot.uniform[k].b * psi[k] + slot.uniform[k].a * raw;
  }
  if (slot.has_profile) psi[k] = slot.prof_b * psi[k] + slot.prof_a * raw;
  for (const auto& ps : psi) grad += ps;
}

void Stepper::check_finite(const WaveState& s) const {
  if (s.p.allFinite() && s.vx.allFinite() && s.vy.allFinite()) return;
  throw Error("solver-diverged", "non-finite field at step " + std::to_string(s.t_step));
}

void Stepper::step(WaveState& s, const SourceTerm* src) const {
  if (s.p.rows() != H_ || s.p.cols() != W_) throw Error("bad-wave-state", "dims mismatch");
  const double inv_dx = 1.0 / cfg_.dx_m;
  const int M = taps_;

  // Half step: velocities from pressure gradients (nabla_1).
  d_dx_faces(s.p, gx_, M, inv_dx);
  apply_slot(slot_x1_, s.psi_x1, gx_);
  d_dy_faces(s.p, gy_, M, inv_dx);
  apply_slot(slot_y1_, s.psi_y1, gy_);
  if (!cfg_.nonlinear) {
    s.vx -= inv_rho_dt_x_ * gx_;
    s.vy -= inv_rho_dt_y_ * gy_;
  } else {
    // rho = rho0 (1 + k0 p) with the most recent local p, averaged to faces.
    scratch_x_ = 0.5 * (s.p.leftCols(W_ - 1) + s.p.rightCols(W_ - 1));
    s.vx -= cfg_.dt_s * gx_ / (rho0_x_ * (1.0 + k0_x_ * scratch_x_));
    scratch_y_ = 0.5 * (s.p.topRows(H_ - 1) + s.p.bottomRows(H_ - 1));
    s.vy -= cfg_.dt_s * gy_ / (rho0_y_ * (1.0 + k0_y_ * scratch_y_));
  }

  // Half step: pressure from velocity divergence (nabla_2).
  div_dx_centers(s.vx, divx_, M, inv_dx);
  apply_slot(slot_x2_, s.psi_x2, divx_);
  div_dy_centers(s.vy, divy_, M, inv_dx);
  apply_slot(slot_y2_, s.psi_y2, divy_);
  if (!cfg_.nonlinear) {
    s.p -= bulk_dt_ * (divx_ + divy_);
  } else {
    // kappa = k0 (1 + k0 (1 - 2 beta) p), lagged p keeps the update explicit.
    s.p -= cfg_.dt_s * (divx_ + divy_) / (k0_cell_ * (1.0 + one_m_2beta_k0_ * s.p));
  }

  if (src) {
    for (std::size_t i = 0; i < src->cells.size(); ++i) {
      const auto& cell = src->cells[i];
      const auto& w = src->waveforms[i];
      if (s.t_step < w.size()) s.p(cell.r, cell.c) += w(s.t_step);
    }
  }
  // Constant zero pressure in air inclusions.
  double* pd = s.p.data();
  for (const auto idx : air_cells_) pd[idx] = 0.0;

  ++s.t_step;
  if (s.t_step % 50 == 0 || s.t_step == cfg_.n_steps) check_finite(s);
  if (diag_) {
    const double e = cfg_.dx_m * cfg_.dx_m *
                     (0.5 * (s.p.square() * k0_cell_).sum() + 0.5 * (rho0_x_ * s.vx.square()).sum() +
                      0.5 * (rho0_y_ * s.vy.square()).sum());
    (*diag_) << s.t_step << "," << e << "," << s.p.abs().maxCoeff() << "\n";
  }
}

void Stepper::sample(const WaveState& s, const ReceiverSet& rx,
                     Eigen::Ref<Eigen::ArrayXd, 0, Eigen::InnerStride<>> out) const {
  for (std::size_t i = 0; i < rx.cells.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = s.p(rx.cells[i].r, rx.cells[i].c);
}

WaveState step(WaveState state, const phantom::MediumMap& medium, const SolverConfig& cfg,
               const RelaxParams& relax, const RelaxProfile* boundary_profile,
               const SourceTerm* src) {
  Stepper st(medium, cfg, relax, boundary_profile);
  st.step(state, src);
  return state;
}

double acoustic_energy(const WaveState& s, const phantom::MediumMap& medium, double dx) {
  const auto H = medium.rows(), W = medium.cols();
  const Eigen::ArrayXXd k0 = 1.0 / (medium.rho0 * medium.c0.square());
  const Eigen::ArrayXXd rx = 0.5 * (medium.rho0.leftCols(W - 1) + medium.rho0.rightCols(W - 1));
  const Eigen::ArrayXXd ry = 0.5 * (medium.rho0.topRows(H - 1) + medium.rho0.bottomRows(H - 1));
  return dx * dx *
         (0.5 * (s.p.square() * k0).sum() + 0.5 * (rx * s.vx.square()).sum() +
          0.5 * (ry * s.vy.square()).sum());
}

double model_attenuation_np_m(const AxisRelax& axis, double f, double c_ref, double dt) {
  const double w = 2.0 * std::numbers::pi * f;
  const double k = axis.kappa_scale;
  std::complex<double> D(1.0 / k, 0.0);
  if (dt <= 0.0) {
    for (const auto& m : axis.mech)
      D += -(m.d / (k * k)) / std::complex<double>(m.d / k + m.alpha, w);
  } else {
    // Discrete transfer of the recursive convolution the solver realizes:
    // psi_n = b psi_{n-1} + a g_n  =>  H(w) = a / (1 - b e^{-i w dt}).
    for (const auto& m : axis.mech) {
      const MemCoeff mc = memory_coeffs(m.d, m.alpha, k, dt);
      D += mc.a / (1.0 - mc.b * std::exp(std::complex<double>(0.0, -w * dt)));
    }
  }
  return -(w / c_ref) * std::imag(1.0 / D);
}

namespace {

constexpr double kNpPerDb = 1.0 / 8.685889638065035;

double target_np_m(double alpha0_db_cm_mhz, double y, double f) {
  return alpha0_db_cm_mhz * std::pow(f / 1e6, y) * 100.0 * kNpPerDb;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) {
  const double q = std::clamp(p, 1e-9, 1.0 - 1e-9);
  return std::log(q / (1.0 - q));
}

// Bounded parameterization: each mechanism is (s, t) with pole rate
// g = g_max sigmoid(s) and d = g sigmoid(t), so 0 <= d <= g and
// alpha = g - d >= 0. Unbounded poles fit classical laws perfectly but are
// unrepresentable at the solver time step.
AxisRelax decode_mechs(const Eigen::VectorXd& u, double g_max) {
  const int n = static_cast<int>(u.size() / 2);
  AxisRelax ax;
  ax.mech.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double g = g_max * sigmoid(u(2 * i));
    const double d = g * sigmoid(u(2 * i + 1));
    ax.mech[static_cast<std::size_t>(i)].d = d;
    ax.mech[static_cast<std::size_t>(i)].alpha = g - d;
  }
  return ax;
}

Eigen::VectorXd fit_residual(const Eigen::VectorXd& u, const Eigen::VectorXd& freqs,
                             const Eigen::VectorXd& target, double c_ref, double g_max,
                             double dt) {
  const AxisRelax ax = decode_mechs(u, g_max);
  Eigen::VectorXd r(freqs.size());
  for (Eigen::Index j = 0; j < freqs.size(); ++j)
    r(j) = model_attenuation_np_m(ax, freqs(j), c_ref, dt) - target(j);
  return r;
}

}  // namespace

AttenuationFit fit_attenuation(double alpha0_db_cm_mhz, double y, double f_lo, double f_hi,
                               int n_relax, double c_ref, double dt) {
  if (n_relax < 1 || n_relax > 3) throw Error("attenuation-fit-failed", "n_relax must be 1..3");
  if (!(f_hi > f_lo) || f_lo <= 0.0) throw Error("attenuation-fit-failed", "bad frequency band");
  if (dt > 0.0 && f_hi > 0.5 / dt)
    throw Error("attenuation-fit-failed", "band extends past the solver Nyquist");
  AttenuationFit out;
  out.params.x.mech.assign(static_cast<std::size_t>(n_relax), RelaxMechanism{});
  out.params.y.mech = out.params.x.mech;
  if (alpha0_db_cm_mhz == 0.0) return out;  // exact: all mechanisms off

  const double w_hi = 2.0 * std::numbers::pi * f_hi;
  const double g_max = (dt > 0.0) ? std::min(1.2 / dt, 40.0 * w_hi) : 40.0 * w_hi;

  const int nf = 16;
  Eigen::VectorXd freqs(nf), target(nf);
  for (int j = 0; j < nf; ++j) {
    freqs(j) = f_lo + (f_hi - f_lo) * j / (nf - 1.0);
    target(j) = target_np_m(alpha0_db_cm_mhz, y, freqs(j));
  }
  const double f_mid = 0.5 * (f_lo + f_hi);
  const double t_mid = target_np_m(alpha0_db_cm_mhz, y, f_mid);

  // Seed: poles log-spaced from mid-band up to the rate bound, perturbative
  // linear solve for d at fixed g.
  Eigen::VectorXd u(2 * n_relax);
  {
    Eigen::VectorXd g(n_relax);
    const double g_lo = 2.0 * std::numbers::pi * f_mid;
    const double g_hi = 0.8 * g_max;
    for (int i = 0; i < n_relax; ++i) {
      const double t = (n_relax == 1) ? 1.0 : static_cast<double>(i) / (n_relax - 1.0);
      g(i) = g_lo * std::pow(g_hi / g_lo, t);
    }
    Eigen::MatrixXd A(nf, n_relax);
    for (int j = 0; j < nf; ++j) {
      const double w = 2.0 * std::numbers::pi * freqs(j);
      for (int i = 0; i < n_relax; ++i) A(j, i) = (w / c_ref) * w / (w * w + g(i) * g(i));
    }
    Eigen::VectorXd d = A.colPivHouseholderQr().solve(target);
    for (int i = 0; i < n_relax; ++i) {
      const double di = std::clamp(d(i), 1e-6 * g(i), 0.999 * g(i));
      u(2 * i) = logit(g(i) / g_max);
      u(2 * i + 1) = logit(di / g(i));
    }
  }

  // Levenberg-Marquardt polish with a numeric Jacobian.
  double lambda = 1e-3;
  Eigen::VectorXd r = fit_residual(u, freqs, target, c_ref, g_max, dt);
  double cost = r.squaredNorm();
  for (int it = 0; it < 300; ++it) {
    Eigen::MatrixXd J(nf, u.size());
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      const double h = 1e-5 * std::max(1.0, std::abs(u(k)));
      Eigen::VectorXd up = u, um = u;
      up(k) += h;
      um(k) -= h;
      J.col(k) = (fit_residual(up, freqs, target, c_ref, g_max, dt) -
                  fit_residual(um, freqs, target, c_ref, g_max, dt)) /
                 (2.0 * h);
    }
    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const Eigen::VectorXd Jtr = J.transpose() * r;
    Eigen::MatrixXd Areg = JtJ;
    Areg.diagonal().array() += lambda * (JtJ.diagonal().array().abs() + 1e-12);
    const Eigen::VectorXd delta = Areg.ldlt().solve(-Jtr);
    const Eigen::VectorXd u_try = u + delta;
    const Eigen::VectorXd r_try = fit_residual(u_try, freqs, target, c_ref, g_max, dt);
    const double cost_try = r_try.squaredNorm();
    if (cost_try < cost) {
      u = u_try;
      r = r_try;
      cost = cost_try;
      lambda = std::max(lambda * 0.5, 1e-9);
      if (delta.norm() < 1e-12 * (1.0 + u.norm())) break;
    } else {
      lambda *= 4.0;
      if (lambda > 1e12) break;
    }
  }

  out.params.x = decode_mechs(u, g_max);
  out.params.y = out.params.x;
  out.residual_rel = std::sqrt(cost / nf) / t_mid;
  if (out.residual_rel > 0.15)
    throw Error("attenuation-fit-failed",
                "residual " + std::to_string(out.residual_rel) + " exceeds 15% of mid-band target");
  return out;
}

RelaxProfile make_absorbing_boundary(const SolverConfig& cfg, Eigen::Index H, Eigen::Index W,
                                     double grading_exponent, double target_reflection) {
  RelaxProfile prof;
  prof.d_x = Eigen::ArrayXXd::Zero(H, W);
  prof.d_y = Eigen::ArrayXXd::Zero(H, W);
  const int width = cfg.boundary.width_cells;
  if (cfg.boundary.kind == Boundary::Kind::reflective || width == 0) return prof;

  const double L = width * cfg.dx_m;
  const double d_max =
      -cfg.c_ref * (grading_exponent + 1.0) * std::log(target_reflection) / (2.0 * L);
  auto grade = [&](int depth_into_layer) {
    const double xi = static_cast<double>(depth_into_layer) / width;
    return d_max * std::pow(xi, grading_exponent);
  };
  for (int i = 0; i < std::min<Eigen::Index>(width, W); ++i) {
    const double d = grade(width - i);
    if (cfg.boundary.left) prof.d_x.col(i) = prof.d_x.col(i).max(d);
    if (cfg.boundary.right) prof.d_x.col(W - 1 - i) = prof.d_x.col(W - 1 - i).max(d);
  }
  for (int i = 0; i < std::min<Eigen::Index>(width, H); ++i) {
    const double d = grade(width - i);
    if (cfg.boundary.top) prof.d_y.row(i) = prof.d_y.row(i).max(d);
    if (cfg.boundary.bottom) prof.d_y.row(H - 1 - i) = prof.d_y.row(H - 1 - i).max(d);
  }
  return prof;
}

}  // namespace pwt::solver
