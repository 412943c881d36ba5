// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "pwt/phantom.hpp"

namespace pwt::solver {

/// Second-order-in-time leapfrog over a staggered grid: pressure at cell
/// centers, velocities at faces. Spatial first derivatives use standard
/// staggered central coefficients of order 2M, M in {1,2,3,4}.
struct Boundary {
  enum class Kind { absorbing, reflective };
  Kind kind = Kind::absorbing;
  int width_cells = 16;
  // Absorbing strips per edge; the top edge usually stays reflective to act
  // as the transducer face.
  bool top = false, bottom = true, left = true, right = true;
};

struct SolverConfig {
  double dx_m = 0.0;
  double dt_s = 0.0;
  int n_steps = 0;
  double c_ref = 1540.0;
  int spatial_order = 4;  // 2M
  int n_relax = 0;        // attenuation mechanisms per axis, 0..3
  Boundary boundary;
  bool nonlinear = false;

  double cfl() const { return c_ref * dt_s / dx_m; }
  /// Throws "bad-solver-config" on CFL > 0.5 + 1e-9 and other violations.
  void validate() const;
};

/// One relaxation mechanism: d is the scaling-dependent damping, alpha the
/// scaling-independent one. Kernel zeta(t) = -(d/k^2) exp(-(d/k+alpha) t) H(t).
struct RelaxMechanism {
  double d = 0.0;
  double alpha = 0.0;
};

struct AxisRelax {
  double kappa_scale = 1.0;  // >= 1; scales the plain derivative
  std::vector<RelaxMechanism> mech;
};

/// With all d = alpha = 0 and kappa = 1 the delayed derivative reduces to
/// the plain spatial derivative. The nabla_2 operator shares these values.
struct RelaxParams {
  AxisRelax x, y;
};

/// Spatially graded scaling-dependent damping for the absorbing layer,
/// sampled at cell centers (zero in the interior).
struct RelaxProfile {
  Eigen::ArrayXXd d_x;
  Eigen::ArrayXXd d_y;
};

/// Recursive-convolution coefficients integrating the exponential kernel
/// exactly over one step: psi' = b psi + a grad.
struct MemCoeff {
  double a = 0.0;
  double b = 1.0;
};
MemCoeff memory_coeffs(double d, double alpha, double kappa, double dt);

/// psi' = b psi + a grad; returns the delayed derivative grad/kappa + psi'
/// (single-mechanism form of the operator; the solver sums mechanisms).
std::pair<double, double> update_memory(double psi, double grad, const RelaxMechanism& m,
                                        double kappa, double dt);

struct GridPoint {
  int r = 0;
  int c = 0;
};

struct SourceTerm {
  std::vector<GridPoint> cells;
  std::vector<Eigen::ArrayXd> waveforms;  // additive pressure per step, one per cell
};

struct ReceiverSet {
  std::vector<GridPoint> cells;
};

struct WaveState {
  Eigen::ArrayXXd p;   // (H, W) cell centers, Pa
  Eigen::ArrayXXd vx;  // (H, W-1) x-faces
  Eigen::ArrayXXd vy;  // (H-1, W) y-faces
  // Memory variables per (operator, axis) slot, one grid per mechanism.
  std::vector<Eigen::ArrayXXd> psi_x1, psi_y1, psi_x2, psi_y2;
  int t_step = 0;
};

/// Precomputed update engine. One instance per concurrent wavefield; step()
/// mutates the passed state only.
class Stepper {
 public:
  Stepper(const phantom::MediumMap& medium, const SolverConfig& cfg, const RelaxParams& relax,
          const RelaxProfile* boundary_profile = nullptr);

  WaveState make_state() const;

  /// One leapfrog update: velocities from pressure gradients (nabla_1 with
  /// memory update), pressure from velocity divergence (nabla_2), optional
  /// nonlinear rho/kappa modification with the latest local p, then source
  /// injection, air clamp, step counter. Throws "solver-diverged" on
  /// non-finite fields.
  void step(WaveState& s, const SourceTerm* src = nullptr) const;

  void sample(const WaveState& s, const ReceiverSet& rx,
              Eigen::Ref<Eigen::ArrayXd, 0, Eigen::InnerStride<>> out) const;

  /// Optional per-step CSV diagnostics: "step,energy,max_abs_p".
  void set_diagnostics(std::ostream* os) { diag_ = os; }

  Eigen::Index rows() const { return H_; }
  Eigen::Index cols() const { return W_; }

 private:
  struct MechSlot {
    std::vector<MemCoeff> uniform;
    bool has_profile = false;
    Eigen::ArrayXXd prof_a, prof_b;
    double inv_kappa = 1.0;
  };

  void apply_slot(const MechSlot& slot, std::vector<Eigen::ArrayXXd>& psi,
                  Eigen::ArrayXXd& grad) const;
  void check_finite(const WaveState& s) const;

  Eigen::Index H_ = 0, W_ = 0;
  SolverConfig cfg_;
  int taps_ = 2;
  std::array<double, 4> coef_{};

  Eigen::ArrayXXd rho0_x_, rho0_y_;      // face densities
  Eigen::ArrayXXd k0_x_, k0_y_;          // face compressibilities (nonlinear path)
  Eigen::ArrayXXd inv_rho_dt_x_, inv_rho_dt_y_;  // dt / rho0 at faces (linear path)
  Eigen::ArrayXXd bulk_dt_;              // dt * rho0 c0^2 at centers (linear path)
  Eigen::ArrayXXd k0_cell_;              // kappa_0 at centers
  Eigen::ArrayXXd one_m_2beta_k0_;       // kappa_0 (1 - 2 beta), nonlinear kappa factor
  std::vector<Eigen::Index> air_cells_;  // linear indices into p

  MechSlot slot_x1_, slot_y1_, slot_x2_, slot_y2_;

  mutable Eigen::ArrayXXd gx_, gy_, divx_, divy_, scratch_x_, scratch_y_, scratch_c_;
  std::ostream* diag_ = nullptr;
};

/// Single-shot form of the module contract; builds a Stepper per call, so
/// loops should use Stepper directly.
WaveState step(WaveState state, const phantom::MediumMap& medium, const SolverConfig& cfg,
               const RelaxParams& relax, const RelaxProfile* boundary_profile = nullptr,
               const SourceTerm* src = nullptr);

/// Discrete acoustic energy sum((p^2 k0)/2 + rho0 |v|^2 / 2) dx^2.
double acoustic_energy(const WaveState& s, const phantom::MediumMap& medium, double dx);

/// Least-squares fit of relaxation constants so the plane-wave attenuation
/// matches alpha0 * f^y (alpha0 in dB/cm/MHz^y) across [f_lo, f_hi]. Both
/// axes receive the same mechanisms. Pole rates are kept bounded; when dt
/// is given the fit targets the discrete recursive-convolution response the
/// solver realizes at that step. Throws "attenuation-fit-failed" when the
/// residual exceeds 15% of the mid-band target.
struct AttenuationFit {
  RelaxParams params;
  double residual_rel = 0.0;  // RMS error relative to mid-band target
};
AttenuationFit fit_attenuation(double alpha0_db_cm_mhz, double y, double f_lo, double f_hi,
                               int n_relax, double c_ref = 1540.0, double dt = 0.0);

/// Plane-wave attenuation (Np/m) of the relaxation model at frequency f
/// (continuous kernel for dt == 0, discrete recursive form otherwise).
double model_attenuation_np_m(const AxisRelax& axis, double f, double c_ref, double dt = 0.0);

/// Polynomial-graded damping profile in the configured boundary strips;
/// interior cells stay zero. Width 0 yields the identity (all-zero) profile.
RelaxProfile make_absorbing_boundary(const SolverConfig& cfg, Eigen::Index H, Eigen::Index W,
                                     double grading_exponent = 3.0, double target_reflection = 1e-4);

}  // namespace pwt::solver
