// SPDX-License-Identifier: Apache-2.0
#include "pwt/sequence.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

#include "pwt/error.hpp"

namespace pwt::sequence {

namespace {

double bessel_i0(double x) {
  double term = 1.0, sum = 1.0;
  const double q = 0.25 * x * x;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * k);
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

// Kaiser-windowed sinc low-pass, unit DC gain, odd length.
Eigen::ArrayXd design_lowpass(double f_cut_norm, int n_taps, double beta) {
  Eigen::ArrayXd h(n_taps);
  const int mid = (n_taps - 1) / 2;
  const double i0b = bessel_i0(beta);
  for (int n = 0; n < n_taps; ++n) {
    const double m = n - mid;
    const double sinc = (m == 0.0) ? 2.0 * f_cut_norm
                                   : std::sin(2.0 * std::numbers::pi * f_cut_norm * m) /
                                         (std::numbers::pi * m);
    const double r = 2.0 * m / (n_taps - 1);
    h(n) = sinc * bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0b;
  }
  h /= h.sum();
  return h;
}

// Fractional-delay copy of a waveform via linear interpolation.
Eigen::ArrayXd delayed_waveform(const Eigen::ArrayXd& w, double delay_samples, Eigen::Index n) {
  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double src = static_cast<double>(i) - delay_samples;
    if (src < 0.0) continue;
    const auto i0 = static_cast<Eigen::Index>(std::floor(src));
    if (i0 + 1 >= w.size()) break;
    const double frac = src - static_cast<double>(i0);
    out(i) = (1.0 - frac) * w(i0) + frac * w(i0 + 1);
  }
  return out;
}

}  // namespace

void TransducerSpec::validate() const {
  if (n_active < 1 || n_active > n_elements_total)
    throw Error("bad-transducer", "aperture exceeds the element count");
  if (n_events < 1) throw Error("bad-transducer", "need at least one event");
  if (fs_out < 2.0 * f_c * (1.0 + 0.5 * frac_bandwidth))
    throw Error("bad-transducer", "fs_out below the band Nyquist");
  if (pitch_m <= 0.0 || f_c <= 0.0) throw Error("bad-transducer", "non-positive geometry");
}

Eigen::ArrayXd RfTensor::trace(Eigen::Index m, Eigen::Index e) const {
  Eigen::ArrayXd out(T);
  for (Eigen::Index t = 0; t < T; ++t) out(t) = at(t, m, e);
  return out;
}

Eigen::Index rf_sample_count(double duration_s, double fs_out) {
  return static_cast<Eigen::Index>(std::llround(duration_s * fs_out));
}

Eigen::ArrayXd synth_pulse(double f_c, double n_cycles, double frac_bandwidth, double dt,
                           double amplitude) {
  if (f_c <= 0.0 || dt <= 0.0) throw Error("bad-pulse", "non-positive f_c or dt");
  if (1.0 / (f_c * dt) < 10.0)
    throw Error("bad-pulse", "dt does not resolve f_c (needs >= 10 samples per cycle)");
  // Gaussian envelope sized from the -6 dB fractional bandwidth:
  // |P(f)| ~ exp(-2 pi^2 sigma^2 (f - f_c)^2), -6 dB full width
  // 2 sqrt(ln 2 / 2) / (pi sigma). The 1.3 factor compensates the spectral
  // broadening from truncating the envelope to n_cycles.
  const double sigma = 1.3 * 2.0 * std::sqrt(0.5 * std::numbers::ln2) /
                       (std::numbers::pi * frac_bandwidth * f_c);
  const double dur = n_cycles / f_c;
  const auto n = static_cast<Eigen::Index>(std::floor(dur / dt)) + 1;
  Eigen::ArrayXd w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double u = (t - 0.5 * dur) / sigma;
    w(i) = amplitude * std::exp(-0.5 * u * u) * std::sin(2.0 * std::numbers::pi * f_c * t);
  }
  return w;
}

Eigen::ArrayXd focal_delays(int n_active, double focal_depth_m, double pitch_m, double c_ref) {
  if (focal_depth_m <= 0.0) throw Error("bad-transmit", "focal depth must be positive");
  Eigen::ArrayXd tau(n_active);
  const double x_center = 0.5 * (n_active - 1);
  double max_path = 0.0;
  for (int i = 0; i < n_active; ++i) {
    const double x = (static_cast<double>(i) - x_center) * pitch_m;
    max_path = std::max(max_path, std::hypot(focal_depth_m, x));
  }
  for (int i = 0; i < n_active; ++i) {
    const double x = (static_cast<double>(i) - x_center) * pitch_m;
    tau(i) = (max_path - std::hypot(focal_depth_m, x)) / c_ref;
  }
  return tau;
}

EventRun run_event(const phantom::MediumMap& medium, const TransducerSpec& td,
                   const TransmitEvent& ev, const solver::SolverConfig& cfg,
                   const solver::RelaxParams& relax, const std::vector<int>& elem_col,
                   int source_row) {
  td.validate();
  cfg.validate();
  if (ev.delays_s.size() != td.n_active) throw Error("bad-transmit", "delay count != aperture");

  // Lateral crop centered on the active aperture.
  const int pad = cfg.boundary.width_cells + 8;
  int col_lo = elem_col[static_cast<std::size_t>(ev.first_element)];
  int col_hi = elem_col[static_cast<std::size_t>(ev.first_element + td.n_active - 1)];
  if (col_lo > col_hi) std::swap(col_lo, col_hi);
  const int w_lo = std::max(0, col_lo - pad);
  const int w_hi = std::min<int>(static_cast<int>(medium.cols()), col_hi + pad + 1);
  const Eigen::Index Wc = w_hi - w_lo;
  const Eigen::Index H = medium.rows();
  if (Wc < 2 * (cfg.spatial_order / 2) + 2)
    throw Error("aperture-out-of-bounds", "event window too narrow");

  phantom::MediumMap crop;
  crop.pitch_m = medium.pitch_m;
  crop.rho0 = medium.rho0.middleCols(w_lo, Wc);
  crop.c0 = medium.c0.middleCols(w_lo, Wc);
  crop.beta = medium.beta.middleCols(w_lo, Wc);
  crop.atten_class = medium.atten_class.middleCols(w_lo, Wc);
  crop.air_mask = medium.air_mask.middleCols(w_lo, Wc);

  const auto profile = solver::make_absorbing_boundary(cfg, H, Wc);
  solver::Stepper st(crop, cfg, relax, &profile);
  solver::WaveState state = st.make_state();

  solver::SourceTerm src;
  solver::ReceiverSet rx;
  for (int i = 0; i < td.n_active; ++i) {
    const int col = elem_col[static_cast<std::size_t>(ev.first_element + i)] - w_lo;
    if (col < 0 || col >= Wc) throw Error("aperture-out-of-bounds", "element outside window");
    if (crop.air_mask(source_row, col))
      throw Error("bad-transmit", "element cell sits inside air");
    src.cells.push_back({source_row, col});
    src.waveforms.push_back(delayed_waveform(ev.pulse, ev.delays_s(i) / cfg.dt_s, cfg.n_steps));
    rx.cells.push_back({source_row, col});
  }

  EventRun out;
  out.traces.setZero(cfg.n_steps, td.n_active);
  out.pulse_center_s = ev.pulse_center_s;
  const double x_center = 0.5 * (td.n_active - 1);
  const auto c_lo = static_cast<int>(std::floor(x_center));
  out.center_delay_s = ev.delays_s(c_lo);
  for (int i = 0; i < cfg.n_steps; ++i) {
    st.step(state, &src);
    st.sample(state, rx, out.traces.row(i).transpose());
  }
  return out;
}

Eigen::ArrayXd decimate(const Eigen::ArrayXd& x, double fs_in, double fs_out) {
  Eigen::ArrayXXd m(x.size(), 1);
  m.col(0) = x;
  return decimate_columns(m, fs_in, fs_out).col(0);
}

Eigen::ArrayXXd decimate_columns(const Eigen::ArrayXXd& x, double fs_in, double fs_out) {
  const double ratio = fs_in / fs_out;
  const auto k = static_cast<Eigen::Index>(std::lround(ratio));
  if (k < 1 || std::abs(fs_in / static_cast<double>(k) - fs_out) > 0.005 * fs_out)
    throw Error("bad-decimation-ratio",
                "1/dt is not an integer multiple of fs_out within 0.5%");
  if (k == 1) return x;

  // Passband edge 0.45 fs_out (<= 1 dB), stopband from 0.6 fs_out (>= 40 dB):
  // sinc cutoff at the midpoint with a Kaiser window sized for the transition.
  const double f_cut_norm = 0.525 / ratio;
  const int n_taps = 2 * static_cast<int>(std::ceil(10.5 * ratio)) + 1;
  const Eigen::ArrayXd h = design_lowpass(f_cut_norm, n_taps, 4.55);
  const int mid = (n_taps - 1) / 2;

  const Eigen::Index n_in = x.rows();
  const Eigen::Index n_out = n_in / k;
  Eigen::ArrayXXd out(n_out, x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    for (Eigen::Index j = 0; j < n_out; ++j) {
      const Eigen::Index center = j * k;
      double acc = 0.0;
      for (int n = 0; n < n_taps; ++n) {
        Eigen::Index idx = center + n - mid;
        idx = std::clamp<Eigen::Index>(idx, 0, n_in - 1);  // replicate edges
        acc += h(n) * x(idx, c);
      }
      out(j, c) = acc;
    }
  }
  return out;
}

RfTensor acquire(const phantom::MediumMap& medium, const TransducerSpec& td,
                 double pleura_depth_m, const solver::SolverConfig& cfg,
                 const solver::RelaxParams& relax, const AcquisitionGeometry& geom,
                 int event_begin, int event_end, int n_workers) {
  td.validate();
  cfg.validate();
  if (event_end < 0) event_end = td.n_events;
  if (event_begin < 0 || event_begin > event_end || event_end > td.n_events)
    throw Error("bad-event-range", "events outside 0..n_events");

  const double fs_in = 1.0 / cfg.dt_s;
  const auto k = static_cast<Eigen::Index>(std::lround(fs_in / td.fs_out));
  const Eigen::Index T = cfg.n_steps / k;

  const int span = td.n_events - 1 + td.n_active;
  if (span > td.n_elements_total)
    throw Error("bad-transducer", "walking aperture exceeds the element count");
  std::vector<int> elem_col(static_cast<std::size_t>(span));
  const double pitch_cells = td.pitch_m / cfg.dx_m;
  for (int i = 0; i < span; ++i)
    elem_col[static_cast<std::size_t>(i)] =
        geom.first_element_col + static_cast<int>(std::lround(i * pitch_cells));

  const Eigen::ArrayXd pulse =
      synth_pulse(td.f_c, 2.0, td.frac_bandwidth, cfg.dt_s, td.source_pressure_pa);
  const double pulse_center = 0.5 * 2.0 / td.f_c;
  const Eigen::ArrayXd delays = focal_delays(td.n_active, pleura_depth_m, td.pitch_m, cfg.c_ref);

  const int n_run = event_end - event_begin;
  RfTensor rf;
  rf.T = T;
  rf.n_rx = td.n_active;
  rf.n_events = n_run;
  rf.data.assign(static_cast<std::size_t>(T * td.n_active * n_run), 0.0);
  rf.fs = td.fs_out;
  rf.pitch_m = td.pitch_m;
  rf.f_c = td.f_c;
  rf.focal_depth_m.assign(static_cast<std::size_t>(n_run), pleura_depth_m);

  const double x_center = 0.5 * (td.n_active - 1);
  rf.t0 = -(delays(static_cast<int>(std::floor(x_center))) + pulse_center);

  auto run_one = [&](int e) {
    TransmitEvent ev;
    ev.event_index = event_begin + e;
    ev.first_element = event_begin + e;
    ev.focal_depth_m = pleura_depth_m;
    ev.delays_s = delays;
    ev.pulse = pulse;
    ev.pulse_center_s = pulse_center;
    const EventRun run = run_event(medium, td, ev, cfg, relax, elem_col, geom.source_row);
    const Eigen::ArrayXXd dec = decimate_columns(run.traces, fs_in, td.fs_out);
    for (Eigen::Index t = 0; t < T; ++t)
      for (Eigen::Index m = 0; m < td.n_active; ++m) rf.at(t, m, e) = dec(t, m);
  };

  if (n_workers <= 1 || n_run <= 1) {
    for (int e = 0; e < n_run; ++e) run_one(e);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_workers));
    for (int wkr = 0; wkr < std::min(n_workers, n_run); ++wkr) {
      pool.emplace_back([&, wkr] {
        try {
          for (int e = next.fetch_add(1); e < n_run; e = next.fetch_add(1)) run_one(e);
        } catch (...) {
          errors[static_cast<std::size_t>(wkr)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors)
      if (err) std::rethrow_exception(err);
  }
  return rf;
}

}  // namespace pwt::sequence
