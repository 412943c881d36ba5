// SPDX-License-Identifier: Apache-2.0
#include "pwt/nop/model.hpp"

#include <algorithm>
#include <cmath>

#include "pwt/error.hpp"
#include "pwt/fftutil.hpp"
#include "pwt/metrics.hpp"

namespace pwt::nop {

namespace {

Tensor kaiming_uniform(std::vector<std::int64_t> shape, Eigen::Index fan_in, CounterRng& rng) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = rng.uniform(-bound, bound);
  return t;
}

Tensor complex_normal(std::vector<std::int64_t> shape, double scale, CounterRng& rng) {
  Tensor t(std::move(shape));
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = scale * rng.next_normal();
  return t;
}

}  // namespace

FourierFeatures temporal_fourier_features(const Tensor& rf) {
  if (rf.shape.size() != 3) throw Error("bad-tensor-op", "expected [T, N_t, N_e]");
  const Eigen::Index T = rf.shape[0], n_rx = rf.shape[1], n_ev = rf.shape[2];
  if (T < 2) throw Error("bad-tensor-op", "need at least two time samples");
  const Eigen::Index F = T / 2 + 1;
  FourierFeatures out;
  out.freq_bins = F;
  out.n_rx = n_rx;
  out.n_events = n_ev;
  out.mag = Tensor({F, n_rx, n_ev});
  out.cos_phase = Tensor({F, n_rx, n_ev});
  out.sin_phase = Tensor({F, n_rx, n_ev});
  Eigen::ArrayXd trace(T);
  for (Eigen::Index m = 0; m < n_rx; ++m)
    for (Eigen::Index e = 0; e < n_ev; ++e) {
      for (Eigen::Index t = 0; t < T; ++t) trace(t) = rf.data((t * n_rx + m) * n_ev + e);
      const CplxVec spec = rfft(trace);
      for (Eigen::Index f = 0; f < F; ++f) {
        const double re = spec(f).real(), im = spec(f).imag();
        const double mag = std::hypot(re, im);
        const Eigen::Index idx = (f * n_rx + m) * n_ev + e;
        out.mag.data(idx) = mag;
        out.cos_phase.data(idx) = (mag > 0.0) ? re / mag : 1.0;
        out.sin_phase.data(idx) = (mag > 0.0) ? im / mag : 0.0;
      }
    }
  return out;
}

void LunaConfig::validate() const {
  if (T < 2 || n_rx < 1 || n_events < 1) throw Error("bad-model-config", "input dims");
  if (modes < 1 || modes > freq_bins())
    throw Error("bad-model-config", "modes must lie in 1..T/2+1");
  if (fno_channels < 1 || spatial_base < 2 || out_depth < 1)
    throw Error("bad-model-config", "channel sizes");
  if (n_rx % 8 != 0 || n_events % 8 != 0)
    throw Error("bad-model-config", "receiver/event dims must be divisible by 8");
}

void SegConfig::validate() const {
  if (image_size % 16 != 0) throw Error("bad-model-config", "image size must divide by 16");
  if (base < 2) throw Error("bad-model-config", "base channels");
}

LunaParams init_luna(ParamStore& store, const LunaConfig& cfg, CounterRng rng) {
  cfg.validate();
  LunaParams p;
  p.cfg = cfg;
  const Eigen::Index C = cfg.fno_channels;
  const Eigen::Index F = cfg.freq_bins();
  const Eigen::Index C0 = cfg.spatial_base;

  p.lift_re = store.add("lift.re", kaiming_uniform({4, C}, 4, rng));
  p.lift_im = store.add("lift.im", kaiming_uniform({4, C}, 4, rng));
  for (int l = 0; l < 2; ++l) {
    const double scale = 1.0 / static_cast<double>(C * cfg.modes);
    p.fno_wre[l] = store.add("fno" + std::to_string(l) + ".wre",
                             complex_normal({cfg.modes, C, C}, scale, rng));
    p.fno_wim[l] = store.add("fno" + std::to_string(l) + ".wim",
                             complex_normal({cfg.modes, C, C}, scale, rng));
    p.fno_wpt[l] =
        store.add("fno" + std::to_string(l) + ".wpt", kaiming_uniform({C, C}, C, rng));
  }
  p.collapse_w = store.add("collapse.w", kaiming_uniform({2 * C * F, C}, 2 * C * F, rng));
  p.collapse_b = store.add("collapse.b", Tensor::zeros({C}));

  auto conv = [&](const std::string& name, Eigen::Index ci, Eigen::Index co) {
    const int w = store.add(name + ".w", kaiming_uniform({co, ci, 3, 3}, ci * 9, rng));
    const int g = store.add(name + ".g", Tensor::full({co}, 1.0));
    const int bt = store.add(name + ".beta", Tensor::zeros({co}));
    return std::array<int, 3>{w, g, bt};
  };

  p.stem_w = store.add("sp.stem.w", kaiming_uniform({C0, C, 3, 3}, C * 9, rng));
  p.stem_b = store.add("sp.stem.b", Tensor::zeros({C0}));
  auto mid = conv("sp.enc0", C0, C0);
  p.mid_w = mid[0];
  p.mid_g = mid[1];
  p.mid_bt = mid[2];
  const Eigen::Index enc_ci[3] = {C0, 2 * C0, 4 * C0};
  const Eigen::Index enc_co[3] = {2 * C0, 4 * C0, 4 * C0};
  for (int l = 0; l < 3; ++l) {
    auto e = conv("sp.enc" + std::to_string(l + 1), enc_ci[l], enc_co[l]);
    p.enc_w[l] = e[0];
    p.enc_g[l] = e[1];
    p.enc_bt[l] = e[2];
  }
  const Eigen::Index dec_ci[4] = {8 * C0, 4 * C0, 2 * C0, C0 + C};
  const Eigen::Index dec_co[4] = {4 * C0, 2 * C0, C0, C};
  for (int l = 0; l < 4; ++l) {
    auto d = conv("sp.dec" + std::to_string(l), dec_ci[l], dec_co[l]);
    p.dec_w[l] = d[0];
    p.dec_g[l] = d[1];
    p.dec_bt[l] = d[2];
  }
  p.final_w = store.add("sp.final.w", kaiming_uniform({C, C, 3, 3}, C * 9, rng));
  p.final_g = store.add("sp.final.g", Tensor::full({C}, 1.0));
  p.final_bt = store.add("sp.final.beta", Tensor::zeros({C}));

  p.head_w = store.add("head.w",
                       kaiming_uniform({C * cfg.n_rx, cfg.out_depth}, C * cfg.n_rx, rng));
  p.head_b = store.add("head.b", Tensor::zeros({cfg.out_depth}));
  return p;
}

SegParams init_segnet(ParamStore& store, const SegConfig& cfg, CounterRng rng) {
  cfg.validate();
  SegParams p;
  p.cfg = cfg;
  const Eigen::Index B = cfg.base;
  auto conv = [&](const std::string& name, Eigen::Index ci, Eigen::Index co) {
    const int w = store.add(name + ".w", kaiming_uniform({co, ci, 3, 3}, ci * 9, rng));
    const int g = store.add(name + ".g", Tensor::full({co}, 1.0));
    const int bt = store.add(name + ".beta", Tensor::zeros({co}));
    return std::array<int, 3>{w, g, bt};
  };
  const Eigen::Index eci[4] = {1, B, 2 * B, 4 * B};
  const Eigen::Index eco[4] = {B, 2 * B, 4 * B, 8 * B};
  for (int l = 0; l < 4; ++l) {
    auto e = conv("seg.enc" + std::to_string(l), eci[l], eco[l]);
    p.enc_w[l] = e[0];
    p.enc_g[l] = e[1];
    p.enc_bt[l] = e[2];
  }
  const Eigen::Index dci[4] = {8 * B + 4 * B, 4 * B + 2 * B, 2 * B + B, B};
  const Eigen::Index dco[4] = {4 * B, 2 * B, B, B};
  for (int l = 0; l < 4; ++l) {
    auto d = conv("seg.dec" + std::to_string(l), dci[l], dco[l]);
    p.dec_w[l] = d[0];
    p.dec_g[l] = d[1];
    p.dec_bt[l] = d[2];
  }
  p.out_w = store.add("seg.out.w", kaiming_uniform({2, B, 1, 1}, B, rng));
  p.out_b = store.add("seg.out.b", Tensor::zeros({2}));
  return p;
}

std::pair<Tape::VarId, Tape::VarId> fno_layer_forward(Tape& t, Tape::VarId xre, Tape::VarId xim,
                                                      int wre, int wim, int wpt,
                                                      Eigen::Index channels, Eigen::Index c_out,
                                                      Eigen::Index freq_bins, Eigen::Index batch,
                                                      Eigen::Index modes) {
  const auto Wre = t.param(wre);
  const auto Wim = t.param(wim);
  const auto Wpt = t.param(wpt);
  const auto mm = t.complex_mode_mix(xre, xim, Wre, Wim, modes);
  auto spec_re = t.take_plane(mm, 0);
  auto spec_im = t.take_plane(mm, 1);
  const Eigen::Index n = freq_bins * batch;
  auto flat_re = t.reshape(xre, {channels, n});
  auto flat_im = t.reshape(xim, {channels, n});
  auto pt_re = t.reshape(t.channel_mix(flat_re, Wpt, channels, n, c_out), {c_out, freq_bins, batch});
  auto pt_im = t.reshape(t.channel_mix(flat_im, Wpt, channels, n, c_out), {c_out, freq_bins, batch});
  return {t.gelu(t.add(spec_re, pt_re)), t.gelu(t.add(spec_im, pt_im))};
}

namespace {

Tape::VarId conv_norm_gelu(Tape& t, Tape::VarId x, int w, int g, int bt, int stride,
                           Eigen::Index c_out) {
  auto y = t.conv2d(x, t.param(w), t.constant(Tensor::zeros({c_out})), stride);
  y = t.channel_norm(y, t.param(g), t.param(bt));
  return t.gelu(y);
}

}  // namespace

Tape::VarId luna_forward(Tape& t, const LunaParams& p, const FourierFeatures& feat,
                         const Eigen::ArrayXd& wall_profile) {
  const LunaConfig& cfg = p.cfg;
  const Eigen::Index F = cfg.freq_bins();
  const Eigen::Index B = cfg.n_rx * cfg.n_events;
  if (feat.freq_bins != F || feat.n_rx != cfg.n_rx || feat.n_events != cfg.n_events)
    throw Error("bad-model-config", "feature dims do not match the model");
  if (wall_profile.size() != cfg.n_events)
    throw Error("bad-model-config", "wall profile length != n_events");

  // Input features: compressed magnitude, phase (cos, sin), wall channel.
  // asinh keeps the wide spectral dynamic range differentiably bounded; the
  // RMS normalizer is invariant to circular time shifts.
  Tensor x({4, F, cfg.n_rx, cfg.n_events});
  const double rms =
      std::sqrt(feat.mag.data.square().sum() / static_cast<double>(cfg.T * B)) + 1e-30;
  for (Eigen::Index i = 0; i < F * B; ++i) {
    x.data(i) = std::asinh(feat.mag.data(i) / rms);
    x.data(F * B + i) = cfg.magnitude_only ? 0.0 : feat.cos_phase.data(i);
    x.data(2 * F * B + i) = cfg.magnitude_only ? 0.0 : feat.sin_phase.data(i);
  }
  for (Eigen::Index f = 0; f < F; ++f)
    for (Eigen::Index m = 0; m < cfg.n_rx; ++m)
      for (Eigen::Index e = 0; e < cfg.n_events; ++e)
        x.data(3 * F * B + (f * cfg.n_rx + m) * cfg.n_events + e) = wall_profile(e);

  auto input = t.constant(std::move(x));
  auto flat = t.reshape(input, {4, F * B});
  const Eigen::Index C = cfg.fno_channels;
  auto xre = t.reshape(t.channel_mix(flat, t.param(p.lift_re), 4, F * B, C), {C, F, B});
  auto xim = t.reshape(t.channel_mix(flat, t.param(p.lift_im), 4, F * B, C), {C, F, B});

  for (int l = 0; l < 2; ++l) {
    auto [yre, yim] = fno_layer_forward(t, xre, xim, p.fno_wre[l], p.fno_wim[l], p.fno_wpt[l], C,
                                        C, F, B, cfg.modes);
    xre = yre;
    xim = yim;
  }

  // Collapse the spectral axis into per-(receiver,event) features.
  auto zre = t.reshape(xre, {C * F, 1, B});
  auto zim = t.reshape(xim, {C * F, 1, B});
  auto z = t.reshape(t.concat_c(zre, zim), {2 * C * F, B});
  auto sp_in = t.channel_mix(z, t.param(p.collapse_w), 2 * C * F, B, C);
  sp_in = t.add_colvec(sp_in, t.param(p.collapse_b), C, B);
  auto img = t.reshape(sp_in, {C, cfg.n_rx, cfg.n_events});

  // Spatial encoder-decoder over the (receiver, event) grid.
  const Eigen::Index C0 = cfg.spatial_base;
  auto stem = t.gelu(t.conv2d(img, t.param(p.stem_w), t.param(p.stem_b), 1));
  auto e1 = conv_norm_gelu(t, stem, p.mid_w, p.mid_g, p.mid_bt, 1, C0);  // C0 @ full
  auto e2 = conv_norm_gelu(t, e1, p.enc_w[0], p.enc_g[0], p.enc_bt[0], 2, 2 * C0);
  auto e3 = conv_norm_gelu(t, e2, p.enc_w[1], p.enc_g[1], p.enc_bt[1], 2, 4 * C0);
  auto e4 = conv_norm_gelu(t, e3, p.enc_w[2], p.enc_g[2], p.enc_bt[2], 2, 4 * C0);

  auto d1 = conv_norm_gelu(t, t.concat_c(t.upsample2x(e4), e3), p.dec_w[0], p.dec_g[0],
                           p.dec_bt[0], 1, 4 * C0);                       // 8C0 -> 4C0
  auto d2 = conv_norm_gelu(t, t.upsample2x(d1), p.dec_w[1], p.dec_g[1], p.dec_bt[1], 1, 2 * C0);
  auto d3 = conv_norm_gelu(t, t.upsample2x(d2), p.dec_w[2], p.dec_g[2], p.dec_bt[2], 1, C0);
  auto d4 = conv_norm_gelu(t, t.concat_c(d3, img), p.dec_w[3], p.dec_g[3], p.dec_bt[3], 1, C);

  auto fin = t.conv2d(d4, t.transpose_weight(t.param(p.final_w)),
                      t.constant(Tensor::zeros({C})), 1);
  fin = t.channel_norm(fin, t.param(p.final_g), t.param(p.final_bt));

  // Head: fold (channel, receiver) into the depth axis per event column.
  auto folded = t.reshape(fin, {C * cfg.n_rx, cfg.n_events});
  auto logits = t.channel_mix(folded, t.param(p.head_w), C * cfg.n_rx, cfg.n_events,
                              cfg.out_depth);
  logits = t.add_colvec(logits, t.param(p.head_b), cfg.out_depth, cfg.n_events);
  return t.sigmoid(logits);
}

Tape::VarId segnet_forward(Tape& t, const SegParams& p, const Tensor& image) {
  const Eigen::Index S = p.cfg.image_size;
  if (image.shape != std::vector<std::int64_t>{1, S, S})
    throw Error("bad-model-config", "segnet expects [1,S,S]");
  const Eigen::Index B = p.cfg.base;
  auto x = t.constant(image);
  auto e1 = conv_norm_gelu(t, x, p.enc_w[0], p.enc_g[0], p.enc_bt[0], 2, B);           // S/2
  auto e2 = conv_norm_gelu(t, e1, p.enc_w[1], p.enc_g[1], p.enc_bt[1], 2, 2 * B);      // S/4
  auto e3 = conv_norm_gelu(t, e2, p.enc_w[2], p.enc_g[2], p.enc_bt[2], 2, 4 * B);      // S/8
  auto e4 = conv_norm_gelu(t, e3, p.enc_w[3], p.enc_g[3], p.enc_bt[3], 2, 8 * B);      // S/16

  auto d1 = conv_norm_gelu(t, t.concat_c(t.upsample2x(e4), e3), p.dec_w[0], p.dec_g[0],
                           p.dec_bt[0], 1, 4 * B);
  auto d2 = conv_norm_gelu(t, t.concat_c(t.upsample2x(d1), e2), p.dec_w[1], p.dec_g[1],
                           p.dec_bt[1], 1, 2 * B);
  auto d3 = conv_norm_gelu(t, t.concat_c(t.upsample2x(d2), e1), p.dec_w[2], p.dec_g[2],
                           p.dec_bt[2], 1, B);
  auto d4 = conv_norm_gelu(t, t.upsample2x(d3), p.dec_w[3], p.dec_g[3], p.dec_bt[3], 1, B);
  auto logits = t.conv2d(d4, t.param(p.out_w), t.param(p.out_b), 1);
  return t.softmax2(logits);
}

Tape::VarId loss_total(Tape& t, Tape::VarId pred, const Tensor& truth_map, double truth_gamma,
                       double eta, bool fine_tune, LossParts* parts) {
  auto ce = t.bce_sum(pred, truth_map, 1e-7);
  auto gamma_hat = t.mean_all(pred);
  auto l_gamma = t.abs_diff(gamma_hat, Tensor::scalar(truth_gamma));
  Tape::VarId total = fine_tune ? t.scale(l_gamma, eta) : t.add(ce, t.scale(l_gamma, eta));
  if (parts) {
    parts->ce = t.val(ce).data(0);
    parts->gamma_term = eta * t.val(l_gamma).data(0);
    parts->pred_gamma = t.val(gamma_hat).data(0);
    parts->total = t.val(total).data(0);
  }
  return total;
}

Eigen::ArrayXXd luna_infer(const ParamStore& store, const LunaParams& p, const Tensor& rf,
                           const Eigen::ArrayXd& wall_profile) {
  Tape t(store);
  const auto feat = temporal_fourier_features(rf);
  const auto out = luna_forward(t, p, feat, wall_profile);
  const Tensor& v = t.val(out);
  Eigen::ArrayXXd img(p.cfg.out_depth, p.cfg.n_events);
  for (Eigen::Index r = 0; r < img.rows(); ++r)
    for (Eigen::Index c = 0; c < img.cols(); ++c) img(r, c) = v.data(r * img.cols() + c);
  return img;
}

Eigen::ArrayXXd segnet_infer(const ParamStore& store, const SegParams& p, const Tensor& image) {
  Tape t(store);
  const auto out = segnet_forward(t, p, image);
  const Eigen::Index S = p.cfg.image_size;
  Eigen::ArrayXXd wall(S, S);
  for (Eigen::Index r = 0; r < S; ++r)
    for (Eigen::Index c = 0; c < S; ++c) wall(r, c) = t.val(out).data(r * S + c);
  return wall;
}

Eigen::ArrayXd pleural_line_rows(const Eigen::ArrayXXd& wall_prob) {
  Eigen::ArrayXd rows(wall_prob.cols());
  for (Eigen::Index c = 0; c < wall_prob.cols(); ++c) {
    Eigen::Index deepest = 0;
    for (Eigen::Index r = 0; r < wall_prob.rows(); ++r)
      if (wall_prob(r, c) >= 0.5) deepest = r;
    rows(c) = static_cast<double>(deepest);
  }
  return rows;
}

TrainConfig TrainConfig::with_eta(double eta) {
  TrainConfig c;
  c.eta = eta;
  c.lr = eta * 0.002;
  c.beta2 = std::pow(0.99, eta);
  return c;
}

void adam_step(ParamStore& store, const std::vector<Tensor>& grads, const TrainConfig& cfg,
               AdamState& state) {
  if (static_cast<int>(grads.size()) != store.count())
    throw Error("bad-optimizer-state", "gradient count != parameter count");
  if (state.m.empty()) {
    state.m = store.zero_grads();
    state.v = store.zero_grads();
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (int i = 0; i < store.count(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    if (grads[idx].size() == 0) continue;  // parameter untouched this step
    auto& m = state.m[idx].data;
    auto& v = state.v[idx].data;
    const auto& g = grads[idx].data;
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.square();
    store.value(i).data -= cfg.lr * (m / bc1) / ((v / bc2).sqrt() + cfg.adam_eps);
  }
}

Tensor augment(const Tensor& rf, const TrainConfig& cfg, CounterRng& rng) {
  if (rf.shape.size() != 3) throw Error("bad-tensor-op", "augment expects [T, N_t, N_e]");
  const Eigen::Index T = rf.shape[0], n_rx = rf.shape[1], n_ev = rf.shape[2];
  if (cfg.mask_t_max > T || cfg.mask_s_max > n_rx * n_ev)
    throw Error("bad-model-config", "mask bounds exceed tensor dims");
  Tensor out = rf;

  const auto m_t = static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(cfg.mask_t_max) + 1));
  if (m_t > 0) out.data.head(m_t * n_rx * n_ev).setZero();

  const Eigen::Index n_traces = n_rx * n_ev;
  const auto m_s = static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(cfg.mask_s_max) + 1));
  if (m_s > 0) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n_traces));
    for (Eigen::Index i = 0; i < n_traces; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (Eigen::Index i = 0; i < m_s; ++i) {
      const auto j = i + static_cast<Eigen::Index>(rng.next_below(static_cast<std::uint64_t>(n_traces - i)));
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      for (Eigen::Index t = 0; t < T; ++t) out.data(t * n_traces + idx[static_cast<std::size_t>(i)]) = 0.0;
    }
  }

  if (cfg.noise_enabled && std::isfinite(cfg.noise_snr_db)) {
    const double p_signal = out.data.square().mean();
    if (p_signal > 0.0) {
      const double sigma = std::sqrt(p_signal / std::pow(10.0, cfg.noise_snr_db / 10.0));
      for (Eigen::Index i = 0; i < out.size(); ++i) out.data(i) += sigma * rng.next_normal();
    }
  }
  return out;
}

PlattFit platt_calibrate(const Eigen::ArrayXd& preds, const Eigen::ArrayXd& truths) {
  if (preds.size() != truths.size() || preds.size() == 0)
    throw Error("calibration-degenerate", "empty or mismatched validation set");
  const double pos = truths.sum();
  if (pos == 0.0 || pos == static_cast<double>(truths.size()))
    throw Error("calibration-degenerate", "validation set has a single class");

  const Eigen::ArrayXd z = (preds.max(1e-7).min(1.0 - 1e-7) /
                            (1.0 - preds.max(1e-7).min(1.0 - 1e-7)))
                               .log();
  PlattFit fit;
  fit.ece_before = metrics::calibration_curve(preds, truths).ece;
  auto ce_of = [&](double a, double b) {
    const Eigen::ArrayXd q = (1.0 / (1.0 + (-(a * z + b)).exp())).max(1e-12).min(1.0 - 1e-12);
    return -(truths * q.log() + (1.0 - truths) * (1.0 - q).log()).sum();
  };
  double a = 1.0, b = 0.0;
  double ce = ce_of(a, b);
  for (int it = 0; it < 200; ++it) {
    const Eigen::ArrayXd q = 1.0 / (1.0 + (-(a * z + b)).exp());
    const Eigen::ArrayXd r = q - truths;
    const double ga = (r * z).sum();
    const double gb = r.sum();
    const Eigen::ArrayXd w = (q * (1.0 - q)).max(1e-12);
    const double haa = (w * z.square()).sum() + 1e-9;
    const double hab = (w * z).sum();
    const double hbb = w.sum() + 1e-9;
    const double det = haa * hbb - hab * hab;
    const double da = (hbb * ga - hab * gb) / det;
    const double db = (haa * gb - hab * ga) / det;
    // damped Newton: saturated logits flatten the Hessian, so full steps
    // can overshoot badly
    double step = 1.0;
    bool improved = false;
    while (step > 1e-12) {
      const double ce_try = ce_of(a - step * da, b - step * db);
      if (ce_try < ce) {
        a -= step * da;
        b -= step * db;
        ce = ce_try;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved || std::abs(da) + std::abs(db) < 1e-12) break;
  }
  fit.a = a;
  fit.b = b;
  const Eigen::ArrayXd calibrated = 1.0 / (1.0 + (-(a * z + b)).exp());
  fit.ece_after = metrics::calibration_curve(calibrated, truths).ece;
  return fit;
}

Eigen::ArrayXXd platt_apply(const Eigen::ArrayXXd& probs, const PlattFit& fit) {
  const Eigen::ArrayXXd clamped = probs.max(1e-7).min(1.0 - 1e-7);
  const Eigen::ArrayXXd z = (clamped / (1.0 - clamped)).log();
  return 1.0 / (1.0 + (-(fit.a * z + fit.b)).exp());
}

Eigen::ArrayXXd resize_bilinear(const Eigen::ArrayXXd& img, Eigen::Index rows, Eigen::Index cols) {
  Eigen::ArrayXXd out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double fr = (static_cast<double>(r) + 0.5) * static_cast<double>(img.rows()) /
                          static_cast<double>(rows) -
                      0.5;
    const auto r0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(fr)), 0,
                                             img.rows() - 1);
    const auto r1 = std::min<Eigen::Index>(r0 + 1, img.rows() - 1);
    const double wr = std::clamp(fr - static_cast<double>(r0), 0.0, 1.0);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double fc = (static_cast<double>(c) + 0.5) * static_cast<double>(img.cols()) /
                            static_cast<double>(cols) -
                        0.5;
      const auto c0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(fc)), 0,
                                               img.cols() - 1);
      const auto c1 = std::min<Eigen::Index>(c0 + 1, img.cols() - 1);
      const double wc = std::clamp(fc - static_cast<double>(c0), 0.0, 1.0);
      out(r, c) = (1 - wr) * ((1 - wc) * img(r0, c0) + wc * img(r0, c1)) +
                  wr * ((1 - wc) * img(r1, c0) + wc * img(r1, c1));
    }
  }
  return out;
}

}  // namespace pwt::nop
