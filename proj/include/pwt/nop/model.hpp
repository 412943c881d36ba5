// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <utility>

#include "pwt/nop/autodiff.hpp"
#include "pwt/rng.hpp"

namespace pwt::nop {

/// Magnitude and (cos, sin) phase of the real FFT along the time axis,
/// other dims treated as batch. Each field is [F, N_t, N_e], F = T/2+1.
struct FourierFeatures {
  Tensor mag, cos_phase, sin_phase;
  Eigen::Index freq_bins = 0, n_rx = 0, n_events = 0;
};
FourierFeatures temporal_fourier_features(const Tensor& rf_t_rx_ev);

struct LunaConfig {
  Eigen::Index T = 256, n_rx = 16, n_events = 32;
  Eigen::Index fno_channels = 8;   // paper scale: 32
  Eigen::Index modes = 12;         // paper scale: 87 (scaled with the rFFT length)
  Eigen::Index spatial_base = 16;  // paper scale: 64
  Eigen::Index out_depth = 32;     // aeration-map rows
  bool magnitude_only = false;     // ablation: phase channels zeroed

  Eigen::Index freq_bins() const { return T / 2 + 1; }
  void validate() const;  // throws "bad-model-config" (modes > T/2+1, dims)
};

struct LunaParams {
  LunaConfig cfg;
  int lift_re = -1, lift_im = -1;
  std::array<int, 2> fno_wre{}, fno_wim{}, fno_wpt{};
  int collapse_w = -1, collapse_b = -1;
  int stem_w = -1, stem_b = -1;
  // normalized conv blocks carry no bias: the channel norm would cancel it
  std::array<int, 3> enc_w{}, enc_g{}, enc_bt{};  // stride-2 encoder convs
  int mid_w = -1, mid_g = -1, mid_bt = -1;        // full-res encoder conv
  std::array<int, 4> dec_w{}, dec_g{}, dec_bt{};
  int final_w = -1, final_g = -1, final_bt = -1;  // transposed conv + norm
  int head_w = -1, head_b = -1;
};
LunaParams init_luna(ParamStore& store, const LunaConfig& cfg, CounterRng rng);

struct SegConfig {
  Eigen::Index image_size = 96;  // paper scale: 400
  Eigen::Index base = 16;        // paper channel ladder 64,128,256,512 over base 64
  void validate() const;
};

struct SegParams {
  SegConfig cfg;
  std::array<int, 4> enc_w{}, enc_g{}, enc_bt{};
  std::array<int, 4> dec_w{}, dec_g{}, dec_bt{};
  int out_w = -1, out_b = -1;
};
SegParams init_segnet(ParamStore& store, const SegConfig& cfg, CounterRng rng);

/// One spectral layer: complex per-mode channel mixing on the first `modes`
/// bins plus a real pointwise path, summed, GELU on both components.
std::pair<Tape::VarId, Tape::VarId> fno_layer_forward(Tape& t, Tape::VarId xre, Tape::VarId xim,
                                                      int wre, int wim, int wpt,
                                                      Eigen::Index channels, Eigen::Index c_out,
                                                      Eigen::Index freq_bins, Eigen::Index batch,
                                                      Eigen::Index modes);

/// Full reconstruction graph. wall_profile is the per-event pleural depth in
/// [0, 1], broadcast along frequency and receiver dims as an input channel.
/// Output is [out_depth, n_events] sigmoid probabilities.
Tape::VarId luna_forward(Tape& t, const LunaParams& p, const FourierFeatures& feat,
                         const Eigen::ArrayXd& wall_profile);

/// Segmentation graph on a [1, S, S] image; output [2, S, S] softmax
/// (channel 0 = chest wall).
Tape::VarId segnet_forward(Tape& t, const SegParams& p, const Tensor& image);

struct LossParts {
  double total = 0.0, ce = 0.0, gamma_term = 0.0, pred_gamma = 0.0;
};

/// L = CE(pred, truth) + eta |gamma - mean(pred)|; fine-tune keeps only the
/// eta term. Predictions are clamped at 1e-7 inside the CE.
Tape::VarId loss_total(Tape& t, Tape::VarId pred, const Tensor& truth_map, double truth_gamma,
                       double eta, bool fine_tune = false, LossParts* parts = nullptr);

/// Inference wrappers (tape built internally, gradients discarded).
Eigen::ArrayXXd luna_infer(const ParamStore& store, const LunaParams& p, const Tensor& rf,
                           const Eigen::ArrayXd& wall_profile);
Eigen::ArrayXXd segnet_infer(const ParamStore& store, const SegParams& p, const Tensor& image);

/// Per-column deepest row whose wall probability is >= 0.5 (0 when none).
Eigen::ArrayXd pleural_line_rows(const Eigen::ArrayXXd& wall_prob);

struct TrainConfig {
  double eta = 0.5;
  double lr = 0.5 * 0.002;            // eta * 0.002
  double beta1 = 0.0;                 // paper-written betas (0, 0.99^eta)
  double beta2 = std::pow(0.99, 0.5);
  double adam_eps = 1e-8;
  int batch = 26;
  int epochs_pretrain = 90;
  int epochs_finetune = 10;
  Eigen::Index mask_t_max = 200;
  Eigen::Index mask_s_max = 2000;
  double noise_snr_db = 30.0;
  bool noise_enabled = true;

  static TrainConfig with_eta(double eta);
};

struct AdamState {
  std::vector<Tensor> m, v;
  std::int64_t t = 0;
};

/// Standard Adam with bias correction and the configured betas.
void adam_step(ParamStore& store, const std::vector<Tensor>& grads, const TrainConfig& cfg,
               AdamState& state);

/// Masking + white-noise augmentation: zeroes the first m ~ U{0..mask_t_max}
/// time steps and m_s ~ U{0..mask_s_max} random flattened traces, then adds
/// Gaussian noise at the configured SNR.
Tensor augment(const Tensor& rf_t_rx_ev, const TrainConfig& cfg, CounterRng& rng);

struct PlattFit {
  double a = 1.0, b = 0.0;
  double ece_before = 0.0, ece_after = 0.0;
};

/// Logistic recalibration sigma(a logit(p) + b) fit by Newton iteration on
/// the cross-entropy. Throws "calibration-degenerate" on single-class sets.
PlattFit platt_calibrate(const Eigen::ArrayXd& val_preds, const Eigen::ArrayXd& val_truths);
Eigen::ArrayXXd platt_apply(const Eigen::ArrayXXd& probs, const PlattFit& fit);

/// Bilinear resize used to square B-mode images for segmentation.
Eigen::ArrayXXd resize_bilinear(const Eigen::ArrayXXd& img, Eigen::Index rows, Eigen::Index cols);

}  // namespace pwt::nop
