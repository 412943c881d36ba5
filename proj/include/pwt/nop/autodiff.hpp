// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "pwt/nop/tensor.hpp"

namespace pwt::nop {

/// Reverse-mode tape over a fixed operator set. One tape per sample per
/// forward pass; parameter gradients accumulate into param_grads indexed by
/// ParamStore position.
class Tape {
 public:
  using VarId = int;

  explicit Tape(const ParamStore& store) : store_(&store) {
    param_grads.assign(static_cast<std::size_t>(store.count()), Tensor());
  }

  VarId constant(Tensor v);
  VarId param(int store_index);

  const Tensor& val(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor& grad(VarId id);

  /// Seeds d(loss)=1 and walks the tape backward. The loss must be a scalar.
  void backward(VarId loss);

  std::vector<Tensor> param_grads;  // filled by backward(); empty shape = untouched

  // -- operator set ---------------------------------------------------------
  VarId add(VarId a, VarId b);
  VarId sub(VarId a, VarId b);
  VarId mul(VarId a, VarId b);  // elementwise
  VarId scale(VarId a, double k);
  /// X [Cin, N] mixed to [Cout, N] by W [Cin, Cout].
  VarId channel_mix(VarId x, VarId w, Eigen::Index c_in, Eigen::Index n, Eigen::Index c_out);
  /// X [R, C] += b[R] broadcast along columns.
  VarId add_colvec(VarId x, VarId b, Eigen::Index rows, Eigen::Index cols);
  VarId reshape(VarId x, std::vector<std::int64_t> new_shape);
  VarId concat_c(VarId a, VarId b);  // [Ca,H,W] + [Cb,H,W] -> [Ca+Cb,H,W]
  VarId gelu(VarId x);
  VarId sigmoid(VarId x);
  /// Channel softmax over a [2,H,W] tensor.
  VarId softmax2(VarId x);
  /// conv weight [Cout,Cin,k,k], bias [Cout]; stride 1 or 2; pad = k/2.
  VarId conv2d(VarId x, VarId w, VarId b, int stride);
  /// Transposed-conv weight layout [Cin,Cout,k,k] flipped into a conv.
  VarId transpose_weight(VarId w);
  VarId upsample2x(VarId x);  // bilinear, [C,H,W] -> [C,2H,2W]
  /// Per-channel normalization over the spatial dims, then gamma/beta.
  VarId channel_norm(VarId x, VarId gamma, VarId beta, double eps = 1e-5);
  /// Complex per-mode channel mixing: x = (re,im) [C,F,B], W = (re,im)
  /// [modes,C,Cout]; modes' and above are zeroed. Output [2,Cout,F,B].
  VarId complex_mode_mix(VarId xre, VarId xim, VarId wre, VarId wim, Eigen::Index modes);
  VarId take_plane(VarId x, Eigen::Index k);  // index axis 0 of [2,...]
  VarId mean_all(VarId x);
  VarId sum_all(VarId x);
  /// -sum(t log p + (1-t) log(1-p)); p clamped to [eps, 1-eps]. clamp_hits
  /// counts clamped coefficients across the tape's lifetime.
  VarId bce_sum(VarId p, const Tensor& truth, double eps = 1e-7);
  /// -sum(log p[label]) over pixels for a [2,H,W] probability tensor.
  VarId ce2_sum(VarId p, const Tensor& labels01);
  VarId abs_diff(VarId a, const Tensor& target);  // |a - target| elementwise sum (scalar use)

  std::int64_t clamp_hits = 0;

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::function<void(Tape&)> back;
    int param_index = -1;
  };
  VarId push(Tensor value, std::function<void(Tape&)> back = nullptr, int param_index = -1);

  const ParamStore* store_;
  std::vector<Node> nodes_;
};

}  // namespace pwt::nop
