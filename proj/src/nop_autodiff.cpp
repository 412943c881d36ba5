// SPDX-License-Identifier: Apache-2.0
#include "pwt/nop/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "pwt/error.hpp"

namespace pwt::nop {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw Error("bad-tensor-op", what);
}

}  // namespace

Tape::VarId Tape::push(Tensor value, std::function<void(Tape&)> back, int param_index) {
  nodes_.push_back(Node{std::move(value), Tensor(), std::move(back), param_index});
  return static_cast<VarId>(nodes_.size()) - 1;
}

Tape::VarId Tape::constant(Tensor v) { return push(std::move(v)); }

Tape::VarId Tape::param(int store_index) {
  Tensor v = store_->value(store_index);
  return push(std::move(v), nullptr, store_index);
}

Tensor& Tape::grad(VarId id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

void Tape::backward(VarId loss) {
  require(val(loss).size() == 1, "backward needs a scalar loss");
  grad(loss).data(0) = 1.0;
  for (VarId id = static_cast<VarId>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;  // never touched by the loss
    if (n.back) n.back(*this);
    if (n.param_index >= 0) {
      Tensor& acc = param_grads[static_cast<std::size_t>(n.param_index)];
      if (acc.size() == 0) acc = Tensor::zeros(n.value.shape);
      acc.data += n.grad.data;
    }
  }
}

Tape::VarId Tape::add(VarId a, VarId b) {
  require(val(a).same_shape(val(b)), "add shape mismatch");
  Tensor out(val(a).shape, val(a).data + val(b).data);
  VarId id = push(std::move(out));
  nodes_.back().back = [a, b, id](Tape& t) {
    t.grad(a).data += t.grad(id).data;
    t.grad(b).data += t.grad(id).data;
  };
  return id;
}

Tape::VarId Tape::sub(VarId a, VarId b) {
  require(val(a).same_shape(val(b)), "sub shape mismatch");
  Tensor out(val(a).shape, val(a).data - val(b).data);
  VarId id = push(std::move(out));
  nodes_.back().back = [a, b, id](Tape& t) {
    t.grad(a).data += t.grad(id).data;
    t.grad(b).data -= t.grad(id).data;
  };
  return id;
}

Tape::VarId Tape::mul(VarId a, VarId b) {
  require(val(a).same_shape(val(b)), "mul shape mismatch");
  Tensor out(val(a).shape, val(a).data * val(b).data);
  VarId id = push(std::move(out));
  nodes_.back().back = [a, b, id](Tape& t) {
    t.grad(a).data += t.grad(id).data * t.val(b).data;
    t.grad(b).data += t.grad(id).data * t.val(a).data;
  };
  return id;
}

Tape::VarId Tape::scale(VarId a, double k) {
  Tensor out(val(a).shape, val(a).data * k);
  VarId id = push(std::move(out));
  nodes_.back().back = [a, k, id](Tape& t) { t.grad(a).data += k * t.grad(id).data; };
  return id;
}

Tape::VarId Tape::channel_mix(VarId x, VarId w, Eigen::Index c_in, Eigen::Index n,
                              Eigen::Index c_out) {
  require(val(x).size() == c_in * n, "channel_mix x size");
  require(val(w).size() == c_in * c_out, "channel_mix w size");
  Tensor out({c_out, n});
  as_matrix(out, c_out, n).noalias() =
      as_matrix(val(w), c_in, c_out).transpose() * as_matrix(val(x), c_in, n);
  VarId id = push(std::move(out));
  nodes_.back().back = [x, w, c_in, n, c_out, id](Tape& t) {
    const auto g = as_matrix(t.grad(id), c_out, n);
    as_matrix(t.grad(x), c_in, n).noalias() += as_matrix(t.val(w), c_in, c_out) * g;
    as_matrix(t.grad(w), c_in, c_out).noalias() += as_matrix(t.val(x), c_in, n) * g.transpose();
  };
  return id;
}

Tape::VarId Tape::add_colvec(VarId x, VarId b, Eigen::Index rows, Eigen::Index cols) {
  require(val(x).size() == rows * cols && val(b).size() == rows, "add_colvec sizes");
  Tensor out = val(x);
  for (Eigen::Index r = 0; r < rows; ++r)
    out.data.segment(r * cols, cols) += val(b).data(r);
  VarId id = push(std::move(out));
  nodes_.back().back = [x, b, rows, cols, id](Tape& t) {
    t.grad(x).data += t.grad(id).data;
    for (Eigen::Index r = 0; r < rows; ++r)
      t.grad(b).data(r) += t.grad(id).data.segment(r * cols, cols).sum();
  };
  return id;
}

Tape::VarId Tape::reshape(VarId x, std::vector<std::int64_t> new_shape) {
  require(Tensor::count(new_shape) == val(x).size(), "reshape count mismatch");
  Tensor out(std::move(new_shape), val(x).data);
  VarId id = push(std::move(out));
  nodes_.back().back = [x, id](Tape& t) { t.grad(x).data += t.grad(id).data; };
  return id;
}

Tape::VarId Tape::concat_c(VarId a, VarId b) {
  const auto& sa = val(a).shape;
  const auto& sb = val(b).shape;
  require(sa.size() == 3 && sb.size() == 3 && sa[1] == sb[1] && sa[2] == sb[2], "concat dims");
  Tensor out({sa[0] + sb[0], sa[1], sa[2]});
  out.data.head(val(a).size()) = val(a).data;
  out.data.tail(val(b).size()) = val(b).data;
  VarId id = push(std::move(out));
  const auto na = val(a).size();
  const auto nb = val(b).size();
  nodes_.back().back = [a, b, na, nb, id](Tape& t) {
    t.grad(a).data += t.grad(id).data.head(na);
    t.grad(b).data += t.grad(id).data.tail(nb);
  };
  return id;
}

Tape::VarId Tape::gelu(VarId x) {
  const auto erf_part = [](const Eigen::ArrayXd& v) {
    return v.unaryExpr([](double u) { return std::erf(u / std::numbers::sqrt2); });
  };
  const auto& xv = val(x).data;
  Tensor out(val(x).shape, 0.5 * xv * (1.0 + erf_part(xv)));
  VarId id = push(std::move(out));
  nodes_.back().back = [x, id, erf_part](Tape& t) {
    const auto& xv2 = t.val(x).data;
    const Eigen::ArrayXd d = 0.5 * (1.0 + erf_part(xv2)) +
                             xv2 * (-0.5 * xv2.square()).exp() /
                                 std::sqrt(2.0 * std::numbers::pi);
    t.grad(x).data += d * t.grad(id).data;
  };
  return id;
}

Tape::VarId Tape::sigmoid(VarId x) {
  Tensor out(val(x).shape, 1.0 / (1.0 + (-val(x).data).exp()));
  VarId id = push(std::move(out));
  nodes_.back().back = [x, id](Tape& t) {
    const auto& y = t.val(id).data;
    t.grad(x).data += y * (1.0 - y) * t.grad(id).data;
  };
  return id;
}

Tape::VarId Tape::softmax2(VarId x) {
  const auto& s = val(x).shape;
  require(s.size() == 3 && s[0] == 2, "softmax2 needs [2,H,W]");
  const Eigen::Index n = s[1] * s[2];
  Tensor out(s);
  const auto a0 = val(x).data.head(n);
  const auto a1 = val(x).data.tail(n);
  const Eigen::ArrayXd m = a0.max(a1);
  const Eigen::ArrayXd e0 = (a0 - m).exp();
  const Eigen::ArrayXd e1 = (a1 - m).exp();
  const Eigen::ArrayXd z = e0 + e1;
  out.data.head(n) = e0 / z;
  out.data.tail(n) = e1 / z;
  VarId id = push(std::move(out));
  nodes_.back().back = [x, n, id](Tape& t) {
    const auto y0 = t.val(id).data.head(n);
    const auto y1 = t.val(id).data.tail(n);
    const auto g0 = t.grad(id).data.head(n);
    const auto g1 = t.grad(id).data.tail(n);
    const Eigen::ArrayXd dot = g0 * y0 + g1 * y1;
    t.grad(x).data.head(n) += y0 * (g0 - dot);
    t.grad(x).data.tail(n) += y1 * (g1 - dot);
  };
  return id;
}

namespace {

struct ConvDims {
  Eigen::Index c_in, h, w, c_out, k, ho, wo, pad;
  int stride;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wgt, int stride) {
  require(x.shape.size() == 3 && wgt.shape.size() == 4, "conv2d shapes");
  ConvDims d;
  d.c_in = x.shape[0];
  d.h = x.shape[1];
  d.w = x.shape[2];
  d.c_out = wgt.shape[0];
  require(wgt.shape[1] == d.c_in && wgt.shape[2] == wgt.shape[3], "conv2d weight shape");
  d.k = wgt.shape[2];
  d.pad = d.k / 2;
  d.stride = stride;
  d.ho = (d.h + 2 * d.pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * d.pad - d.k) / stride + 1;
  return d;
}

// x [Cin,H,W] -> cols [Cin*k*k, Ho*Wo], zero padding.
RowMat im2col(const Tensor& x, const ConvDims& d) {
  RowMat cols = RowMat::Zero(d.c_in * d.k * d.k, d.ho * d.wo);
  const double* xp = x.data.data();
  for (Eigen::Index c = 0; c < d.c_in; ++c)
    for (Eigen::Index ki = 0; ki < d.k; ++ki)
      for (Eigen::Index kj = 0; kj < d.k; ++kj) {
        const Eigen::Index row = (c * d.k + ki) * d.k + kj;
        for (Eigen::Index oi = 0; oi < d.ho; ++oi) {
          const Eigen::Index ii = oi * d.stride + ki - d.pad;
          if (ii < 0 || ii >= d.h) continue;
          for (Eigen::Index oj = 0; oj < d.wo; ++oj) {
            const Eigen::Index jj = oj * d.stride + kj - d.pad;
            if (jj < 0 || jj >= d.w) continue;
            cols(row, oi * d.wo + oj) = xp[(c * d.h + ii) * d.w + jj];
          }
        }
      }
  return cols;
}

void col2im_add(const RowMat& cols, const ConvDims& d, Tensor& dx) {
  double* xp = dx.data.data();
  for (Eigen::Index c = 0; c < d.c_in; ++c)
    for (Eigen::Index ki = 0; ki < d.k; ++ki)
      for (Eigen::Index kj = 0; kj < d.k; ++kj) {
        const Eigen::Index row = (c * d.k + ki) * d.k + kj;
        for (Eigen::Index oi = 0; oi < d.ho; ++oi) {
          const Eigen::Index ii = oi * d.stride + ki - d.pad;
          if (ii < 0 || ii >= d.h) continue;
          for (Eigen::Index oj = 0; oj < d.wo; ++oj) {
            const Eigen::Index jj = oj * d.stride + kj - d.pad;
            if (jj < 0 || jj >= d.w) continue;
            xp[(c * d.h + ii) * d.w + jj] += cols(row, oi * d.wo + oj);
          }
        }
      }
}

}  // namespace

Tape::VarId Tape::conv2d(VarId x, VarId w, VarId b, int stride) {
  require(stride == 1 || stride == 2, "conv2d stride");
  const ConvDims d = conv_dims(val(x), val(w), stride);
  require(val(b).size() == d.c_out, "conv2d bias size");
  const RowMat cols = im2col(val(x), d);
  Tensor out({d.c_out, d.ho, d.wo});
  MapRM y = as_matrix(out, d.c_out, d.ho * d.wo);
  y.noalias() = as_matrix(val(w), d.c_out, d.c_in * d.k * d.k) * cols;
  for (Eigen::Index c = 0; c < d.c_out; ++c) y.row(c).array() += val(b).data(c);
  VarId id = push(std::move(out));
  nodes_.back().back = [x, w, b, d, id](Tape& t) {
    const auto g = as_matrix(t.grad(id), d.c_out, d.ho * d.wo);
    // recompute cols; cheaper than keeping every im2col alive on the tape
    const RowMat cols_b = im2col(t.val(x), d);
    as_matrix(t.grad(w), d.c_out, d.c_in * d.k * d.k).noalias() += g * cols_b.transpose();
    for (Eigen::Index c = 0; c < d.c_out; ++c) t.grad(b).data(c) += g.row(c).sum();
    const RowMat dcols = as_matrix(t.val(w), d.c_out, d.c_in * d.k * d.k).transpose() * g;
    col2im_add(dcols, d, t.grad(x));
  };
  return id;
}

Tape::VarId Tape::transpose_weight(VarId w) {
  const auto& s = val(w).shape;
  require(s.size() == 4, "transpose_weight shape");
  const Eigen::Index ci = s[0], co = s[1], k = s[2];
  Tensor out({co, ci, k, k});
  for (Eigen::Index a = 0; a < ci; ++a)
    for (Eigen::Index b = 0; b < co; ++b)
      for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
          out.data(((b * ci + a) * k + (k - 1 - i)) * k + (k - 1 - j)) =
              val(w).data(((a * co + b) * k + i) * k + j);
  VarId id = push(std::move(out));
  nodes_.back().back = [w, ci, co, k, id](Tape& t) {
    for (Eigen::Index a = 0; a < ci; ++a)
      for (Eigen::Index b = 0; b < co; ++b)
        for (Eigen::Index i = 0; i < k; ++i)
          for (Eigen::Index j = 0; j < k; ++j)
            t.grad(w).data(((a * co + b) * k + i) * k + j) +=
                t.grad(id).data(((b * ci + a) * k + (k - 1 - i)) * k + (k - 1 - j));
  };
  return id;
}

Tape::VarId Tape::upsample2x(VarId x) {
  const auto& s = val(x).shape;
  require(s.size() == 3, "upsample2x shape");
  const Eigen::Index C = s[0], H = s[1], W = s[2];
  Tensor out({C, 2 * H, 2 * W});
  // out(i) samples in((i+0.5)/2 - 0.5): weights {0.25, 0.75} on the two
  // nearest input cells, clamped at the borders.
  auto src = [](Eigen::Index o, Eigen::Index n, Eigen::Index& i0, Eigen::Index& i1, double& w0) {
    const double p = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double f = std::floor(p);
    i0 = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(f), 0, n - 1);
    i1 = std::clamp<Eigen::Index>(i0 + 1, 0, n - 1);
    w0 = 1.0 - (p - f);
    if (p < 0.0) {
      i0 = i1 = 0;
      w0 = 1.0;
    }
    if (p > static_cast<double>(n - 1)) {
      i0 = i1 = n - 1;
      w0 = 1.0;
    }
  };
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index oi = 0; oi < 2 * H; ++oi) {
      Eigen::Index r0, r1;
      double wr;
      src(oi, H, r0, r1, wr);
      for (Eigen::Index oj = 0; oj < 2 * W; ++oj) {
        Eigen::Index c0, c1;
        double wc;
        src(oj, W, c0, c1, wc);
        const auto in = [&](Eigen::Index r, Eigen::Index cc) {
          return val(x).data((c * H + r) * W + cc);
        };
        out.data((c * 2 * H + oi) * 2 * W + oj) = wr * wc * in(r0, c0) +
                                                  wr * (1 - wc) * in(r0, c1) +
                                                  (1 - wr) * wc * in(r1, c0) +
                                                  (1 - wr) * (1 - wc) * in(r1, c1);
      }
    }
  VarId id = push(std::move(out));
  nodes_.back().back = [x, C, H, W, src, id](Tape& t) {
    for (Eigen::Index c = 0; c < C; ++c)
      for (Eigen::Index oi = 0; oi < 2 * H; ++oi) {
        Eigen::Index r0, r1;
        double wr;
        src(oi, H, r0, r1, wr);
        for (Eigen::Index oj = 0; oj < 2 * W; ++oj) {
          Eigen::Index c0, c1;
          double wc;
          src(oj, W, c0, c1, wc);
          const double g = t.grad(id).data((c * 2 * H + oi) * 2 * W + oj);
          auto& gx = t.grad(x).data;
          gx((c * H + r0) * W + c0) += wr * wc * g;
          gx((c * H + r0) * W + c1) += wr * (1 - wc) * g;
          gx((c * H + r1) * W + c0) += (1 - wr) * wc * g;
          gx((c * H + r1) * W + c1) += (1 - wr) * (1 - wc) * g;
        }
      }
  };
  return id;
}

Tape::VarId Tape::channel_norm(VarId x, VarId gamma, VarId beta, double eps) {
  const auto& s = val(x).shape;
  require(s.size() == 3, "channel_norm shape");
  const Eigen::Index C = s[0], N = s[1] * s[2];
  require(val(gamma).size() == C && val(beta).size() == C, "channel_norm affine sizes");
  Tensor out(s);
  for (Eigen::Index c = 0; c < C; ++c) {
    const auto xc = val(x).data.segment(c * N, N);
    const double mu = xc.mean();
    const double var = (xc - mu).square().mean();
    out.data.segment(c * N, N) =
        val(gamma).data(c) * (xc - mu) / std::sqrt(var + eps) + val(beta).data(c);
  }
  VarId id = push(std::move(out));
  nodes_.back().back = [x, gamma, beta, C, N, eps, id](Tape& t) {
    for (Eigen::Index c = 0; c < C; ++c) {
      const auto xc = t.val(x).data.segment(c * N, N);
      const auto gc = t.grad(id).data.segment(c * N, N);
      const double mu = xc.mean();
      const double var = (xc - mu).square().mean();
      const double inv = 1.0 / std::sqrt(var + eps);
      const Eigen::ArrayXd xhat = (xc - mu) * inv;
      const double g = t.val(gamma).data(c);
      t.grad(beta).data(c) += gc.sum();
      t.grad(gamma).data(c) += (gc * xhat).sum();
      // d/dx of per-channel standardization
      const Eigen::ArrayXd dxhat = gc * g;
      const double mean_dxhat = dxhat.mean();
      const double mean_dxhat_xhat = (dxhat * xhat).mean();
      t.grad(x).data.segment(c * N, N) +=
          inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
  };
  return id;
}

Tape::VarId Tape::complex_mode_mix(VarId xre, VarId xim, VarId wre, VarId wim,
                                   Eigen::Index modes) {
  const auto& s = val(xre).shape;
  require(s.size() == 3 && val(xim).shape == s, "mode_mix x shape");
  const Eigen::Index C = s[0], F = s[1], B = s[2];
  const auto& ws = val(wre).shape;
  require(ws.size() == 3 && ws[0] >= modes && ws[1] == C && val(wim).shape == ws,
          "mode_mix w shape");
  require(modes <= F, "modes exceed the frequency bins");
  const Eigen::Index Co = ws[2];

  Tensor out({2, Co, F, B});
  auto slice = [&](const Tensor& tns, Eigen::Index f, Eigen::Index rows) {
    return Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>(
        tns.data.data() + f * B, rows, B, Eigen::OuterStride<>(F * B));
  };
  for (Eigen::Index f = 0; f < modes; ++f) {
    const auto xr = slice(val(xre), f, C);
    const auto xi = slice(val(xim), f, C);
    // per-mode weights [C, Co] live contiguously at offset f*C*Co
    const CMapRM Wr(val(wre).data.data() + f * C * Co, C, Co);
    const CMapRM Wi(val(wim).data.data() + f * C * Co, C, Co);
    Eigen::Map<RowMat, 0, Eigen::OuterStride<>> yr(out.data.data() + f * B, Co, B,
                                                   Eigen::OuterStride<>(F * B));
    Eigen::Map<RowMat, 0, Eigen::OuterStride<>> yi(
        out.data.data() + Co * F * B + f * B, Co, B, Eigen::OuterStride<>(F * B));
    yr.noalias() = Wr.transpose() * xr.matrix() - Wi.transpose() * xi.matrix();
    yi.noalias() = Wr.transpose() * xi.matrix() + Wi.transpose() * xr.matrix();
  }
  VarId id = push(std::move(out));
  nodes_.back().back = [xre, xim, wre, wim, modes, C, F, B, Co, id](Tape& t) {
    auto slc = [&](const Tensor& tns, Eigen::Index f, Eigen::Index rows,
                   Eigen::Index plane_off) {
      return Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>(
          tns.data.data() + plane_off + f * B, rows, B, Eigen::OuterStride<>(F * B));
    };
    auto slc_mut = [&](Tensor& tns, Eigen::Index f, Eigen::Index rows) {
      return Eigen::Map<RowMat, 0, Eigen::OuterStride<>>(tns.data.data() + f * B, rows, B,
                                                         Eigen::OuterStride<>(F * B));
    };
    for (Eigen::Index f = 0; f < modes; ++f) {
      const auto gr = slc(t.grad(id), f, Co, 0);
      const auto gi = slc(t.grad(id), f, Co, Co * F * B);
      const auto xr = slc(t.val(xre), f, C, 0);
      const auto xi = slc(t.val(xim), f, C, 0);
      const CMapRM Wr(t.val(wre).data.data() + f * C * Co, C, Co);
      const CMapRM Wi(t.val(wim).data.data() + f * C * Co, C, Co);
      slc_mut(t.grad(xre), f, C).noalias() +=
          Wr * gr.matrix() + Wi * gi.matrix();
      slc_mut(t.grad(xim), f, C).noalias() +=
          Wr * gi.matrix() - Wi * gr.matrix();
      MapRM dWr(t.grad(wre).data.data() + f * C * Co, C, Co);
      MapRM dWi(t.grad(wim).data.data() + f * C * Co, C, Co);
      dWr.noalias() += xr.matrix() * gr.matrix().transpose() +
                       xi.matrix() * gi.matrix().transpose();
      dWi.noalias() += xr.matrix() * gi.matrix().transpose() -
                       xi.matrix() * gr.matrix().transpose();
    }
  };
  return id;
}

Tape::VarId Tape::take_plane(VarId x, Eigen::Index k) {
  const auto& s = val(x).shape;
  require(s.size() >= 2 && k < s[0], "take_plane index");
  std::vector<std::int64_t> ns(s.begin() + 1, s.end());
  const Eigen::Index n = Tensor::count(ns);
  Tensor out(ns, val(x).data.segment(k * n, n));
  VarId id = push(std::move(out));
  nodes_.back().back = [x, k, n, id](Tape& t) {
    t.grad(x).data.segment(k * n, n) += t.grad(id).data;
  };
  return id;
}

Tape::VarId Tape::mean_all(VarId x) {
  Tensor out = Tensor::scalar(val(x).data.mean());
  VarId id = push(std::move(out));
  const double inv_n = 1.0 / static_cast<double>(val(x).size());
  nodes_.back().back = [x, inv_n, id](Tape& t) {
    t.grad(x).data += inv_n * t.grad(id).data(0);
  };
  return id;
}

Tape::VarId Tape::sum_all(VarId x) {
  Tensor out = Tensor::scalar(val(x).data.sum());
  VarId id = push(std::move(out));
  nodes_.back().back = [x, id](Tape& t) { t.grad(x).data += t.grad(id).data(0); };
  return id;
}

Tape::VarId Tape::bce_sum(VarId p, const Tensor& truth, double eps) {
  require(val(p).same_shape(truth), "bce shapes");
  const Eigen::ArrayXd clamped = val(p).data.max(eps).min(1.0 - eps);
  clamp_hits += (val(p).data < eps).count() + (val(p).data > 1.0 - eps).count();
  const double L = -(truth.data * clamped.log() + (1.0 - truth.data) * (1.0 - clamped).log()).sum();
  VarId id = push(Tensor::scalar(L));
  const Eigen::ArrayXd tvals = truth.data;
  nodes_.back().back = [p, tvals, eps, id](Tape& t) {
    const auto& pv = t.val(p).data;
    const Eigen::ArrayXd cl = pv.max(eps).min(1.0 - eps);
    Eigen::ArrayXd dp = (cl - tvals) / (cl * (1.0 - cl));
    // clamped coefficients sit on the flat part of the loss
    dp = (pv < eps || pv > 1.0 - eps).select(0.0, dp);
    t.grad(p).data += dp * t.grad(id).data(0);
  };
  return id;
}

Tape::VarId Tape::ce2_sum(VarId p, const Tensor& labels01) {
  const auto& s = val(p).shape;
  require(s.size() == 3 && s[0] == 2, "ce2 shape");
  const Eigen::Index n = s[1] * s[2];
  require(labels01.size() == n, "ce2 labels size");
  double L = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index cls = labels01.data(i) > 0.5 ? 1 : 0;
    L -= std::log(std::max(val(p).data(cls * n + i), 1e-12));
  }
  VarId id = push(Tensor::scalar(L));
  const Eigen::ArrayXd labels = labels01.data;
  nodes_.back().back = [p, labels, n, id](Tape& t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index cls = labels(i) > 0.5 ? 1 : 0;
      const double pv = std::max(t.val(p).data(cls * n + i), 1e-12);
      t.grad(p).data(cls * n + i) += -t.grad(id).data(0) / pv;
    }
  };
  return id;
}

Tape::VarId Tape::abs_diff(VarId a, const Tensor& target) {
  require(val(a).same_shape(target), "abs_diff shapes");
  const double L = (val(a).data - target.data).abs().sum();
  VarId id = push(Tensor::scalar(L));
  const Eigen::ArrayXd tgt = target.data;
  nodes_.back().back = [a, tgt, id](Tape& t) {
    const Eigen::ArrayXd d = t.val(a).data - tgt;
    t.grad(a).data += d.sign() * t.grad(id).data(0);
  };
  return id;
}

}  // namespace pwt::nop
