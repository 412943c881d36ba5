// SPDX-License-Identifier: Apache-2.0
#include "pwt/fftutil.hpp"

#include <unsupported/Eigen/FFT>

namespace pwt {

namespace {

Eigen::FFT<double>& fft_engine() {
  thread_local Eigen::FFT<double> engine;
  return engine;
}

}  // namespace

Eigen::Index next_pow2(Eigen::Index n) {
  Eigen::Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

CplxVec rfft(const Eigen::ArrayXd& x) {
  std::vector<double> in(x.data(), x.data() + x.size());
  std::vector<Cplx> out;
  fft_engine().fwd(out, in);
  const Eigen::Index nb = x.size() / 2 + 1;
  CplxVec spec(nb);
  for (Eigen::Index k = 0; k < nb; ++k) spec(k) = out[static_cast<std::size_t>(k)];
  return spec;
}

Eigen::ArrayXd irfft(const CplxVec& spec, Eigen::Index n) {
  // Rebuild the Hermitian full spectrum, then complex inverse.
  CplxVec full(n);
  for (Eigen::Index k = 0; k < spec.size(); ++k) full(k) = spec(k);
  for (Eigen::Index k = spec.size(); k < n; ++k) full(k) = std::conj(spec(n - k));
  CplxVec t = ifft(full);
  Eigen::ArrayXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out(i) = t(i).real();
  return out;
}

CplxVec fft(const CplxVec& x) {
  std::vector<Cplx> in(x.data(), x.data() + x.size());
  std::vector<Cplx> out;
  fft_engine().fwd(out, in);
  return Eigen::Map<const CplxVec>(out.data(), static_cast<Eigen::Index>(out.size()));
}

CplxVec ifft(const CplxVec& x) {
  std::vector<Cplx> in(x.data(), x.data() + x.size());
  std::vector<Cplx> out;
  fft_engine().inv(out, in);
  return Eigen::Map<const CplxVec>(out.data(), static_cast<Eigen::Index>(out.size()));
}

CplxVec analytic_signal(const Eigen::ArrayXd& x) {
  const Eigen::Index n = x.size();
  const Eigen::Index m = next_pow2(n);
  CplxVec padded = CplxVec::Zero(m);
  for (Eigen::Index i = 0; i < n; ++i) padded(i) = Cplx(x(i), 0.0);
  CplxVec spec = fft(padded);
  // Keep DC and Nyquist, double positive frequencies, zero negatives.
  for (Eigen::Index k = 1; k < m / 2; ++k) spec(k) *= 2.0;
  for (Eigen::Index k = m / 2 + 1; k < m; ++k) spec(k) = Cplx(0.0, 0.0);
  CplxVec full = ifft(spec);
  return full.head(n);
}

Eigen::ArrayXd envelope(const Eigen::ArrayXd& x) {
  return analytic_signal(x).array().abs();
}

}  // namespace pwt
