// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>

namespace pwt {

using Cplx = std::complex<double>;
using CplxVec = Eigen::VectorXcd;

/// Forward DFT of a real signal, bins 0..n/2 (length n/2+1).
CplxVec rfft(const Eigen::ArrayXd& x);

/// Inverse of rfft for an even original length n = 2*(spec.size()-1).
Eigen::ArrayXd irfft(const CplxVec& spec, Eigen::Index n);

/// Full complex DFT / inverse DFT (inverse includes the 1/n factor).
CplxVec fft(const CplxVec& x);
CplxVec ifft(const CplxVec& x);

/// Analytic signal via spectral one-siding. The transform runs at the next
/// power-of-two length; the first x.size() samples are returned.
CplxVec analytic_signal(const Eigen::ArrayXd& x);

/// |analytic_signal|.
Eigen::ArrayXd envelope(const Eigen::ArrayXd& x);

Eigen::Index next_pow2(Eigen::Index n);

}  // namespace pwt
