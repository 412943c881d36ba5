// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include <Eigen/Dense>

namespace pwt {

/// Binary (P5) 8-bit PGM. Values are mapped linearly from [lo, hi] to
/// [0, 255] and clamped.
void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXXd& img, double lo, double hi);

}  // namespace pwt
