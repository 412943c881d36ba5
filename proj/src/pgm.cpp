// SPDX-License-Identifier: Apache-2.0
#include "pwt/pgm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "pwt/error.hpp"

namespace pwt {

void write_pgm(const std::filesystem::path& path, const Eigen::ArrayXXd& img, double lo, double hi) {
  if (img.size() == 0 || hi <= lo) throw Error("bad-image", "empty image or bad range");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io-error", "cannot open for write: " + path.string());
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(img.cols()));
  for (Eigen::Index r = 0; r < img.rows(); ++r) {
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
      const double t = (img(r, c) - lo) / (hi - lo);
      row[static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

}  // namespace pwt
