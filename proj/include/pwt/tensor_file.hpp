// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace pwt {

/// On-disk layout (all integers little-endian):
///   magic "PWT1" | dtype u8 (0=f32le 1=f64le 2=u8) | ndim u8 |
///   dims ndim*u64 | meta_len u64 | meta UTF-8 JSON | payload row-major
/// Round-trips are bit-exact for every dtype, NaN payloads included.
enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

std::size_t dtype_size(DType t);

struct TensorFile {
  DType dtype = DType::f64;
  std::vector<std::int64_t> dims;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::byte> payload;  // row-major, last dim fastest

  std::int64_t element_count() const;

  // Typed construction / extraction. Get throws "bad-tensor-dtype" on
  // mismatch; no implicit conversion happens on disk data.
  static TensorFile from_f64(std::vector<std::int64_t> dims, const std::vector<double>& v);
  static TensorFile from_f32(std::vector<std::int64_t> dims, const std::vector<float>& v);
  static TensorFile from_u8(std::vector<std::int64_t> dims, const std::vector<std::uint8_t>& v);
  static TensorFile from_matrix(const Eigen::ArrayXXd& a);  // dims = {rows, cols}

  std::vector<double> as_f64() const;
  std::vector<float> as_f32() const;
  std::vector<std::uint8_t> as_u8() const;
  Eigen::ArrayXXd as_matrix() const;  // requires ndim == 2

  /// Payload reinterpreted as doubles regardless of stored dtype (widening).
  std::vector<double> to_f64_widened() const;
};

void write_tensor(const std::filesystem::path& path, const TensorFile& t);
TensorFile read_tensor(const std::filesystem::path& path);

}  // namespace pwt
