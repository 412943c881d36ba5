// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pwt::nop {

/// Dense row-major tensor (last dim fastest). Double precision throughout;
/// training runs are small enough that gradient-check precision wins.
struct Tensor {
  std::vector<std::int64_t> shape;
  Eigen::ArrayXd data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data = Eigen::ArrayXd::Zero(count(shape));
  }
  Tensor(std::vector<std::int64_t> s, Eigen::ArrayXd d) : shape(std::move(s)), data(std::move(d)) {}

  static std::int64_t count(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }
  static Tensor zeros(std::vector<std::int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::int64_t> s, double v) {
    Tensor t(std::move(s));
    t.data.setConstant(v);
    return t;
  }
  static Tensor scalar(double v) { return full({1}, v); }

  std::int64_t size() const { return data.size(); }
  std::int64_t dim(std::size_t i) const { return shape[i]; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

inline MapRM as_matrix(Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return MapRM(t.data.data(), rows, cols);
}
inline CMapRM as_matrix(const Tensor& t, Eigen::Index rows, Eigen::Index cols) {
  return CMapRM(t.data.data(), rows, cols);
}

/// Named trainable parameters; gradients live outside (per-tape), so one
/// store can serve many concurrent forward passes.
class ParamStore {
 public:
  int add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return static_cast<int>(values_.size()) - 1;
  }
  const Tensor& value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  Tensor& value(int i) { return values_[static_cast<std::size_t>(i)]; }
  const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
  int count() const { return static_cast<int>(values_.size()); }
  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }
  std::vector<Tensor> zero_grads() const {
    std::vector<Tensor> g;
    g.reserve(values_.size());
    for (const auto& v : values_) g.push_back(Tensor::zeros(v.shape));
    return g;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

}  // namespace pwt::nop
