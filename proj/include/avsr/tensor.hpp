// Copyright 2026 The avsr-lombard Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

#include "avsr/common.hpp"

namespace avsr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// Storage aligned for the widest vector unit, so Eigen reductions take
// the same path, and give the same bits, wherever the buffer lands.
using AlignedBuffer = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major array of doubles with a runtime shape.
class Tensor {
 public:
  using Storage = AlignedBuffer;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::vector<int> shape, const std::vector<double>& data)
      : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}
  Tensor(std::vector<int> shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    AVSR_REQUIRE(data_.size() == count(shape_), "tensor data size ", data_.size(),
                 " does not match shape ", shape_string());
  }
  static Tensor from_matrix(const RowMatrix& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    std::copy(m.data(), m.data() + m.size(), t.data_.begin());
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }
  std::vector<double> to_vector() const { return {data_.begin(), data_.end()}; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-D view with `rows` = product of all but the last dimension.
  MatrixMap matrix() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap matrix() const { return ConstMatrixMap(data_.data(), rows(), cols()); }
  Eigen::Map<Eigen::VectorXd> vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<const Eigen::VectorXd> vec() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  Tensor reshaped(std::vector<int> shape) const {
    AVSR_REQUIRE(count(shape) == data_.size(), "cannot reshape ", shape_string(), " to ",
                 shape_string(shape));
    return Tensor(std::move(shape), data_);
  }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  std::string shape_string() const { return shape_string(shape_); }
  static std::string shape_string(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }
  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      AVSR_REQUIRE(d >= 0, "negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  bool operator==(const Tensor&) const = default;

 private:
  Eigen::Index rows() const {
    if (shape_.empty()) return 1;
    return static_cast<Eigen::Index>(data_.size() / (shape_.back() ? shape_.back() : 1));
  }
  Eigen::Index cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::vector<int> shape_;
  Storage data_;
};

}  // namespace avsr
