// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rob {

using real = double;

/// Base error type; subclasses map to CLI exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument (CLI exit code 2).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Runtime failure: IO, corruption, contract violation (CLI exit code 3).
class IoError : public Error {
public:
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}
inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

using EigenRowMat =
    Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<EigenRowMat>;
using ConstMatMap = Eigen::Map<const EigenRowMat>;

/// Dense row-major tensor of doubles. Rank is dynamic; most of the code
/// works with rank-2 (matrices) and rank-3 ([C,H,W] images).
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

  Tensor(std::initializer_list<std::size_t> shape)
      : Tensor(std::vector<std::size_t>(shape)) {}

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::size_t> shape, real v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor scalar(real v) {
    Tensor t({1});
    t.data_[0] = v;
    return t;
  }

  static Tensor from_rows(std::size_t rows, std::size_t cols, std::vector<real> values) {
    check(values.size() == rows * cols, "Tensor::from_rows: size mismatch");
    Tensor t({rows, cols});
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rows() const { return shape_.size() == 1 ? 1 : dim(0); }
  std::size_t cols() const { return shape_.size() == 1 ? dim(0) : dim(ndim() - 1); }

  real* data() { return data_.data(); }
  const real* data() const { return data_.data(); }
  std::vector<real>& vec() { return data_; }
  const std::vector<real>& vec() const { return data_; }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real& at2(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  real at2(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  /// [C,H,W] accessor.
  real& at3(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * dim(1) + h) * dim(2) + w];
  }
  real at3(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * dim(1) + h) * dim(2) + w];
  }

  /// View the tensor as a matrix: rank-1 becomes a row vector, rank>2
  /// collapses leading dims into rows.
  MatMap mat() {
    auto [r, c] = mat_dims();
    return MatMap(data_.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  ConstMatMap mat() const {
    auto [r, c] = mat_dims();
    return ConstMatMap(data_.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }

  /// Same data, new shape (element count must match).
  Tensor reshaped(std::vector<std::size_t> shape) const {
    check(count(shape) == size(), "reshape: element count mismatch");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

  void add_(const Tensor& o) {
    check(same_shape(o), "Tensor::add_: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  }

  void scale_(real s) {
    for (auto& v : data_) v *= s;
  }

  real sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i)
      s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + "]";
  }

private:
  std::pair<std::size_t, std::size_t> mat_dims() const {
    if (shape_.empty()) return {0, 0};
    if (shape_.size() == 1) return {1, shape_[0]};
    std::size_t c = shape_.back(), r = 1;
    for (std::size_t i = 0; i + 1 < shape_.size(); ++i) r *= shape_[i];
    return {r, c};
  }

  std::vector<std::size_t> shape_;
  std::vector<real> data_;
};

}  // namespace rob
