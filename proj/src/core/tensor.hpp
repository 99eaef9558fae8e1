#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace pistm {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_to_string(const Shape& dims);

// Dense row-major tensor of 64-bit floats. All field data, network weights
// and lattice state in this project live in this one container.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape dims) : dims_(std::move(dims)), data_(shape_numel(dims_), 0.0) {}

  Tensor(Shape dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    if (data_.size() != shape_numel(dims_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(dims_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
  static Tensor full(Shape dims, double v) {
    Tensor t(std::move(dims));
    for (double& x : t.data_) x = v;
    return t;
  }
  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
  }

  const Shape& dims() const { return dims_; }
  std::size_t ndim() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return dims_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major index helpers for the handful of ranks this project uses.
  double& at(std::size_t i, std::size_t j) { return data_[i * dims_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * dims_[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * dims_[1] + j) * dims_[2] + k];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }
  double at(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l];
  }

  bool same_dims(const Tensor& other) const { return dims_ == other.dims_; }

  Tensor reshaped(Shape dims) const {
    if (shape_numel(dims) != size()) {
      throw ShapeError("cannot reshape " + shape_to_string(dims_) + " to " + shape_to_string(dims));
    }
    return Tensor(std::move(dims), data_);
  }

  void fill(double v) {
    for (double& x : data_) x = v;
  }

  bool all_finite() const;
  // Throws ContractError naming `context` if any element is NaN/Inf.
  void require_finite(const char* context) const;

  double min() const;
  double max() const;
  double sum() const;
  double frobenius_norm() const;

 private:
  Shape dims_;
  std::vector<double> data_;
};

// ||a - b||_F / ||b||_F; throws ContractError when ||b|| == 0.
double relative_frobenius_error(const Tensor& a, const Tensor& b);

}  // namespace pistm
