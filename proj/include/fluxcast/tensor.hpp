#pragma once

#include <cmath>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "fluxcast/common.hpp"

namespace fluxcast {

/// Dense row-major double tensor, rank 0..5. All model and field math runs in
/// double so finite-difference gradient checks are meaningful.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor from_vector(std::vector<int> shape, std::vector<double> data);

  bool empty() const { return data_.empty(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  const std::vector<int>& shape() const { return shape_; }
  long size() const { return static_cast<long>(data_.size()); }
  std::string shape_str() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](long i) { return data_[static_cast<size_t>(i)]; }
  double operator[](long i) const { return data_[static_cast<size_t>(i)]; }

  // Index helpers for the layouts used throughout: (K,H,W) fields and
  // (N,K,H,W) trajectories, row-major.
  double& at(int a, int b) { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  double at(int a, int b) const { return data_[static_cast<size_t>(a) * shape_[1] + b]; }
  double& at(int a, int b, int c) {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double at(int a, int b, int c) const {
    return data_[(static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double& at(int a, int b, int c, int d) {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  double at(int a, int b, int c, int d) const {
    return data_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(0.0); }

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(double s);
  void axpy(double a, const Tensor& x);  // this += a * x

  double sum() const;
  double max_abs() const;
  bool all_finite() const;
  // Index of the first non-finite entry, -1 if all finite.
  long first_nonfinite() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double s);

}  // namespace fluxcast
