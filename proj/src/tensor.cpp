#include "fluxcast/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace fluxcast {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  size_t n = shape_.empty() ? 0 : 1;
  for (int d : shape_) {
    if (d <= 0) throw ShapeError("tensor dimension must be positive, got " + std::to_string(d));
    n *= static_cast<size_t>(d);
  }
  data_.assign(n, 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> data) {
  Tensor t(std::move(shape));
  if (t.data_.size() != data.size())
    throw ShapeError("from_vector: " + std::to_string(data.size()) + " values for shape " +
                     t.shape_str());
  t.data_ = std::move(data);
  return t;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ")";
  return os.str();
}

static void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
}

Tensor& Tensor::operator+=(const Tensor& o) {
  check_same(*this, o, "+=");
  for (long i = 0; i < size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  check_same(*this, o, "-=");
  for (long i = 0; i < size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

void Tensor::axpy(double a, const Tensor& x) {
  check_same(*this, x, "axpy");
  for (long i = 0; i < size(); ++i) data_[i] += a * x.data_[i];
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Tensor::all_finite() const { return first_nonfinite() < 0; }

long Tensor::first_nonfinite() const {
  for (long i = 0; i < size(); ++i)
    if (!std::isfinite(data_[i])) return i;
  return -1;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double s) { return a *= s; }

}  // namespace fluxcast
