#include "core/tensor.hpp"

#include <cmath>
#include <limits>

namespace pistm {

std::size_t shape_numel(const Shape& dims) {
  std::size_t n = 1;
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("zero extent in shape " + shape_to_string(dims));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void Tensor::require_finite(const char* context) const {
  if (!all_finite()) {
    throw ContractError(std::string(context) + ": tensor contains non-finite values");
  }
}

double Tensor::min() const {
  double m = std::numeric_limits<double>::infinity();
  for (double x : data_) m = std::min(m, x);
  return m;
}

double Tensor::max() const {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : data_) m = std::max(m, x);
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  for (double x : data_) s += x;
  return s;
}

double Tensor::frobenius_norm() const {
  double s = 0.0;
  for (double x : data_) s += x * x;
  return std::sqrt(s);
}

double relative_frobenius_error(const Tensor& a, const Tensor& b) {
  if (!a.same_dims(b)) {
    throw ShapeError("relative error between " + shape_to_string(a.dims()) + " and " +
                     shape_to_string(b.dims()));
  }
  double num = 0.0, den = 0.0;
  const double* pa = a.data();
  const double* pb = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = pa[i] - pb[i];
    num += d * d;
    den += pb[i] * pb[i];
  }
  if (den == 0.0) {
    throw ContractError("relative error with zero-norm reference");
  }
  return std::sqrt(num / den);
}

}  // namespace pistm
