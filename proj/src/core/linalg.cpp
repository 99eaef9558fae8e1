#include "core/linalg.hpp"

#include <cmath>

namespace pistm {

namespace {

void check_square(const Tensor& a, const char* who) {
  if (a.ndim() != 2 || a.dim(0) != a.dim(1)) {
    throw ShapeError(std::string(who) + " expects a square matrix, got " +
                     shape_to_string(a.dims()));
  }
}

// Accepts [n] or [n,m]; returns column count.
std::size_t rhs_cols(const Tensor& l, const Tensor& b) {
  const std::size_t n = l.dim(0);
  if (b.ndim() == 1 && b.dim(0) == n) return 1;
  if (b.ndim() == 2 && b.dim(0) == n) return b.dim(1);
  throw ShapeError("right-hand side " + shape_to_string(b.dims()) + " does not match system size " +
                   std::to_string(n));
}

}  // namespace

Tensor cholesky(const Tensor& a) {
  check_square(a, "cholesky");
  const std::size_t n = a.dim(0);
  Tensor l({n, n});
  for (std::size_t j = 0; j < n; ++j) {
    double d = a.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l.at(j, k) * l.at(j, k);
    if (!(d > 0.0)) {
      throw NotPositiveDefiniteError(j, "cholesky pivot " + std::to_string(j) +
                                            " is not positive (" + std::to_string(d) + ")");
    }
    const double ljj = std::sqrt(d);
    l.at(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l.at(i, k) * l.at(j, k);
      l.at(i, j) = s / ljj;
    }
  }
  return l;
}

Tensor lower_solve(const Tensor& l, const Tensor& b) {
  check_square(l, "lower_solve");
  const std::size_t n = l.dim(0);
  const std::size_t m = rhs_cols(l, b);
  Tensor y(b.dims(), b.vec());
  for (std::size_t i = 0; i < n; ++i) {
    if (l.at(i, i) == 0.0) {
      throw SingularError("zero diagonal at row " + std::to_string(i));
    }
  }
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = y[i * m + c];
      for (std::size_t k = 0; k < i; ++k) s -= l.at(i, k) * y[k * m + c];
      y[i * m + c] = s / l.at(i, i);
    }
  }
  return y;
}

Tensor cholesky_solve(const Tensor& l, const Tensor& b) {
  const std::size_t n = l.dim(0);
  const std::size_t m = rhs_cols(l, b);
  Tensor x = lower_solve(l, b);
  // back substitution with L^T
  for (std::size_t c = 0; c < m; ++c) {
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x[ii * m + c];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l.at(k, ii) * x[k * m + c];
      x[ii * m + c] = s / l.at(ii, ii);
    }
  }
  return x;
}

}  // namespace pistm
