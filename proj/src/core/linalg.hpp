#pragma once

#include "core/tensor.hpp"

namespace pistm {

// Lower-triangular L with L*L^T = a. `a` must be symmetric positive definite;
// a non-positive pivot raises NotPositiveDefiniteError carrying its index.
Tensor cholesky(const Tensor& a);

// Solves (L*L^T) x = b by forward then backward substitution. b may have
// multiple right-hand-side columns ([n] or [n,m]).
Tensor cholesky_solve(const Tensor& l, const Tensor& b);

// Forward substitution only: L y = b.
Tensor lower_solve(const Tensor& l, const Tensor& b);

}  // namespace pistm
