#pragma once

#include <cstddef>

namespace pistm::blas {

// C = alpha * op(A) * op(B) + beta * C, row-major dense f64.
// Thin wrapper over the system BLAS; pinned to one BLAS thread so results
// are bit-reproducible and pipeline-level concurrency does not oversubscribe.
void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
           const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
           double* c, std::size_t ldc);

}  // namespace pistm::blas
