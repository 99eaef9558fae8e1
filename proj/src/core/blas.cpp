#include "core/blas.hpp"

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace pistm::blas {

namespace {

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};

const BlasInit g_blas_init;

}  // namespace

void dgemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
           const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
           double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb), beta,
              c, static_cast<int>(ldc));
}

}  // namespace pistm::blas
