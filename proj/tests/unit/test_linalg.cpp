#include <cmath>
#include <vector>

#include "doctest.h"

#include "core/error.hpp"
#include "core/linalg.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

using namespace pistm;

TEST_CASE("cholesky of a hand-computed 2x2") {
  // [[4,2],[2,3]] = L L^T with L = [[2,0],[1,sqrt(2)]]
  Tensor a({2, 2}, {4, 2, 2, 3});
  Tensor l = cholesky(a);
  CHECK(l.at(0, 0) == doctest::Approx(2.0));
  CHECK(l.at(0, 1) == 0.0);
  CHECK(l.at(1, 0) == doctest::Approx(1.0));
  CHECK(l.at(1, 1) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("cholesky rejects an indefinite matrix and reports the pivot") {
  Tensor a({2, 2}, {1, 2, 2, 1});  // eigenvalues 3, -1
  try {
    cholesky(a);
    FAIL("expected a decomposition failure");
  } catch (const NotPositiveDefiniteError& e) {
    CHECK(e.pivot() == 1);
    CHECK(std::string(e.category()) == "linalg.not_positive_definite");
  }
}

TEST_CASE("cholesky_solve against a hand-solved system") {
  // [[4,2],[2,3]] x = [8,7]  =>  x = [1.25, 1.5]
  Tensor a({2, 2}, {4, 2, 2, 3});
  Tensor l = cholesky(a);
  Tensor x = cholesky_solve(l, Tensor({2}, {8, 7}));
  CHECK(x[0] == doctest::Approx(1.25));
  CHECK(x[1] == doctest::Approx(1.5));
}

TEST_CASE("lower_solve with multiple right-hand sides") {
  // L = [[2,0],[1,1]], B = [[2,4],[3,5]] => Y = [[1,2],[2,3]]
  Tensor l({2, 2}, {2, 0, 1, 1});
  Tensor b({2, 2}, {2, 4, 3, 5});
  Tensor y = lower_solve(l, b);
  CHECK(y.at(0, 0) == doctest::Approx(1.0));
  CHECK(y.at(0, 1) == doctest::Approx(2.0));
  CHECK(y.at(1, 0) == doctest::Approx(2.0));
  CHECK(y.at(1, 1) == doctest::Approx(3.0));
}

TEST_CASE("lower_solve rejects a zero diagonal") {
  Tensor l({2, 2}, {1, 0, 5, 0});
  CHECK_THROWS_AS(lower_solve(l, Tensor({2}, {1, 1})), SingularError);
}

TEST_CASE("random SPD systems solve to high accuracy") {
  Rng rng = make_rng(99);
  for (std::size_t n : {5ULL, 20ULL, 80ULL, 200ULL}) {
    // A = M M^T + n*I is comfortably SPD
    Tensor m = random_normal({n, n}, rng);
    Tensor a({n, n});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) s += m.at(i, k) * m.at(j, k);
        a.at(i, j) = s + (i == j ? static_cast<double>(n) : 0.0);
      }
    }
    Tensor x_true = random_normal({n}, rng);
    Tensor b({n});
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * x_true[j];
      b[i] = s;
    }
    Tensor l = cholesky(a);
    Tensor x = cholesky_solve(l, b);
    double err = 0.0;
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      err += (x[i] - x_true[i]) * (x[i] - x_true[i]);
      ref += x_true[i] * x_true[i];
    }
    CHECK(std::sqrt(err / ref) < 1e-10);

    // L L^T reconstructs A
    double recon = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k <= std::min(i, j); ++k) {
          s += l.at(i, k) * l.at(j, k);
        }
        recon = std::max(recon, std::abs(s - a.at(i, j)));
      }
    }
    CHECK(recon < 1e-8 * static_cast<double>(n));
  }
}

TEST_CASE("cholesky requires a square 2d tensor") {
  CHECK_THROWS_AS(cholesky(Tensor({2, 3})), ShapeError);
  CHECK_THROWS_AS(cholesky(Tensor({4})), ShapeError);
}
