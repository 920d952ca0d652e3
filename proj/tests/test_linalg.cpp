#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lksvd/linalg.hpp"
#include "lksvd/rng.hpp"
#include "oracles.hpp"

using namespace lksvd;

TEST_CASE("matvec identity and zero") {
  const Matrix I3 = Matrix::identity(3);
  const Vector v{1.0, 2.0, 3.0};
  REQUIRE(matvec(I3, v) == v);

  const Matrix Z(4, 3);
  const Vector zero = matvec(Z, v);
  for (double x : zero) REQUIRE(x == 0.0);
}

TEST_CASE("matvec matches triple-loop oracle") {
  const Matrix A = oracles::random_matrix(5, 7, 11);
  const Vector v = oracles::random_vector(7, 12);
  const Vector got = matvec(A, v);
  const Vector want = oracles::naive_matvec(A, v);
  for (std::size_t i = 0; i < got.size(); ++i)
    REQUIRE(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("matvec dimension mismatch throws") {
  const Matrix A(3, 4);
  REQUIRE_THROWS_AS(matvec(A, Vector(3)), std::invalid_argument);
  REQUIRE_THROWS_AS(matvec_t(A, Vector(4)), std::invalid_argument);
}

TEST_CASE("matvec unit-basis probe recovers columns") {
  const Matrix A = oracles::random_matrix(6, 5, 21);
  for (std::size_t j = 0; j < A.cols(); ++j) {
    Vector e(A.cols(), 0.0);
    e[j] = 1.0;
    const Vector col = matvec(A, e);
    for (std::size_t i = 0; i < A.rows(); ++i) REQUIRE(col[i] == A(i, j));
  }
}

TEST_CASE("spectral_norm_sq on identity and diagonal") {
  REQUIRE(spectral_norm_sq(Matrix::identity(4)).value == Catch::Approx(1.0));
  Matrix d(2, 2);
  d(0, 0) = 3.0;
  d(1, 1) = 1.0;
  const auto r = spectral_norm_sq(d);
  REQUIRE(r.converged);
  REQUIRE(r.value == Catch::Approx(9.0).epsilon(1e-10));
}

TEST_CASE("spectral_norm_sq matches dense eigensolver oracle") {
  const Matrix A = oracles::random_matrix(8, 16, 31);
  const auto r = spectral_norm_sq(A, 5000, 1e-13);
  REQUIRE(r.converged);
  const double want = oracles::largest_eigenvalue_sym(oracles::naive_gram(A));
  REQUIRE(std::abs(r.value - want) < 1e-8 * want);
}

TEST_CASE("spectral_norm_sq transpose and scaling laws") {
  const Matrix A = oracles::random_matrix(7, 9, 41);
  Matrix At(9, 7);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 9; ++j) At(j, i) = A(i, j);
  const double sa = spectral_norm_sq(A, 5000, 1e-13).value;
  const double sat = spectral_norm_sq(At, 5000, 1e-13).value;
  REQUIRE(std::abs(sa - sat) < 1e-9 * sa);

  for (double k : {0.5, 2.0, 10.0}) {
    Matrix kA = A;
    for (std::size_t i = 0; i < kA.size(); ++i) kA.data()[i] *= k;
    const double ska = spectral_norm_sq(kA, 5000, 1e-13).value;
    REQUIRE(std::abs(ska - k * k * sa) < 1e-9 * ska);
  }
}

TEST_CASE("spectral_norm_sq survives an all-ones null-space start") {
  Matrix A(2, 2);
  A(0, 0) = 1.0;
  A(0, 1) = -1.0;
  A(1, 0) = 1.0;
  A(1, 1) = -1.0;  // A * (1,1) = 0 but sigma_max^2 = 4
  const auto r = spectral_norm_sq(A);
  REQUIRE(r.converged);
  REQUIRE(r.value == Catch::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("leading_singular_triplet on an exact rank-1 matrix") {
  const std::size_t p = 6, q = 4;
  Vector a = oracles::random_vector(p, 51);
  Vector b = oracles::random_vector(q, 52);
  scale(a, 1.0 / norm(a));
  scale(b, 1.0 / norm(b));
  Matrix E(p, q);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) E(i, j) = a[i] * b[j];
  const auto t = leading_singular_triplet(E);
  REQUIRE(t.has_value());
  REQUIRE(t->s == Catch::Approx(1.0).epsilon(1e-10));
  REQUIRE(norm(t->u) == Catch::Approx(1.0).epsilon(1e-12));
  REQUIRE(norm(t->v) == Catch::Approx(1.0).epsilon(1e-12));
  double resid = 0.0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < q; ++j) {
      const double d = E(i, j) - t->s * t->u[i] * t->v[j];
      resid += d * d;
    }
  REQUIRE(std::sqrt(resid) < 1e-10);
  // Sign convention: first nonzero entry of u positive.
  for (double x : t->u) {
    if (std::abs(x) > 1e-12) {
      REQUIRE(x > 0.0);
      break;
    }
  }
}

TEST_CASE("leading_singular_triplet flags the zero matrix as degenerate") {
  REQUIRE_FALSE(leading_singular_triplet(Matrix(3, 3)).has_value());
}

TEST_CASE("leading singular value cross-checks spectral_norm_sq") {
  const Matrix E = oracles::random_matrix(8, 5, 61);
  const auto t = leading_singular_triplet(E, 5000, 1e-13);
  REQUIRE(t.has_value());
  const double want = std::sqrt(spectral_norm_sq(E, 5000, 1e-13).value);
  REQUIRE(std::abs(t->s - want) < 1e-8 * want);
}

TEST_CASE("leading triplet beats 1000 random rank-1 candidates") {
  const Matrix E = oracles::random_matrix(4, 4, 71);
  const auto t = leading_singular_triplet(E, 5000, 1e-13);
  REQUIRE(t.has_value());
  double best_res = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double d = E(i, j) - t->s * t->u[i] * t->v[j];
      best_res += d * d;
    }
  CounterRng rng(72);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector u(4), v(4);
    for (double& x : u) x = rng.next_gaussian();
    for (double& x : v) x = rng.next_gaussian();
    scale(u, 1.0 / norm(u));
    // Optimal scale for this (u, v) direction pair: s = u^T E v.
    double s = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) s += u[i] * E(i, j) * v[j] / norm_sq(v);
    double res = 0.0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        const double d = E(i, j) - s * u[i] * v[j];
        res += d * d;
      }
    REQUIRE(best_res <= res + 1e-9);
  }
}

TEST_CASE("solve_posdef identity and diagonal") {
  const Vector b{3.0, 4.0};
  const Vector x = solve_posdef(Matrix::identity(2), b);
  REQUIRE(x[0] == Catch::Approx(3.0));
  REQUIRE(x[1] == Catch::Approx(4.0));

  Matrix g(2, 2);
  g(0, 0) = 2.0;
  g(1, 1) = 4.0;
  const Vector x2 = solve_posdef(g, Vector{2.0, 8.0});
  REQUIRE(x2[0] == Catch::Approx(1.0));
  REQUIRE(x2[1] == Catch::Approx(2.0));
}

TEST_CASE("solve_posdef multiply-back on random SPD") {
  const Matrix A = oracles::random_matrix(6, 6, 81);
  Matrix G = oracles::naive_gram(A);
  for (std::size_t i = 0; i < 6; ++i) G(i, i) += 1.0;  // A^T A + I
  const Vector b = oracles::random_vector(6, 82);
  const Vector x = solve_posdef(G, b);
  const Vector gx = matvec(G, x);
  for (std::size_t i = 0; i < 6; ++i) REQUIRE(std::abs(gx[i] - b[i]) < 1e-9);
}

TEST_CASE("solve_posdef rejects singular systems") {
  Matrix G(2, 2);
  G(0, 0) = 1.0;
  G(0, 1) = 1.0;
  G(1, 0) = 1.0;
  G(1, 1) = 1.0;  // rank 1
  REQUIRE_THROWS_AS(solve_posdef(G, Vector{1.0, 1.0}), NotPositiveDefinite);
}
