#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lksvd/rng.hpp"

// Minimal dense linear algebra: row-major double matrices, power iteration
// for spectral norms and leading singular triplets, and a Cholesky solve for
// the small SPD systems inside OMP. Deliberately not a BLAS replacement.

namespace lksvd {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0)
      throw std::invalid_argument("Matrix: dimensions must be >= 1");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  Vector col(std::size_t c) const {
    Vector v(rows_);
    for (std::size_t r = 0; r < rows_; ++r) v[r] = (*this)(r, c);
    return v;
  }

  void set_col(std::size_t c, const Vector& v) {
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Vector helpers

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot: length mismatch");
  return dot(a.data(), b.data(), a.size());
}

inline double norm_sq(const Vector& v) { return dot(v.data(), v.data(), v.size()); }
inline double norm(const Vector& v) { return std::sqrt(norm_sq(v)); }

inline void scale(Vector& v, double s) {
  for (double& x : v) x *= s;
}

// ---------------------------------------------------------------------------
// Products

inline void matvec_into(const Matrix& A, const double* x, double* y) {
  const std::size_t r = A.rows(), c = A.cols();
  for (std::size_t i = 0; i < r; ++i) y[i] = dot(A.row(i), x, c);
}

/// y = A x
inline Vector matvec(const Matrix& A, const Vector& x) {
  if (A.cols() != x.size())
    throw std::invalid_argument("matvec: A.cols != x.len");
  Vector y(A.rows());
  matvec_into(A, x.data(), y.data());
  return y;
}

inline void matvec_t_into(const Matrix& A, const double* x, double* y) {
  const std::size_t r = A.rows(), c = A.cols();
  for (std::size_t j = 0; j < c; ++j) y[j] = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* row = A.row(i);
    for (std::size_t j = 0; j < c; ++j) y[j] += xi * row[j];
  }
}

/// y = A^T x
inline Vector matvec_t(const Matrix& A, const Vector& x) {
  if (A.rows() != x.size())
    throw std::invalid_argument("matvec_t: A.rows != x.len");
  Vector y(A.cols());
  matvec_t_into(A, x.data(), y.data());
  return y;
}

/// A += s * u v^T
inline void add_outer(Matrix& A, const double* u, const double* v, double s) {
  const std::size_t r = A.rows(), c = A.cols();
  for (std::size_t i = 0; i < r; ++i) {
    const double su = s * u[i];
    if (su == 0.0) continue;
    double* row = A.row(i);
    for (std::size_t j = 0; j < c; ++j) row[j] += su * v[j];
  }
}

/// G = A^T A (symmetric by construction; entries use the same summation
/// order as dot() on columns so cached Grams match per-pair dots bitwise).
inline Matrix gram(const Matrix& A) {
  const std::size_t n = A.cols();
  Matrix G(n, n);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    const double* row = A.row(i);
    for (std::size_t a = 0; a < n; ++a) {
      const double ra = row[a];
      if (ra == 0.0) continue;
      double* g = G.row(a);
      for (std::size_t b = 0; b < n; ++b) g[b] += ra * row[b];
    }
  }
  return G;
}

inline double frobenius_norm_sq(const Matrix& A) {
  return dot(A.data(), A.data(), A.size());
}

// ---------------------------------------------------------------------------
// Power iteration

struct PowerIterResult {
  double value = 0.0;  // sigma_max(A)^2
  bool converged = false;
  int iters = 0;
};

namespace detail {
// Deterministic fallback start for the rare case where the all-ones vector
// lies exactly in the null space of the iterated operator.
inline void hashed_unit_vector(Vector& v) {
  double s = 0.0;
  for (std::size_t j = 0; j < v.size(); ++j) {
    v[j] = unit_double(stream_at(0x5eedu, j)) - 0.5;
    s += v[j] * v[j];
  }
  const double n = std::sqrt(s);
  for (double& x : v) x /= n;
}
}  // namespace detail

/// Largest eigenvalue of A^T A by power iteration from the normalized
/// all-ones vector. Converged when successive Rayleigh quotients differ by
/// less than tol relatively.
inline PowerIterResult spectral_norm_sq(const Matrix& A, int max_iters = 1000,
                                        double tol = 1e-10) {
  if (max_iters < 1) throw std::invalid_argument("spectral_norm_sq: max_iters < 1");
  if (!(tol > 0.0)) throw std::invalid_argument("spectral_norm_sq: tol <= 0");
  PowerIterResult res;
  if (frobenius_norm_sq(A) == 0.0) {
    res.converged = true;
    return res;
  }
  const std::size_t n = A.cols();
  Vector v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  Vector av(A.rows()), w(n);
  double prev = -1.0;
  bool restarted = false;
  for (int it = 1; it <= max_iters; ++it) {
    matvec_into(A, v.data(), av.data());
    const double rho = dot(av.data(), av.data(), av.size());  // ||Av||^2, v unit
    res.value = rho;
    res.iters = it;
    if (rho == 0.0) {  // start vector sits in the null space
      if (restarted) return res;
      restarted = true;
      detail::hashed_unit_vector(v);
      prev = -1.0;
      continue;
    }
    if (prev >= 0.0 && std::abs(rho - prev) < tol * rho) {
      res.converged = true;
      return res;
    }
    prev = rho;
    matvec_t_into(A, av.data(), w.data());
    const double wn = norm(w);
    for (std::size_t j = 0; j < n; ++j) v[j] = w[j] / wn;
  }
  return res;  // best estimate, converged=false
}

// ---------------------------------------------------------------------------
// Leading singular triplet

struct SingularTriplet {
  Vector u;     // left singular vector, unit norm
  double s = 0; // singular value, >= 0
  Vector v;     // right singular vector, unit norm
};

namespace detail {
inline void fix_triplet_sign(Vector& u, Vector& v) {
  // Sign convention: first nonzero entry of u positive.
  for (double x : u) {
    if (std::abs(x) > 1e-12) {
      if (x < 0.0) {
        for (double& a : u) a = -a;
        for (double& b : v) b = -b;
      }
      return;
    }
  }
}
}  // namespace detail

/// Best rank-1 approximation factors of E via power iteration on the smaller
/// Gram side. Returns nullopt when E is numerically zero (degenerate atom).
inline std::optional<SingularTriplet> leading_singular_triplet(
    const Matrix& E, int max_iters = 1000, double tol = 1e-10) {
  if (frobenius_norm_sq(E) <= tol * tol) return std::nullopt;
  const std::size_t r = E.rows(), c = E.cols();
  const bool v_side = (c <= r);  // iterate on the smaller Gram
  const std::size_t n = v_side ? c : r;
  const std::size_t k = v_side ? r : c;

  Vector x(n, 1.0 / std::sqrt(static_cast<double>(n)));
  Vector mx(k), w(n);
  const auto fwd = [&](const Vector& in, Vector& out) {
    v_side ? matvec_into(E, in.data(), out.data())
           : matvec_t_into(E, in.data(), out.data());
  };
  const auto bwd = [&](const Vector& in, Vector& out) {
    v_side ? matvec_t_into(E, in.data(), out.data())
           : matvec_into(E, in.data(), out.data());
  };

  double prev = -1.0;
  bool restarted = false;
  for (int it = 0; it < max_iters; ++it) {
    fwd(x, mx);
    const double rho = dot(mx.data(), mx.data(), k);
    if (rho == 0.0) {
      if (restarted) return std::nullopt;
      restarted = true;
      detail::hashed_unit_vector(x);
      prev = -1.0;
      continue;
    }
    if (prev >= 0.0 && std::abs(rho - prev) < tol * rho) break;
    prev = rho;
    bwd(mx, w);
    const double wn = norm(w);
    for (std::size_t j = 0; j < n; ++j) x[j] = w[j] / wn;
  }
  fwd(x, mx);
  const double s = norm(mx);
  if (s == 0.0) return std::nullopt;
  scale(mx, 1.0 / s);

  SingularTriplet t;
  t.s = s;
  if (v_side) {
    t.v = x;
    t.u = mx;
  } else {
    t.u = x;
    t.v = mx;
  }
  detail::fix_triplet_sign(t.u, t.v);
  return t;
}

// ---------------------------------------------------------------------------
// SPD solve

class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what)
      : std::runtime_error(what) {}
};

/// Solves G x = b for symmetric positive definite G via Cholesky. Throws
/// NotPositiveDefinite on a non-positive (or numerically vanishing) pivot,
/// which OMP interprets as a linearly dependent atom selection.
inline Vector solve_posdef(const Matrix& G, const Vector& b) {
  const std::size_t n = G.rows();
  if (G.cols() != n) throw std::invalid_argument("solve_posdef: G not square");
  if (b.size() != n) throw std::invalid_argument("solve_posdef: b length mismatch");
  Matrix L(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = G(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (!(d > 1e-12 * std::max(G(j, j), 1e-300)))
      throw NotPositiveDefinite("solve_posdef: non-positive pivot at row " +
                                std::to_string(j));
    const double ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = G(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / ljj;
    }
  }
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * y[k];
    y[i] = s / L(i, i);
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= L(k, ii) * x[k];
    x[ii] = s / L(ii, ii);
  }
  return x;
}

}  // namespace lksvd
