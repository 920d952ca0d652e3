#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "lksvd/linalg.hpp"

// Overcomplete DCT dictionary construction and the K-SVD dictionary update
// sweep used by the image-adaptive classic pipeline.

namespace lksvd {

struct Dictionary {
  Matrix atoms;                 // p x m, unit-norm columns
  std::size_t patch_side = 0;   // sqrt(p)

  std::size_t dim() const { return atoms.rows(); }
  std::size_t atom_count() const { return atoms.cols(); }
};

inline bool perfect_square_root(std::size_t n, std::size_t& root) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  root = r;
  return r * r == n;
}

/// Classic overcomplete DCT frame: 1-D grid D1[i,k] = cos(pi*i*k/sqrt(m)),
/// mean removed from columns k >= 1 (when enabled), columns normalized, then
/// D = D1 (x) D1 with columns renormalized. p and m must be perfect squares,
/// m >= p.
inline Dictionary overcomplete_dct(std::size_t p, std::size_t m,
                                   bool mean_removal = true) {
  std::size_t n1 = 0, m1 = 0;
  if (!perfect_square_root(p, n1))
    throw std::invalid_argument("overcomplete_dct: p must be a perfect square");
  if (!perfect_square_root(m, m1))
    throw std::invalid_argument("overcomplete_dct: m must be a perfect square");
  if (m < p) throw std::invalid_argument("overcomplete_dct: m must be >= p");

  Matrix d1(n1, m1);
  for (std::size_t k = 0; k < m1; ++k) {
    Vector col(n1);
    for (std::size_t i = 0; i < n1; ++i)
      col[i] = std::cos(M_PI * static_cast<double>(i) * static_cast<double>(k) /
                        static_cast<double>(m1));
    if (mean_removal && k >= 1) {
      double mean = 0.0;
      for (double v : col) mean += v;
      mean /= static_cast<double>(n1);
      for (double& v : col) v -= mean;
    }
    const double nn = norm(col);
    for (std::size_t i = 0; i < n1; ++i) d1(i, k) = col[i] / nn;
  }

  Dictionary dict;
  dict.patch_side = n1;
  dict.atoms = Matrix(p, m);
  for (std::size_t k1 = 0; k1 < m1; ++k1)
    for (std::size_t k2 = 0; k2 < m1; ++k2) {
      const std::size_t k = k1 * m1 + k2;
      double ss = 0.0;
      for (std::size_t i1 = 0; i1 < n1; ++i1)
        for (std::size_t i2 = 0; i2 < n1; ++i2) {
          const double v = d1(i1, k1) * d1(i2, k2);
          dict.atoms(i1 * n1 + i2, k) = v;
          ss += v * v;
        }
      const double nn = std::sqrt(ss);
      for (std::size_t i = 0; i < p; ++i) dict.atoms(i, k) /= nn;
    }
  return dict;
}

/// Orthonormal 2-D DCT-II basis (p x p): the square-dictionary counterpart
/// with an exactly orthonormal sampling grid cos(pi*(i+1/2)*k/n). Used where
/// an orthonormal D is required (tests, closed-form ISTA fixed points).
inline Matrix orthonormal_dct_basis(std::size_t p) {
  std::size_t n = 0;
  if (!perfect_square_root(p, n))
    throw std::invalid_argument("orthonormal_dct_basis: p must be a perfect square");
  Matrix b1(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      b1(i, k) = s * std::cos(M_PI * (static_cast<double>(i) + 0.5) *
                              static_cast<double>(k) / static_cast<double>(n));
  }
  Matrix out(p, p);
  for (std::size_t k1 = 0; k1 < n; ++k1)
    for (std::size_t k2 = 0; k2 < n; ++k2)
      for (std::size_t i1 = 0; i1 < n; ++i1)
        for (std::size_t i2 = 0; i2 < n; ++i2)
          out(i1 * n + i2, k1 * n + k2) = b1(i1, k1) * b1(i2, k2);
  return out;
}

struct KsvdUpdateResult {
  Dictionary dict;
  Matrix codes;                   // refit coefficients, count x m
  double error_before = 0.0;      // sum_k ||x_k - D a_k||^2 entering the sweep
  double error_after = 0.0;       // same after the sweep
  std::size_t replaced_atoms = 0; // unused/degenerate atoms replaced
};

/// One K-SVD sweep: atoms updated in ascending index order via the leading
/// singular triplet of the restricted residual; coefficients of the updated
/// atom are refit inside the same step. Atoms used by no patch are replaced
/// by the worst-represented patch (normalized, ties to the lowest index).
/// Total representation error is non-increasing over the sweep.
inline KsvdUpdateResult ksvd_update(const Dictionary& D, const Matrix& patches,
                                    const Matrix& codes) {
  const std::size_t p = D.dim(), m = D.atom_count(), n = patches.rows();
  if (patches.cols() != p)
    throw std::invalid_argument("ksvd_update: patches width != p");
  if (codes.rows() != n || codes.cols() != m)
    throw std::invalid_argument("ksvd_update: codes dims mismatch");

  KsvdUpdateResult res;
  res.dict = D;
  res.codes = codes;
  Matrix& A = res.codes;
  Matrix& Dm = res.dict.atoms;

  // Residual rows r_k = x_k - D a_k, maintained through the sweep.
  Matrix R = patches;
  for (std::size_t k = 0; k < n; ++k) {
    double* r = R.row(k);
    const double* a = A.row(k);
    for (std::size_t j = 0; j < m; ++j) {
      const double aj = a[j];
      if (aj == 0.0) continue;
      for (std::size_t i = 0; i < p; ++i) r[i] -= aj * Dm(i, j);
    }
  }
  res.error_before = frobenius_norm_sq(R);

  const auto replace_with_worst_patch = [&](std::size_t j) {
    std::size_t worst = 0;
    double worst_err = -1.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = dot(R.row(k), R.row(k), p);
      if (e > worst_err) {
        worst_err = e;
        worst = k;
      }
    }
    Vector atom(p);
    for (std::size_t i = 0; i < p; ++i) atom[i] = patches(worst, i);
    const double nn = norm(atom);
    if (nn == 0.0) return;  // zero patch: keep the old atom
    for (double& v : atom) v /= nn;
    for (double v : atom) {
      if (std::abs(v) > 1e-12) {
        if (v < 0.0)
          for (double& a : atom) a = -a;
        break;
      }
    }
    Dm.set_col(j, atom);
    ++res.replaced_atoms;
  };

  std::vector<std::size_t> users;
  for (std::size_t j = 0; j < m; ++j) {
    users.clear();
    for (std::size_t k = 0; k < n; ++k)
      if (A(k, j) != 0.0) users.push_back(k);

    if (users.empty()) {
      replace_with_worst_patch(j);
      continue;
    }

    // Restricted residual E_j excluding atom j's contribution.
    Matrix E(p, users.size());
    for (std::size_t t = 0; t < users.size(); ++t) {
      const std::size_t k = users[t];
      const double aj = A(k, j);
      const double* r = R.row(k);
      for (std::size_t i = 0; i < p; ++i) E(i, t) = r[i] + aj * Dm(i, j);
    }

    const auto triplet = leading_singular_triplet(E);
    if (!triplet) {
      // Degenerate: the users are represented without atom j; drop its
      // coefficients and give the atom a fresh start.
      for (std::size_t t = 0; t < users.size(); ++t) {
        const std::size_t k = users[t];
        for (std::size_t i = 0; i < p; ++i) R(k, i) = E(i, t);
        A(k, j) = 0.0;
      }
      replace_with_worst_patch(j);
      continue;
    }

    for (std::size_t t = 0; t < users.size(); ++t) {
      const std::size_t k = users[t];
      const double beta = triplet->s * triplet->v[t];
      for (std::size_t i = 0; i < p; ++i)
        R(k, i) = E(i, t) - beta * triplet->u[i];
      A(k, j) = beta;
    }
    Dm.set_col(j, triplet->u);
  }

  res.error_after = frobenius_norm_sq(R);
  return res;
}

}  // namespace lksvd
