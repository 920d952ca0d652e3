#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "lksvd/dictionary.hpp"
#include "lksvd/linalg.hpp"

// Sparse coding engines: OMP with the noise-gated stopping rule (classic
// path) and fixed-iteration ISTA (learned path), plus the soft-threshold
// primitive and the l1 objective.

namespace lksvd {

struct SparseCode {
  Vector coeffs;                      // length m, zero outside support
  std::vector<std::size_t> support;   // atoms in selection order
  bool hit_sparsity_cap = false;      // stopped by s_max, not by the error gate
};

struct OmpConfig {
  double error_gain = 1.15;  // the stopping threshold is error_gain * p * sigma^2
  std::size_t s_max = 1;
  double sigma = 0.0;
};

struct IstaConfig {
  double lambda = 0.0;
  double c = 1.0;        // step normalizer; majorization needs c >= ||D||_2^2
  std::size_t iters = 1;
};

/// [S_theta(v)]_i = sign(v_i) * (|v_i| - theta)_+ ; |v_i| == theta maps to 0.
inline Vector soft_threshold(const Vector& v, double theta) {
  if (!(theta >= 0.0)) throw std::invalid_argument("soft_threshold: theta < 0");
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double a = std::abs(v[i]) - theta;
    out[i] = a > 0.0 ? (v[i] > 0.0 ? a : -a) : 0.0;
  }
  return out;
}

/// Greedy pursuit: repeatedly selects the atom best correlated with the
/// residual (ties to the lowest index), refits all selected coefficients by
/// least squares, and stops once ||D a - y||^2 <= error_gain * p * sigma^2 or
/// s_max atoms are in use. A numerically dependent selection is dropped and
/// marked ineligible. Pass a cached Gram (D^T D) to speed up batch use; the
/// result is the same up to correlation rounding.
inline SparseCode omp(const Dictionary& D, const Vector& y, const OmpConfig& cfg,
                      const Matrix* gram_cache = nullptr) {
  const std::size_t p = D.dim(), m = D.atom_count();
  if (y.size() != p) throw std::invalid_argument("omp: y length != p");
  if (!(cfg.error_gain > 0.0)) throw std::invalid_argument("omp: error_gain <= 0");
  if (cfg.s_max < 1) throw std::invalid_argument("omp: s_max < 1");
  if (gram_cache && (gram_cache->rows() != m || gram_cache->cols() != m))
    throw std::invalid_argument("omp: gram cache dims mismatch");

  SparseCode code;
  code.coeffs.assign(m, 0.0);
  const double threshold =
      cfg.error_gain * static_cast<double>(p) * cfg.sigma * cfg.sigma;

  double residual_sq = norm_sq(y);
  if (residual_sq <= threshold) return code;

  const Vector h0 = matvec_t(D.atoms, y);  // D^T y
  std::vector<char> eligible(m, 1);
  std::vector<std::size_t>& support = code.support;
  Vector coef;           // coefficients on the support
  Vector corr = h0;      // D^T (y - D_S coef)
  Vector approx(p, 0.0); // D_S coef

  const auto atom_dot = [&](std::size_t a, std::size_t b) {
    if (gram_cache) return (*gram_cache)(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i) s += D.atoms(i, a) * D.atoms(i, b);
    return s;
  };

  while (support.size() < cfg.s_max) {
    // Current correlations (first pass: corr == h0 already).
    if (!support.empty()) {
      if (gram_cache) {
        for (std::size_t j = 0; j < m; ++j) {
          double s = h0[j];
          const double* gr = gram_cache->row(j);
          for (std::size_t t = 0; t < support.size(); ++t)
            s -= gr[support[t]] * coef[t];
          corr[j] = s;
        }
      } else {
        for (std::size_t i = 0; i < p; ++i) {
          double s = 0.0;
          for (std::size_t t = 0; t < support.size(); ++t)
            s += coef[t] * D.atoms(i, support[t]);
          approx[i] = s;
        }
        for (std::size_t j = 0; j < m; ++j) {
          double s = h0[j];
          for (std::size_t i = 0; i < p; ++i) s -= D.atoms(i, j) * approx[i];
          corr[j] = s;
        }
      }
    }

    // Selection loop: retry past numerically dependent picks.
    bool advanced = false;
    while (true) {
      std::size_t best = m;
      double best_abs = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        if (!eligible[j]) continue;
        const double a = std::abs(corr[j]);
        if (a > best_abs) {
          best_abs = a;
          best = j;
        }
      }
      if (best == m || best_abs == 0.0) break;  // nothing useful left

      const std::size_t s = support.size() + 1;
      Matrix G(s, s);
      Vector rhs(s);
      for (std::size_t a = 0; a < s; ++a) {
        const std::size_t ja = a + 1 == s ? best : support[a];
        rhs[a] = h0[ja];
        for (std::size_t b = 0; b <= a; ++b) {
          const std::size_t jb = b + 1 == s ? best : support[b];
          const double g = atom_dot(ja, jb);
          G(a, b) = g;
          G(b, a) = g;
        }
      }
      try {
        coef = solve_posdef(G, rhs);
      } catch (const NotPositiveDefinite&) {
        eligible[best] = 0;
        continue;
      }
      support.push_back(best);
      eligible[best] = 0;
      advanced = true;
      break;
    }
    if (!advanced) break;

    // Exact residual on the refit support.
    Vector r = y;
    for (std::size_t t = 0; t < support.size(); ++t) {
      const double ct = coef[t];
      for (std::size_t i = 0; i < p; ++i) r[i] -= ct * D.atoms(i, support[t]);
    }
    residual_sq = norm_sq(r);
    if (residual_sq <= threshold) break;
  }

  for (std::size_t t = 0; t < support.size(); ++t)
    code.coeffs[support[t]] = coef[t];
  code.hit_sparsity_cap =
      support.size() == cfg.s_max && residual_sq > threshold;
  return code;
}

/// Exactly cfg.iters applications of
///   a <- S_{lambda/c}( a - (1/c) D^T (D a - y) ).
inline Vector ista(const Matrix& D, const Vector& y, const IstaConfig& cfg,
                   const Vector& alpha0) {
  if (!(cfg.c > 0.0)) throw std::invalid_argument("ista: c must be > 0");
  if (cfg.iters < 1) throw std::invalid_argument("ista: iters < 1");
  if (!(cfg.lambda >= 0.0)) throw std::invalid_argument("ista: lambda < 0");
  const std::size_t p = D.rows(), m = D.cols();
  if (y.size() != p) throw std::invalid_argument("ista: y length != p");
  if (alpha0.size() != m) throw std::invalid_argument("ista: alpha0 length != m");

  Vector alpha = alpha0;
  Vector r(p), g(m);
  const double theta = cfg.lambda / cfg.c;
  for (std::size_t t = 0; t < cfg.iters; ++t) {
    for (std::size_t i = 0; i < p; ++i) r[i] = -y[i];
    for (std::size_t j = 0; j < m; ++j) {
      const double aj = alpha[j];
      if (aj == 0.0) continue;
      for (std::size_t i = 0; i < p; ++i) r[i] += aj * D(i, j);
    }
    matvec_t_into(D, r.data(), g.data());
    for (std::size_t j = 0; j < m; ++j) {
      const double u = alpha[j] - g[j] / cfg.c;
      const double a = std::abs(u) - theta;
      alpha[j] = a > 0.0 ? (u > 0.0 ? a : -a) : 0.0;
    }
  }
  return alpha;
}

/// ISTA from the zero code.
inline Vector ista(const Matrix& D, const Vector& y, const IstaConfig& cfg) {
  return ista(D, y, cfg, Vector(D.cols(), 0.0));
}

/// (1/2) ||D a - y||^2 + lambda * ||a||_1
inline double l1_objective(const Matrix& D, const Vector& y, const Vector& alpha,
                           double lambda) {
  if (y.size() != D.rows() || alpha.size() != D.cols())
    throw std::invalid_argument("l1_objective: dimension mismatch");
  Vector r = y;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    const double aj = alpha[j];
    if (aj == 0.0) continue;
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= aj * D(i, j);
  }
  double l1 = 0.0;
  for (double a : alpha) l1 += std::abs(a);
  return 0.5 * norm_sq(r) + lambda * l1;
}

}  // namespace lksvd
