#pragma once

// Independent test oracles. Everything here is deliberately written as
// straight-line reference code, sharing no kernels with the library paths it
// checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "lksvd/image.hpp"
#include "lksvd/linalg.hpp"
#include "lksvd/rng.hpp"

namespace oracles {

/// Plain triple-loop matrix-vector product.
inline lksvd::Vector naive_matvec(const lksvd::Matrix& A, const lksvd::Vector& v) {
  lksvd::Vector out(A.rows(), 0.0);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < A.cols(); ++j) out[i] += A(i, j) * v[j];
  return out;
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
inline std::vector<double> jacobi_eigenvalues(const lksvd::Matrix& S) {
  const std::size_t n = S.rows();
  lksvd::Matrix a = S;
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off = std::max(off, std::abs(a(i, j)));
    if (off < 1e-14) break;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        if (std::abs(a(i, j)) < 1e-300) continue;
        const double theta = (a(j, j) - a(i, i)) / (2.0 * a(i, j));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double aki = a(k, i), akj = a(k, j);
          a(k, i) = c * aki - s * akj;
          a(k, j) = s * aki + c * akj;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = a(i, k), ajk = a(j, k);
          a(i, k) = c * aik - s * ajk;
          a(j, k) = s * aik + c * ajk;
        }
      }
  }
  std::vector<double> evs(n);
  for (std::size_t i = 0; i < n; ++i) evs[i] = a(i, i);
  std::sort(evs.begin(), evs.end());
  return evs;
}

inline double largest_eigenvalue_sym(const lksvd::Matrix& S) {
  return jacobi_eigenvalues(S).back();
}

/// A^T A assembled entry by entry.
inline lksvd::Matrix naive_gram(const lksvd::Matrix& A) {
  lksvd::Matrix g(A.cols(), A.cols());
  for (std::size_t a = 0; a < A.cols(); ++a)
    for (std::size_t b = 0; b < A.cols(); ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < A.rows(); ++i) s += A(i, a) * A(i, b);
      g(a, b) = s;
    }
  return g;
}

/// Least-squares residual ||y - D_S coef||^2 on a fixed support via normal
/// equations solved by Gaussian elimination with partial pivoting.
inline double subset_ls_residual(const lksvd::Matrix& D, const lksvd::Vector& y,
                                 const std::vector<std::size_t>& support) {
  const std::size_t s = support.size(), p = D.rows();
  if (s == 0) {
    double r = 0.0;
    for (double v : y) r += v * v;
    return r;
  }
  std::vector<std::vector<double>> a(s, std::vector<double>(s + 1, 0.0));
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < p; ++k)
        a[i][j] += D(k, support[i]) * D(k, support[j]);
    for (std::size_t k = 0; k < p; ++k) a[i][s] += D(k, support[i]) * y[k];
  }
  for (std::size_t col = 0; col < s; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < s; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    if (std::abs(a[col][col]) < 1e-12) return 1e300;  // dependent support
    for (std::size_t r = 0; r < s; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t cc = col; cc <= s; ++cc) a[r][cc] -= f * a[col][cc];
    }
  }
  std::vector<double> coef(s);
  for (std::size_t i = 0; i < s; ++i) coef[i] = a[i][s] / a[i][i];
  double res = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    double v = y[k];
    for (std::size_t i = 0; i < s; ++i) v -= coef[i] * D(k, support[i]);
    res += v * v;
  }
  return res;
}

/// Best residual over all supports of exactly the given size.
inline double best_subset_residual(const lksvd::Matrix& D, const lksvd::Vector& y,
                                   std::size_t size) {
  const std::size_t m = D.cols();
  double best = 1e300;
  std::vector<std::size_t> support(size);
  const std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos,
                                                                std::size_t from) {
    if (pos == size) {
      best = std::min(best, subset_ls_residual(D, y, support));
      return;
    }
    for (std::size_t j = from; j < m; ++j) {
      support[pos] = j;
      rec(pos + 1, j + 1);
    }
  };
  rec(0, 0);
  return best;
}

/// Direct-definition SSIM: per-window weighted statistics with an inline
/// Gaussian kernel, no shared filtering code with the library.
inline double direct_ssim(const lksvd::GrayImage& x, const lksvd::GrayImage& y) {
  const int win = 11;
  const double sig = 1.5;
  double kernel[11][11];
  double ksum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - 5.0, dj = j - 5.0;
      kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sig * sig));
      ksum += kernel[i][j];
    }
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) kernel[i][j] /= ksum;

  const double c1 = (0.01 * 255) * (0.01 * 255);
  const double c2 = (0.03 * 255) * (0.03 * 255);
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + win <= x.height; ++r)
    for (std::size_t c = 0; c + win <= x.width; ++c) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double vx = x.at(r + i, c + j), vy = y.at(r + i, c + j);
          const double k = kernel[i][j];
          mx += k * vx;
          my += k * vy;
          sxx += k * vx * vx;
          syy += k * vy * vy;
          sxy += k * vx * vy;
        }
      const double varx = sxx - mx * mx, vary = syy - my * my, cov = sxy - mx * my;
      acc += ((2 * mx * my + c1) * (2 * cov + c2)) /
             ((mx * mx + my * my + c1) * (varx + vary + c2));
      ++count;
    }
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Random fixtures

inline lksvd::Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed,
                                   double amp = 1.0) {
  lksvd::CounterRng rng(seed);
  lksvd::Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = amp * rng.next_gaussian();
  return m;
}

inline lksvd::Vector random_vector(std::size_t n, std::uint64_t seed,
                                   double amp = 1.0) {
  lksvd::CounterRng rng(seed);
  lksvd::Vector v(n);
  for (double& x : v) x = amp * rng.next_gaussian();
  return v;
}

/// Random dictionary with unit-norm columns.
inline lksvd::Matrix random_unit_columns(std::size_t p, std::size_t m,
                                         std::uint64_t seed) {
  lksvd::Matrix d = random_matrix(p, m, seed);
  for (std::size_t j = 0; j < m; ++j) {
    double n = 0.0;
    for (std::size_t i = 0; i < p; ++i) n += d(i, j) * d(i, j);
    n = std::sqrt(n);
    for (std::size_t i = 0; i < p; ++i) d(i, j) /= n;
  }
  return d;
}

/// Exact-recovery condition value for a planted pair {j0, j1}:
/// max_{j not in S} ||pinv(D_S) d_j||_1. Below 1, greedy pursuit provably
/// recovers the planted support from any noiseless combination.
inline double erc_gamma(const lksvd::Matrix& D, std::size_t j0, std::size_t j1) {
  double g00 = 0, g01 = 0, g11 = 0;
  for (std::size_t i = 0; i < D.rows(); ++i) {
    g00 += D(i, j0) * D(i, j0);
    g01 += D(i, j0) * D(i, j1);
    g11 += D(i, j1) * D(i, j1);
  }
  const double det = g00 * g11 - g01 * g01;
  double worst = 0;
  for (std::size_t j = 0; j < D.cols(); ++j) {
    if (j == j0 || j == j1) continue;
    double b0 = 0, b1 = 0;
    for (std::size_t i = 0; i < D.rows(); ++i) {
      b0 += D(i, j0) * D(i, j);
      b1 += D(i, j1) * D(i, j);
    }
    const double x0 = (g11 * b0 - g01 * b1) / det;
    const double x1 = (-g01 * b0 + g00 * b1) / det;
    worst = std::max(worst, std::abs(x0) + std::abs(x1));
  }
  return worst;
}

/// max_{i != j} |d_i . d_j| for unit columns.
inline double mutual_coherence(const lksvd::Matrix& D) {
  double mu = 0.0;
  for (std::size_t a = 0; a < D.cols(); ++a)
    for (std::size_t b = a + 1; b < D.cols(); ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < D.rows(); ++i) s += D(i, a) * D(i, b);
      mu = std::max(mu, std::abs(s));
    }
  return mu;
}

inline lksvd::GrayImage random_image(std::size_t h, std::size_t w,
                                     std::uint64_t seed, double lo = 0.0,
                                     double hi = 255.0) {
  lksvd::CounterRng rng(seed);
  lksvd::GrayImage img(h, w);
  for (double& v : img.pix) v = lo + (hi - lo) * rng.next_unit();
  return img;
}

/// Piecewise-smooth synthetic test image: soft gradient background, two
/// rectangles, a disc and a sinusoidal texture band.
inline lksvd::GrayImage synthetic_scene(std::size_t h, std::size_t w) {
  lksvd::GrayImage img(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double v = 40.0 + 120.0 * static_cast<double>(r + c) /
                            static_cast<double>(h + w);
      if (r > h / 5 && r < h / 2 && c > w / 6 && c < w / 2) v = 200.0;
      if (r > h / 2 && c > 2 * w / 3) v = 70.0;
      const double dr = static_cast<double>(r) - 0.7 * h;
      const double dc = static_cast<double>(c) - 0.3 * w;
      if (dr * dr + dc * dc < 0.02 * h * w) v = 150.0;
      if (r > 4 * h / 5)
        v += 25.0 * std::sin(0.35 * static_cast<double>(c)) *
             std::sin(0.21 * static_cast<double>(r));
      img.at(r, c) = std::clamp(v, 0.0, 255.0);
    }
  return img;
}

}  // namespace oracles
