#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lksvd/linalg.hpp"
#include "lksvd/rng.hpp"

// Image container, overlapping patch extraction / aggregation, Gaussian noise
// synthesis and quality metrics. Pixels live on the [0, 255] scale as doubles
// and are never clipped inside the pipeline; clipping happens only when
// writing 8-bit PGM files.

namespace lksvd {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct GrayImage {
  std::size_t height = 0, width = 0;
  std::vector<double> pix;  // row-major

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, double fill = 0.0)
      : height(h), width(w), pix(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return pix[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return pix[r * width + c]; }
  std::size_t size() const { return pix.size(); }
  bool same_dims(const GrayImage& o) const {
    return height == o.height && width == o.width;
  }
};

/// Fully overlapping stride-1 patches; row k of `patches` is the patch whose
/// top-left corner is the k-th corner in row-major order, pixels in
/// lexicographic (row-major) order.
struct PatchSet {
  std::size_t patch_side = 0;
  std::size_t source_height = 0, source_width = 0;
  Matrix patches;  // count x p

  std::size_t count() const { return patches.rows(); }
  std::size_t corner_rows() const { return source_height - patch_side + 1; }
  std::size_t corner_cols() const { return source_width - patch_side + 1; }
};

struct NoiseSpec {
  double sigma = 0.0;          // pixel units on the [0, 255] scale
  std::uint64_t seed = 0;
};

inline PatchSet extract_patches(const GrayImage& img, std::size_t patch_side) {
  if (patch_side < 1 || patch_side > img.height || patch_side > img.width)
    throw std::invalid_argument("extract_patches: patch_side exceeds image");
  PatchSet ps;
  ps.patch_side = patch_side;
  ps.source_height = img.height;
  ps.source_width = img.width;
  const std::size_t cr = img.height - patch_side + 1;
  const std::size_t cc = img.width - patch_side + 1;
  ps.patches = Matrix(cr * cc, patch_side * patch_side);
  for (std::size_t r = 0; r < cr; ++r) {
    for (std::size_t c = 0; c < cc; ++c) {
      double* dst = ps.patches.row(r * cc + c);
      for (std::size_t i = 0; i < patch_side; ++i) {
        const double* src = &img.pix[(r + i) * img.width + c];
        for (std::size_t j = 0; j < patch_side; ++j) dst[i * patch_side + j] = src[j];
      }
    }
  }
  return ps;
}

namespace detail {
inline void check_estimates(const PatchSet& ps, const Matrix& estimates) {
  if (estimates.rows() != ps.count() ||
      estimates.cols() != ps.patch_side * ps.patch_side)
    throw std::invalid_argument("aggregate: estimates dims do not match patch set");
}
}  // namespace detail

/// Classic overlap-average with a mu-weighted copy of the noisy image:
/// per pixel, (mu*Y + sum of patch estimates covering it) / (mu + coverage).
inline GrayImage aggregate_classic(const PatchSet& ps, const Matrix& estimates,
                                   const GrayImage& noisy, double mu) {
  detail::check_estimates(ps, estimates);
  if (noisy.height != ps.source_height || noisy.width != ps.source_width)
    throw std::invalid_argument("aggregate_classic: image dims mismatch");
  if (mu < 0.0) throw std::invalid_argument("aggregate_classic: mu < 0");
  GrayImage num(ps.source_height, ps.source_width);
  GrayImage den(ps.source_height, ps.source_width);
  const std::size_t side = ps.patch_side, cc = ps.corner_cols();
  for (std::size_t k = 0; k < ps.count(); ++k) {
    const std::size_t r0 = k / cc, c0 = k % cc;
    const double* est = estimates.row(k);
    for (std::size_t i = 0; i < side; ++i) {
      double* nrow = &num.pix[(r0 + i) * num.width + c0];
      double* drow = &den.pix[(r0 + i) * den.width + c0];
      for (std::size_t j = 0; j < side; ++j) {
        nrow[j] += est[i * side + j];
        drow[j] += 1.0;
      }
    }
  }
  GrayImage out(ps.source_height, ps.source_width);
  for (std::size_t q = 0; q < out.size(); ++q)
    out.pix[q] = (mu * noisy.pix[q] + num.pix[q]) / (mu + den.pix[q]);
  return out;
}

/// Learned weighted average: sum R_k^T (w . x_k) / sum R_k^T w, element-wise.
inline GrayImage aggregate_weighted(const PatchSet& ps, const Matrix& estimates,
                                    const Vector& w) {
  detail::check_estimates(ps, estimates);
  if (w.size() != ps.patch_side * ps.patch_side)
    throw std::invalid_argument("aggregate_weighted: w length mismatch");
  for (double wi : w)
    if (!(wi > 0.0))
      throw std::invalid_argument("aggregate_weighted: weights must be positive");
  GrayImage num(ps.source_height, ps.source_width);
  GrayImage den(ps.source_height, ps.source_width);
  const std::size_t side = ps.patch_side, cc = ps.corner_cols();
  for (std::size_t k = 0; k < ps.count(); ++k) {
    const std::size_t r0 = k / cc, c0 = k % cc;
    const double* est = estimates.row(k);
    for (std::size_t i = 0; i < side; ++i) {
      double* nrow = &num.pix[(r0 + i) * num.width + c0];
      double* drow = &den.pix[(r0 + i) * den.width + c0];
      for (std::size_t j = 0; j < side; ++j) {
        const double wij = w[i * side + j];
        nrow[j] += wij * est[i * side + j];
        drow[j] += wij;
      }
    }
  }
  GrayImage out(ps.source_height, ps.source_width);
  for (std::size_t q = 0; q < out.size(); ++q) out.pix[q] = num.pix[q] / den.pix[q];
  return out;
}

/// Y = X + V with V iid Gaussian(0, sigma^2) from the counter-based stream;
/// pixel q consumes stream values 2q and 2q+1 of spec.seed. No clipping.
inline GrayImage add_noise(const GrayImage& img, const NoiseSpec& spec) {
  if (spec.sigma < 0.0) throw std::invalid_argument("add_noise: sigma < 0");
  GrayImage out = img;
  if (spec.sigma == 0.0) return out;
  for (std::size_t q = 0; q < out.size(); ++q)
    out.pix[q] += spec.sigma * gaussian_at(spec.seed, q);
  return out;
}

/// Peak signal-to-noise ratio in dB with peak 255; +infinity for identical
/// images. Computed on the raw (unclipped, unquantized) values.
inline double psnr(const GrayImage& x, const GrayImage& y) {
  if (!x.same_dims(y)) throw std::invalid_argument("psnr: dimension mismatch");
  double se = 0.0;
  for (std::size_t q = 0; q < x.size(); ++q) {
    const double d = x.pix[q] - y.pix[q];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  const double mse = se / static_cast<double>(x.size());
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

namespace detail {
inline constexpr std::size_t kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = (0.01 * 255.0) * (0.01 * 255.0);
inline constexpr double kSsimC2 = (0.03 * 255.0) * (0.03 * 255.0);

inline std::vector<double> ssim_kernel() {
  std::vector<double> k(kSsimWindow);
  const double half = (kSsimWindow - 1) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - half;
    k[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Valid-mode separable Gaussian filter; output (h-10) x (w-10).
inline std::vector<double> ssim_blur(const std::vector<double>& in,
                                     std::size_t h, std::size_t w,
                                     const std::vector<double>& k) {
  const std::size_t ww = w - kSsimWindow + 1;
  std::vector<double> tmp(h * ww);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < ww; ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < kSsimWindow; ++j) s += k[j] * in[r * w + c + j];
      tmp[r * ww + c] = s;
    }
  const std::size_t hh = h - kSsimWindow + 1;
  std::vector<double> out(hh * ww);
  for (std::size_t r = 0; r < hh; ++r)
    for (std::size_t c = 0; c < ww; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < kSsimWindow; ++i) s += k[i] * tmp[(r + i) * ww + c];
      out[r * ww + c] = s;
    }
  return out;
}
}  // namespace detail

/// Mean local SSIM over all fully interior 11x11 windows, Gaussian weighting
/// (std 1.5), K1=0.01, K2=0.03, L=255.
inline double ssim(const GrayImage& x, const GrayImage& y) {
  if (!x.same_dims(y)) throw std::invalid_argument("ssim: dimension mismatch");
  if (x.height < detail::kSsimWindow || x.width < detail::kSsimWindow)
    throw std::invalid_argument("ssim: image smaller than 11x11 window");
  const std::size_t h = x.height, w = x.width, n = x.size();
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t q = 0; q < n; ++q) {
    xx[q] = x.pix[q] * x.pix[q];
    yy[q] = y.pix[q] * y.pix[q];
    xy[q] = x.pix[q] * y.pix[q];
  }
  const auto k = detail::ssim_kernel();
  const auto mx = detail::ssim_blur(x.pix, h, w, k);
  const auto my = detail::ssim_blur(y.pix, h, w, k);
  const auto sxx = detail::ssim_blur(xx, h, w, k);
  const auto syy = detail::ssim_blur(yy, h, w, k);
  const auto sxy = detail::ssim_blur(xy, h, w, k);
  double acc = 0.0;
  for (std::size_t q = 0; q < mx.size(); ++q) {
    const double mux = mx[q], muy = my[q];
    const double vx = sxx[q] - mux * mux;
    const double vy = syy[q] - muy * muy;
    const double cov = sxy[q] - mux * muy;
    const double num = (2.0 * mux * muy + detail::kSsimC1) * (2.0 * cov + detail::kSsimC2);
    const double den = (mux * mux + muy * muy + detail::kSsimC1) * (vx + vy + detail::kSsimC2);
    acc += num / den;
  }
  return acc / static_cast<double>(mx.size());
}

// ---------------------------------------------------------------------------
// PGM (binary P5, 8-bit, maxval 255)

namespace detail {
inline int pgm_getc(const std::string& bytes, std::size_t& pos) {
  if (pos >= bytes.size()) return -1;
  return static_cast<unsigned char>(bytes[pos++]);
}

// Skips whitespace and '#' comments, then parses a decimal integer.
inline long pgm_int(const std::string& bytes, std::size_t& pos,
                    const std::string& path) {
  int ch = pgm_getc(bytes, pos);
  while (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n' || ch == '#') {
    if (ch == '#')
      while (ch != '\n' && ch != -1) ch = pgm_getc(bytes, pos);
    ch = pgm_getc(bytes, pos);
  }
  if (ch < '0' || ch > '9')
    throw IoError(path + ": malformed PGM header at byte offset " +
                  std::to_string(pos == 0 ? 0 : pos - 1));
  long v = 0;
  while (ch >= '0' && ch <= '9') {
    v = v * 10 + (ch - '0');
    ch = pgm_getc(bytes, pos);
  }
  --pos;  // leave the terminating byte for the caller
  return v;
}
}  // namespace detail

inline GrayImage load_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open");
  std::string bytes((std::istreambuf_iterator<char>(f)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() >= 4 && static_cast<unsigned char>(bytes[0]) == 0x89 &&
      bytes.compare(1, 3, "PNG") == 0)
    throw IoError(path + ": unsupported format (PNG signature)");
  if (bytes.size() < 2 || bytes[0] != 'P')
    throw IoError(path + ": unsupported format (not a PGM file)");
  if (bytes[1] != '5')
    throw IoError(path + ": unsupported format (only binary P5 supported)");
  std::size_t pos = 2;
  const long w = detail::pgm_int(bytes, pos, path);
  const long h = detail::pgm_int(bytes, pos, path);
  const long maxval = detail::pgm_int(bytes, pos, path);
  if (w < 1 || h < 1)
    throw IoError(path + ": invalid dimensions in header");
  if (maxval != 255)
    throw IoError(path + ": maxval " + std::to_string(maxval) +
                  " unsupported (must be 255)");
  const int ws = detail::pgm_getc(bytes, pos);
  if (ws != ' ' && ws != '\t' && ws != '\r' && ws != '\n')
    throw IoError(path + ": missing whitespace after maxval at byte offset " +
                  std::to_string(pos - 1));
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < need)
    throw IoError(path + ": truncated payload at byte offset " +
                  std::to_string(bytes.size()) + " (need " +
                  std::to_string(pos + need) + " bytes)");
  GrayImage img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::size_t q = 0; q < need; ++q)
    img.pix[q] = static_cast<double>(static_cast<unsigned char>(bytes[pos + q]));
  return img;
}

/// Writes binary P5; values are clamped to [0, 255] and rounded half-up.
inline void save_pgm(const GrayImage& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open for writing");
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::string payload(img.size(), '\0');
  for (std::size_t q = 0; q < img.size(); ++q) {
    const double r = std::floor(img.pix[q] + 0.5);
    payload[q] = static_cast<char>(
        static_cast<unsigned char>(std::clamp(r, 0.0, 255.0)));
  }
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw IoError(path + ": write failed");
}

}  // namespace lksvd
