#pragma once

#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lksvd/dictionary.hpp"
#include "lksvd/image.hpp"
#include "lksvd/parallel.hpp"
#include "lksvd/pursuit.hpp"

// The two classic pipelines: universal-dictionary denoising and the
// image-adaptive variant that alternates OMP with K-SVD updates on the noisy
// patches before the final coding pass and aggregation.

namespace lksvd {

struct ClassicConfig {
  std::size_t patch_side = 8;
  std::size_t m = 256;
  double sigma = 25.0;
  double error_gain = 1.15;        // OMP stop at error_gain * p * sigma^2
  std::size_t s_max = 0;           // 0 -> p/4 safety rail
  double mu_gain = 30.0;           // mu = mu_gain / sigma
  std::size_t adapt_rounds = 10;   // 0 = universal
  bool remove_dc = false;          // subtract patch means before pursuit
  std::size_t threads = 0;
  // K-SVD training rounds subsample patches above this count (final coding
  // pass always uses all patches).
  std::size_t train_subsample_threshold = 100000;

  std::size_t p() const { return patch_side * patch_side; }
  std::size_t effective_s_max() const {
    return s_max > 0 ? s_max : std::max<std::size_t>(1, p() / 4);
  }
};

struct ClassicStats {
  std::size_t patch_count = 0;
  double mean_sparsity = 0.0;      // atoms per patch in the final coding pass
  std::size_t capped_patches = 0;  // stopped by s_max instead of the error gate
  std::size_t train_stride = 1;    // patch subsampling used for K-SVD rounds
  // Representation error on the training patches, (after-OMP, after-KSVD)
  // per adaptation round.
  std::vector<std::pair<double, double>> round_errors;
};

namespace detail {

struct CodedPatches {
  Matrix estimates;   // count x p reconstructions D alpha (+ DC if removed)
  Matrix codes;       // count x m coefficients
  double total_error = 0.0;  // sum ||D alpha - y||^2 over coded patches
  double sparsity_sum = 0.0;
  std::size_t capped = 0;
};

inline CodedPatches code_patches(const Matrix& patches, const Dictionary& D,
                                 const ClassicConfig& cfg, const Matrix& gram_cache,
                                 bool want_codes) {
  const std::size_t n = patches.rows(), p = D.dim(), m = D.atom_count();
  CodedPatches out;
  out.estimates = Matrix(n, p);
  if (want_codes) out.codes = Matrix(n, m);
  const OmpConfig ocfg{cfg.error_gain, cfg.effective_s_max(), cfg.sigma};

  const std::size_t nthreads =
      std::min(resolve_threads(cfg.threads), std::max<std::size_t>(n, 1));
  std::vector<double> err_partial(nthreads, 0.0), sp_partial(nthreads, 0.0);
  std::vector<std::size_t> cap_partial(nthreads, 0);

  parallel_chunks(n, nthreads, [&](std::size_t tid, std::size_t b, std::size_t e) {
    Vector y(p);
    for (std::size_t k = b; k < e; ++k) {
      const double* row = patches.row(k);
      double dc = 0.0;
      if (cfg.remove_dc) {
        for (std::size_t i = 0; i < p; ++i) dc += row[i];
        dc /= static_cast<double>(p);
      }
      for (std::size_t i = 0; i < p; ++i) y[i] = row[i] - dc;
      const SparseCode code = omp(D, y, ocfg, &gram_cache);
      double* est = out.estimates.row(k);
      matvec_into(D.atoms, code.coeffs.data(), est);
      double err = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        const double d = est[i] - y[i];
        err += d * d;
        est[i] += dc;
      }
      err_partial[tid] += err;
      sp_partial[tid] += static_cast<double>(code.support.size());
      if (code.hit_sparsity_cap) ++cap_partial[tid];
      if (want_codes) {
        double* crow = out.codes.row(k);
        for (std::size_t j = 0; j < m; ++j) crow[j] = code.coeffs[j];
      }
    }
  });
  for (std::size_t t = 0; t < nthreads; ++t) {
    out.total_error += err_partial[t];
    out.sparsity_sum += sp_partial[t];
    out.capped += cap_partial[t];
  }
  return out;
}

}  // namespace detail

/// Fixed-dictionary denoising: OMP every stride-1 patch against D, rebuild
/// x_k = D alpha_k, aggregate with mu = mu_gain / sigma.
inline GrayImage denoise_universal(const GrayImage& noisy, const Dictionary& D,
                                   const ClassicConfig& cfg,
                                   ClassicStats* stats = nullptr) {
  if (!(cfg.sigma > 0.0))
    throw std::invalid_argument("denoise_universal: sigma must be > 0");
  if (D.patch_side != cfg.patch_side)
    throw std::invalid_argument("denoise_universal: dictionary patch_side mismatch");
  const PatchSet ps = extract_patches(noisy, cfg.patch_side);
  const Matrix gram_cache = gram(D.atoms);
  const auto coded = detail::code_patches(ps.patches, D, cfg, gram_cache, false);
  if (stats) {
    stats->patch_count = ps.count();
    stats->mean_sparsity = coded.sparsity_sum / static_cast<double>(ps.count());
    stats->capped_patches = coded.capped;
  }
  return aggregate_classic(ps, coded.estimates, noisy, cfg.mu_gain / cfg.sigma);
}

/// Image-adaptive denoising: DCT init, adapt_rounds alternations of OMP and a
/// K-SVD sweep on the noisy patches, then a final coding pass and aggregation.
/// Returns the image and the adapted dictionary.
inline std::pair<GrayImage, Dictionary> denoise_adaptive(
    const GrayImage& noisy, const ClassicConfig& cfg, ClassicStats* stats = nullptr) {
  if (!(cfg.sigma > 0.0))
    throw std::invalid_argument("denoise_adaptive: sigma must be > 0");
  Dictionary D = overcomplete_dct(cfg.p(), cfg.m);
  if (cfg.adapt_rounds == 0)
    return {denoise_universal(noisy, D, cfg, stats), std::move(D)};

  const PatchSet ps = extract_patches(noisy, cfg.patch_side);

  // Training view: every stride-th patch when the image is large. When DC
  // removal is on, the K-SVD rounds see the centered patches.
  std::size_t stride = 1;
  while (ps.count() / stride > cfg.train_subsample_threshold) stride *= 2;
  Matrix train_patches(ps.count() / stride + (ps.count() % stride ? 1 : 0), cfg.p());
  for (std::size_t k = 0, t = 0; k < ps.count(); k += stride, ++t) {
    double dc = 0.0;
    if (cfg.remove_dc) {
      for (std::size_t i = 0; i < cfg.p(); ++i) dc += ps.patches(k, i);
      dc /= static_cast<double>(cfg.p());
    }
    for (std::size_t i = 0; i < cfg.p(); ++i)
      train_patches(t, i) = ps.patches(k, i) - dc;
  }
  if (stats) stats->train_stride = stride;

  ClassicConfig train_cfg = cfg;
  train_cfg.remove_dc = false;  // training patches are already centered
  for (std::size_t round = 0; round < cfg.adapt_rounds; ++round) {
    const Matrix gram_cache = gram(D.atoms);
    auto coded = detail::code_patches(train_patches, D, train_cfg, gram_cache, true);
    const auto updated = ksvd_update(D, train_patches, coded.codes);
    D = updated.dict;
    if (stats) stats->round_errors.emplace_back(coded.total_error, updated.error_after);
  }

  const Matrix gram_cache = gram(D.atoms);
  const auto coded = detail::code_patches(ps.patches, D, cfg, gram_cache, false);
  if (stats) {
    stats->patch_count = ps.count();
    stats->mean_sparsity = coded.sparsity_sum / static_cast<double>(ps.count());
    stats->capped_patches = coded.capped;
  }
  GrayImage out =
      aggregate_classic(ps, coded.estimates, noisy, cfg.mu_gain / cfg.sigma);
  return {std::move(out), std::move(D)};
}

}  // namespace lksvd
