#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "lksvd/image.hpp"
#include "lksvd/linalg.hpp"
#include "lksvd/model.hpp"
#include "lksvd/parallel.hpp"
#include "lksvd/rng.hpp"

// Reverse-mode differentiation of the full LKSVD forward pass, plain SGD,
// the summed-square loss, and the central-difference gradient oracle.
//
// The backward pass is hand-rolled against the fixed forward graph. Local
// derivative conventions at the non-smooth points:
//   relu'(0) = 0
//   soft threshold: d/du = 1 if |u| > theta else 0;
//                   d/dtheta = -sign(u) if |u| > theta else 0
//   lambda clamp max(raw, 0): gradient passes iff raw > 0
//   w clamp: gradient passes iff w_i > 1e-6

namespace lksvd {

struct Gradients {
  Matrix dD;
  double dc = 0.0;
  Vector dw;
  struct MlpGrads {
    Matrix dW1, dW2;
    Vector dw3;
  };
  std::vector<MlpGrads> mlps;

  static Gradients zeros(const ModelConfig& cfg) {
    const std::size_t p = cfg.p();
    Gradients g;
    g.dD = Matrix(p, cfg.m);
    g.dw.assign(p, 0.0);
    g.mlps.resize(cfg.K);
    for (auto& s : g.mlps) {
      s.dW1 = Matrix(p, 2 * p);
      s.dW2 = Matrix(2 * p, p);
      s.dw3.assign(p, 0.0);
    }
    return g;
  }

  void add(const Gradients& o) {
    for (std::size_t i = 0; i < dD.size(); ++i) dD.data()[i] += o.dD.data()[i];
    dc += o.dc;
    for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += o.dw[i];
    for (std::size_t s = 0; s < mlps.size(); ++s) {
      for (std::size_t i = 0; i < mlps[s].dW1.size(); ++i)
        mlps[s].dW1.data()[i] += o.mlps[s].dW1.data()[i];
      for (std::size_t i = 0; i < mlps[s].dW2.size(); ++i)
        mlps[s].dW2.data()[i] += o.mlps[s].dW2.data()[i];
      for (std::size_t i = 0; i < mlps[s].dw3.size(); ++i)
        mlps[s].dw3[i] += o.mlps[s].dw3[i];
    }
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t steps = 0;
  std::size_t crop_size = 128;
  double sigma = 25.0;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;
  std::size_t threads = 0;
};

/// Sum of squared pixel differences (per image; the minibatch is one image).
inline double loss_mse(const GrayImage& xhat, const GrayImage& x) {
  if (!xhat.same_dims(x)) throw std::invalid_argument("loss_mse: dims mismatch");
  double s = 0.0;
  for (std::size_t q = 0; q < x.size(); ++q) {
    const double d = xhat.pix[q] - x.pix[q];
    s += d * d;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Canonical flat ordering (matches the model container): D, c, w, then per
// stage W1, W2, W3.

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

inline std::vector<ParamBlock> param_blocks(const ModelConfig& cfg) {
  const std::size_t p = cfg.p();
  std::vector<ParamBlock> blocks;
  std::size_t off = 0;
  const auto push = [&](std::string name, std::size_t n) {
    blocks.push_back({std::move(name), off, n});
    off += n;
  };
  push("D", p * cfg.m);
  push("c", 1);
  push("w", p);
  for (std::size_t s = 0; s < cfg.K; ++s) {
    push("stage" + std::to_string(s) + ".W1", 2 * p * p);
    push("stage" + std::to_string(s) + ".W2", 2 * p * p);
    push("stage" + std::to_string(s) + ".W3", p);
  }
  return blocks;
}

inline void params_to_flat(const ModelConfig& cfg, const LksvdParams& params,
                           double* out) {
  std::size_t off = 0;
  const auto put = [&](const double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[off + i] = v[i];
    off += n;
  };
  put(params.D.data(), params.D.size());
  put(&params.c, 1);
  put(params.w.data(), params.w.size());
  for (const auto& mlp : params.mlps) {
    put(mlp.W1.data(), mlp.W1.size());
    put(mlp.W2.data(), mlp.W2.size());
    put(mlp.w3.data(), mlp.w3.size());
  }
  if (off != param_count(cfg))
    throw std::logic_error("params_to_flat: count mismatch");
}

inline LksvdParams flat_to_params(const ModelConfig& cfg, const double* in) {
  const std::size_t p = cfg.p();
  LksvdParams params;
  params.D = Matrix(p, cfg.m);
  params.w.assign(p, 0.0);
  params.mlps.resize(cfg.K);
  std::size_t off = 0;
  const auto get = [&](double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) v[i] = in[off + i];
    off += n;
  };
  get(params.D.data(), params.D.size());
  get(&params.c, 1);
  get(params.w.data(), p);
  for (auto& mlp : params.mlps) {
    mlp.W1 = Matrix(p, 2 * p);
    mlp.W2 = Matrix(2 * p, p);
    mlp.w3.assign(p, 0.0);
    get(mlp.W1.data(), mlp.W1.size());
    get(mlp.W2.data(), mlp.W2.size());
    get(mlp.w3.data(), p);
  }
  return params;
}

inline void grads_to_flat(const ModelConfig& cfg, const Gradients& g, double* out) {
  std::size_t off = 0;
  const auto put = [&](const double* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[off + i] = v[i];
    off += n;
  };
  put(g.dD.data(), g.dD.size());
  put(&g.dc, 1);
  put(g.dw.data(), g.dw.size());
  for (const auto& s : g.mlps) {
    put(s.dW1.data(), s.dW1.size());
    put(s.dW2.data(), s.dW2.size());
    put(s.dw3.data(), s.dw3.size());
  }
  if (off != param_count(cfg)) throw std::logic_error("grads_to_flat: count mismatch");
}

// ---------------------------------------------------------------------------
// Backward

namespace detail {

// Recomputed per-patch forward state needed by the reverse sweep.
struct PatchTrace {
  Vector y;
  Vector z1, a1, z2, a2;      // MLP pre/post activations
  double lambda_raw = 0.0, lambda = 0.0;
  std::vector<Vector> alpha;  // T+1 codes, alpha[0] = 0
  std::vector<Vector> u;      // T pre-threshold vectors
  std::vector<Vector> r;      // T residuals D alpha_t - y
  Vector xhat;                // D alpha_T
};

inline void run_patch_forward(const ModelConfig& cfg, const LksvdParams& params,
                              const StageMlp& mlp, const double* patch,
                              PatchTrace& tr) {
  const std::size_t p = cfg.p(), m = cfg.m, T = cfg.T;
  tr.y.assign(patch, patch + p);

  tr.z1 = matvec_t(mlp.W1, tr.y);
  tr.a1 = tr.z1;
  for (double& v : tr.a1) v = v > 0.0 ? v : 0.0;
  tr.z2 = matvec_t(mlp.W2, tr.a1);
  tr.a2 = tr.z2;
  for (double& v : tr.a2) v = v > 0.0 ? v : 0.0;
  tr.lambda_raw = dot(mlp.w3, tr.a2);
  tr.lambda = tr.lambda_raw > 0.0 ? tr.lambda_raw : 0.0;

  const double theta = tr.lambda / params.c;
  tr.alpha.assign(T + 1, Vector(m, 0.0));
  tr.u.assign(T, Vector(m, 0.0));
  tr.r.assign(T, Vector(p, 0.0));
  for (std::size_t t = 0; t < T; ++t) {
    Vector& r = tr.r[t];
    for (std::size_t i = 0; i < p; ++i) r[i] = -tr.y[i];
    const Vector& at = tr.alpha[t];
    for (std::size_t j = 0; j < m; ++j) {
      const double aj = at[j];
      if (aj == 0.0) continue;
      for (std::size_t i = 0; i < p; ++i) r[i] += aj * params.D(i, j);
    }
    Vector g(m);
    matvec_t_into(params.D, r.data(), g.data());
    Vector& u = tr.u[t];
    Vector& next = tr.alpha[t + 1];
    for (std::size_t j = 0; j < m; ++j) {
      u[j] = at[j] - g[j] / params.c;
      const double a = std::abs(u[j]) - theta;
      next[j] = a > 0.0 ? (u[j] > 0.0 ? a : -a) : 0.0;
    }
  }
  tr.xhat.assign(p, 0.0);
  matvec_into(params.D, tr.alpha[T].data(), tr.xhat.data());
}

}  // namespace detail

struct BackwardResult {
  double loss = 0.0;
  Gradients grads;
};

/// Exact reverse-mode gradients of loss_mse(forward(params, Y), X) with
/// respect to every learnable scalar. Per-patch contributions are reduced in
/// fixed chunk order, so results are reproducible for a given thread count.
inline BackwardResult backward(const ModelConfig& cfg, const LksvdParams& params,
                               const GrayImage& Y, const GrayImage& X,
                               std::size_t threads = 0) {
  cfg.validate();
  detail::check_params_shape(cfg, params);
  if (!Y.same_dims(X)) throw std::invalid_argument("backward: Y/X dims mismatch");
  const std::size_t p = cfg.p(), m = cfg.m, T = cfg.T, side = cfg.patch_side;

  // Forward, keeping every stage input.
  std::vector<GrayImage> ins(cfg.K + 1);
  ins[0] = Y;
  for (std::size_t j = 0; j < cfg.K; ++j)
    ins[j + 1] = forward_stage(cfg, params, j, ins[j], threads);

  BackwardResult out;
  out.loss = loss_mse(ins[cfg.K], X);
  out.grads = Gradients::zeros(cfg);

  // Aggregation denominator B = sum_k R_k^T w; same for every stage.
  GrayImage den(Y.height, Y.width);
  {
    const std::size_t cr = Y.height - side + 1, cc = Y.width - side + 1;
    for (std::size_t r0 = 0; r0 < cr; ++r0)
      for (std::size_t c0 = 0; c0 < cc; ++c0)
        for (std::size_t i = 0; i < side; ++i)
          for (std::size_t j = 0; j < side; ++j)
            den.at(r0 + i, c0 + j) += params.w[i * side + j];
  }

  GrayImage g_img(Y.height, Y.width);
  for (std::size_t q = 0; q < g_img.size(); ++q)
    g_img.pix[q] = 2.0 * (ins[cfg.K].pix[q] - X.pix[q]);

  for (std::size_t stage = cfg.K; stage-- > 0;) {
    const GrayImage& in = ins[stage];
    const GrayImage& outimg = ins[stage + 1];
    const StageMlp& mlp = params.mlps[stage];
    const bool need_g_in = stage > 0;

    GrayImage gA(Y.height, Y.width), gB(Y.height, Y.width);
    for (std::size_t q = 0; q < gA.size(); ++q) {
      gA.pix[q] = g_img.pix[q] / den.pix[q];
      gB.pix[q] = -g_img.pix[q] * outimg.pix[q] / den.pix[q];
    }

    const PatchSet ps = extract_patches(in, side);
    const std::size_t cc = ps.corner_cols();
    const std::size_t nthreads =
        std::min(resolve_threads(threads), std::max<std::size_t>(ps.count(), 1));

    std::vector<Gradients> partial(nthreads, Gradients::zeros(cfg));
    std::vector<GrayImage> g_in_partial(
        nthreads, GrayImage(need_g_in ? Y.height : 1, need_g_in ? Y.width : 1));

    parallel_chunks(ps.count(), nthreads, [&](std::size_t tid, std::size_t b,
                                              std::size_t e) {
      Gradients& acc = partial[tid];
      GrayImage& g_in = g_in_partial[tid];
      Gradients::MlpGrads& mg = acc.mlps[stage];
      detail::PatchTrace tr;
      Vector gxhat(p), galpha(m), gu(m), dgu(p), gy(p), tmp_m(m), ga1(2 * p);
      std::vector<std::size_t> nz;
      nz.reserve(m);

      for (std::size_t k = b; k < e; ++k) {
        detail::run_patch_forward(cfg, params, mlp, ps.patches.row(k), tr);
        const std::size_t r0 = k / cc, c0 = k % cc;
        const double theta = tr.lambda / params.c;

        // Aggregation: gxhat_i = w_i * gA[q]; dw_i += xhat_i*gA[q] + gB[q].
        for (std::size_t i = 0; i < side; ++i)
          for (std::size_t j = 0; j < side; ++j) {
            const std::size_t pi = i * side + j;
            const std::size_t q = (r0 + i) * Y.width + (c0 + j);
            gxhat[pi] = params.w[pi] * gA.pix[q];
            acc.dw[pi] += tr.xhat[pi] * gA.pix[q] + gB.pix[q];
          }

        // Reconstruction xhat = D alpha_T.
        matvec_t_into(params.D, gxhat.data(), galpha.data());
        add_outer(acc.dD, gxhat.data(), tr.alpha[T].data(), 1.0);
        for (double& v : gy) v = 0.0;

        double gtheta = 0.0;
        for (std::size_t t = T; t-- > 0;) {
          const Vector& u = tr.u[t];
          const Vector& at = tr.alpha[t];
          const Vector& rt = tr.r[t];
          nz.clear();
          for (std::size_t j = 0; j < m; ++j) {
            if (std::abs(u[j]) > theta) {
              gu[j] = galpha[j];
              if (gu[j] != 0.0) nz.push_back(j);
              gtheta -= (u[j] > 0.0 ? 1.0 : -1.0) * galpha[j];
            } else {
              gu[j] = 0.0;
            }
          }
          // dc: du/dc = (1/c^2) D^T r_t, and D^T r_t = c (alpha_t - u_t).
          double s = 0.0;
          for (std::size_t j : nz) s += gu[j] * (at[j] - u[j]);
          acc.dc += s / params.c;

          // dD += -(1/c) (r_t gu^T + (D gu) alpha_t^T), exploiting gu sparsity.
          if (!nz.empty()) {
            const double inv_c = 1.0 / params.c;
            for (std::size_t i = 0; i < p; ++i) {
              const double ri = rt[i];
              double di = 0.0;
              double* drow = acc.dD.row(i);
              const double* Drow = params.D.row(i);
              for (std::size_t j : nz) {
                drow[j] -= inv_c * ri * gu[j];
                di += Drow[j] * gu[j];
              }
              dgu[i] = di;  // (D gu)_i
            }
            for (std::size_t i = 0; i < p; ++i) {
              const double s2 = inv_c * dgu[i];
              if (s2 == 0.0) continue;
              double* drow = acc.dD.row(i);
              for (std::size_t j = 0; j < m; ++j) drow[j] -= s2 * at[j];
              gy[i] += s2;  // du/dy = (1/c) D^T => gy += (1/c) D gu
            }
            // galpha_t = gu - (1/c) D^T (D gu)
            matvec_t_into(params.D, dgu.data(), tmp_m.data());
            for (std::size_t j = 0; j < m; ++j)
              galpha[j] = gu[j] - inv_c * tmp_m[j];
          } else {
            for (std::size_t j = 0; j < m; ++j) galpha[j] = 0.0;
            for (std::size_t i = 0; i < p; ++i) dgu[i] = 0.0;
          }
        }

        // theta = lambda / c.
        const double glambda = gtheta / params.c;
        acc.dc -= gtheta * tr.lambda / (params.c * params.c);
        const double graw = tr.lambda_raw > 0.0 ? glambda : 0.0;

        if (graw != 0.0) {
          // lambda_raw = w3 . a2
          for (std::size_t i = 0; i < p; ++i) mg.dw3[i] += tr.a2[i] * graw;
          // gz2 = (w3 * graw) masked by z2 > 0
          Vector gz2(p);
          for (std::size_t i = 0; i < p; ++i)
            gz2[i] = tr.z2[i] > 0.0 ? mlp.w3[i] * graw : 0.0;
          // z2 = W2^T a1: dW2 += a1 gz2^T, ga1 = W2 gz2
          add_outer(mg.dW2, tr.a1.data(), gz2.data(), 1.0);
          matvec_into(mlp.W2, gz2.data(), ga1.data());
          // gz1 masked by z1 > 0
          for (std::size_t i = 0; i < 2 * p; ++i)
            if (tr.z1[i] <= 0.0) ga1[i] = 0.0;
          // z1 = W1^T y: dW1 += y gz1^T, gy += W1 gz1
          add_outer(mg.dW1, tr.y.data(), ga1.data(), 1.0);
          if (need_g_in) {
            Vector gy_mlp(p);
            matvec_into(mlp.W1, ga1.data(), gy_mlp.data());
            for (std::size_t i = 0; i < p; ++i) gy[i] += gy_mlp[i];
          }
        }

        if (need_g_in) {
          for (std::size_t i = 0; i < side; ++i)
            for (std::size_t j = 0; j < side; ++j)
              g_in.at(r0 + i, c0 + j) += gy[i * side + j];
        }
      }
    });

    for (const auto& part : partial) out.grads.add(part);
    if (need_g_in) {
      GrayImage g_next(Y.height, Y.width);
      for (const auto& gi : g_in_partial)
        for (std::size_t q = 0; q < g_next.size(); ++q) g_next.pix[q] += gi.pix[q];
      g_img = g_next;
    }
  }

  // w clamp: gradient passes only while strictly above the floor.
  for (std::size_t i = 0; i < p; ++i)
    if (!(params.w[i] > 1e-6)) out.grads.dw[i] = 0.0;

  // NaN guard.
  const auto finite = [](double v) { return std::isfinite(v); };
  bool ok = finite(out.loss) && finite(out.grads.dc);
  for (std::size_t i = 0; ok && i < out.grads.dD.size(); ++i)
    ok = finite(out.grads.dD.data()[i]);
  for (std::size_t i = 0; ok && i < out.grads.dw.size(); ++i)
    ok = finite(out.grads.dw[i]);
  for (const auto& s : out.grads.mlps) {
    for (std::size_t i = 0; ok && i < s.dW1.size(); ++i) ok = finite(s.dW1.data()[i]);
    for (std::size_t i = 0; ok && i < s.dW2.size(); ++i) ok = finite(s.dW2.data()[i]);
    for (std::size_t i = 0; ok && i < s.dw3.size(); ++i) ok = finite(s.dw3[i]);
  }
  if (!ok)
    throw std::runtime_error(
        "backward: non-finite gradient (loss=" + std::to_string(out.loss) + ")");
  return out;
}

/// theta <- theta - lr * grad for every scalar, then clamp c and w at 1e-6.
inline void sgd_step(LksvdParams& params, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) throw std::invalid_argument("sgd_step: lr <= 0");
  for (std::size_t i = 0; i < params.D.size(); ++i)
    params.D.data()[i] -= lr * grads.dD.data()[i];
  params.c -= lr * grads.dc;
  for (std::size_t i = 0; i < params.w.size(); ++i)
    params.w[i] -= lr * grads.dw[i];
  for (std::size_t s = 0; s < params.mlps.size(); ++s) {
    auto& mlp = params.mlps[s];
    const auto& g = grads.mlps[s];
    for (std::size_t i = 0; i < mlp.W1.size(); ++i)
      mlp.W1.data()[i] -= lr * g.dW1.data()[i];
    for (std::size_t i = 0; i < mlp.W2.size(); ++i)
      mlp.W2.data()[i] -= lr * g.dW2.data()[i];
    for (std::size_t i = 0; i < mlp.w3.size(); ++i) mlp.w3[i] -= lr * g.dw3[i];
  }
  if (params.c < 1e-6) params.c = 1e-6;
  for (double& wi : params.w)
    if (wi < 1e-6) wi = 1e-6;
}

// ---------------------------------------------------------------------------
// Training loop

struct HistoryEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  LksvdParams params;
  std::vector<HistoryEntry> history;
};

using CheckpointFn = std::function<void(std::size_t step, const LksvdParams&,
                                        const std::vector<HistoryEntry>&)>;

inline std::uint64_t bounded_u64(std::uint64_t x, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(x) * n) >> 64);
}

/// One SGD stream, minibatch of one crop. Every per-step draw (image index,
/// crop offsets, noise seed) is a pure function of (seed, step), so a resumed
/// run continues an uninterrupted run's trajectory exactly.
inline TrainResult train(const std::vector<GrayImage>& images,
                         const ModelConfig& cfg, const TrainConfig& tcfg,
                         const LksvdParams* resume_params = nullptr,
                         std::size_t start_step = 0,
                         const CheckpointFn& checkpoint = nullptr,
                         const std::vector<GrayImage>* val_images = nullptr) {
  cfg.validate();
  if (!(tcfg.learning_rate > 0.0)) throw std::invalid_argument("train: lr <= 0");
  if (tcfg.crop_size < cfg.patch_side)
    throw std::invalid_argument("train: crop_size < patch_side");
  if (images.empty()) throw std::invalid_argument("train: empty dataset");
  for (const auto& img : images)
    if (img.height < tcfg.crop_size || img.width < tcfg.crop_size)
      throw std::invalid_argument("train: image smaller than crop_size");

  TrainResult res;
  res.params = resume_params ? *resume_params
                             : init_params(cfg, derive_seed(tcfg.seed, 0, 0));

  // Fixed noisy validation pairs, outside the training stream.
  std::vector<GrayImage> val_noisy;
  if (val_images)
    for (std::size_t i = 0; i < val_images->size(); ++i)
      val_noisy.push_back(add_noise(
          (*val_images)[i], {tcfg.sigma, derive_seed(tcfg.seed, 0, 100 + i)}));

  for (std::size_t step = start_step; step < tcfg.steps; ++step) {
    const std::uint64_t a = step + 1;
    const std::size_t idx =
        bounded_u64(derive_seed(tcfg.seed, a, 1), images.size());
    const GrayImage& src = images[idx];
    const std::size_t r0 = bounded_u64(derive_seed(tcfg.seed, a, 2),
                                       src.height - tcfg.crop_size + 1);
    const std::size_t c0 = bounded_u64(derive_seed(tcfg.seed, a, 3),
                                       src.width - tcfg.crop_size + 1);
    GrayImage X(tcfg.crop_size, tcfg.crop_size);
    for (std::size_t r = 0; r < tcfg.crop_size; ++r)
      for (std::size_t c = 0; c < tcfg.crop_size; ++c)
        X.at(r, c) = src.at(r0 + r, c0 + c);
    const GrayImage Y =
        add_noise(X, {tcfg.sigma, derive_seed(tcfg.seed, a, 4)});

    BackwardResult bw = backward(cfg, res.params, Y, X, tcfg.threads);
    sgd_step(res.params, bw.grads, tcfg.learning_rate);

    HistoryEntry h;
    h.step = step;
    h.loss = bw.loss;
    if (!val_noisy.empty() && tcfg.log_every > 0 &&
        (step + 1) % tcfg.log_every == 0) {
      double acc = 0.0;
      for (std::size_t i = 0; i < val_noisy.size(); ++i)
        acc += psnr(forward(cfg, res.params, val_noisy[i], tcfg.threads),
                    (*val_images)[i]);
      h.val_psnr = acc / static_cast<double>(val_noisy.size());
    }
    res.history.push_back(h);

    if (checkpoint && tcfg.checkpoint_every > 0 &&
        (step + 1) % tcfg.checkpoint_every == 0)
      checkpoint(step, res.params, res.history);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Finite-difference oracle

/// Central differences over the selected flat indices (all when empty).
/// Returns the max relative error against backward's gradient with
/// |analytic| + |numeric| + 1e-12 in the denominator.
inline double finite_diff_check(const ModelConfig& cfg, const LksvdParams& params,
                                const GrayImage& Y, const GrayImage& X,
                                double h = 1e-5,
                                const std::vector<std::size_t>& indices = {},
                                std::vector<double>* per_index_rel = nullptr) {
  const std::size_t n = param_count(cfg);
  std::vector<double> flat(n), analytic(n);
  params_to_flat(cfg, params, flat.data());
  {
    const BackwardResult bw = backward(cfg, params, Y, X);
    grads_to_flat(cfg, bw.grads, analytic.data());
  }
  const auto loss_at = [&](const std::vector<double>& f) {
    const LksvdParams p2 = flat_to_params(cfg, f.data());
    return loss_mse(forward(cfg, p2, Y), X);
  };
  std::vector<std::size_t> all;
  const std::vector<std::size_t>* idxs = &indices;
  if (indices.empty()) {
    all.resize(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    idxs = &all;
  }
  if (per_index_rel) per_index_rel->assign(idxs->size(), 0.0);
  double max_rel = 0.0;
  std::vector<double> f = flat;
  for (std::size_t t = 0; t < idxs->size(); ++t) {
    const std::size_t i = (*idxs)[t];
    const double saved = f[i];
    f[i] = saved + h;
    const double lp = loss_at(f);
    f[i] = saved - h;
    const double lm = loss_at(f);
    f[i] = saved;
    const double numeric = (lp - lm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - numeric) /
                       (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    if (per_index_rel) (*per_index_rel)[t] = rel;
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

/// Smallest distance of any pre-threshold value from its kink across a
/// forward pass (soft-threshold margins, relu pre-activations, raw lambda).
/// Gradient checks resample inputs until this is comfortably positive.
inline double kink_margin(const ModelConfig& cfg, const LksvdParams& params,
                          const GrayImage& Y) {
  cfg.validate();
  detail::check_params_shape(cfg, params);
  double margin = std::numeric_limits<double>::infinity();
  const auto consider = [&margin](double v) {
    const double a = std::abs(v);
    if (a != 0.0 && a < margin) margin = a;  // exact zeros are exactly dead
  };
  GrayImage x = Y;
  for (std::size_t stage = 0; stage < cfg.K; ++stage) {
    const PatchSet ps = extract_patches(x, cfg.patch_side);
    detail::PatchTrace tr;
    for (std::size_t k = 0; k < ps.count(); ++k) {
      detail::run_patch_forward(cfg, params, params.mlps[stage],
                                ps.patches.row(k), tr);
      for (double v : tr.z1) consider(v);
      for (double v : tr.z2) consider(v);
      consider(tr.lambda_raw);
      const double theta = tr.lambda / params.c;
      for (std::size_t t = 0; t < cfg.T; ++t)
        for (double uj : tr.u[t]) consider(std::abs(uj) - theta);
    }
    if (stage + 1 < cfg.K) x = forward_stage(cfg, params, stage, x);
  }
  return margin;
}

}  // namespace lksvd
