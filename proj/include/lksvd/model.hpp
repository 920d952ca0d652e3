#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lksvd/dictionary.hpp"
#include "lksvd/image.hpp"
#include "lksvd/linalg.hpp"
#include "lksvd/parallel.hpp"
#include "lksvd/pursuit.hpp"
#include "lksvd/rng.hpp"

// The learned K-SVD forward pass: per-patch lambda regression MLP, T-step
// unrolled ISTA with learnable dictionary and step scalar, patch
// reconstruction, learned weighted aggregation, K-stage composition, and the
// versioned model container.

namespace lksvd {

struct ModelConfig {
  std::size_t patch_side = 8;
  std::size_t m = 256;
  std::size_t T = 7;   // unrolled ISTA iterations
  std::size_t K = 3;   // denoising stages
  double sigma = 25.0; // training noise level, for bookkeeping

  std::size_t p() const { return patch_side * patch_side; }

  void validate() const {
    if (patch_side < 1) throw std::invalid_argument("ModelConfig: patch_side < 1");
    if (m < p()) throw std::invalid_argument("ModelConfig: m < p");
    if (T < 1) throw std::invalid_argument("ModelConfig: T < 1");
    if (K < 1) throw std::invalid_argument("ModelConfig: K < 1");
    if (!(sigma >= 0.0)) throw std::invalid_argument("ModelConfig: sigma < 0");
  }
};

/// lambda regression network: p -> 2p -> ReLU -> p -> ReLU -> 1, no biases.
struct StageMlp {
  Matrix W1;  // p x 2p
  Matrix W2;  // 2p x p
  Vector w3;  // p (final 1-wide layer)
};

struct LksvdParams {
  Matrix D;                    // p x m, shared across all stages
  double c = 1.0;              // ISTA step normalizer, > 0
  Vector w;                    // p aggregation weights, > 0, shared
  std::vector<StageMlp> mlps;  // one per stage
};

/// Learnable scalar count: K*(4p^2 + p) MLP weights + p*m dictionary + p
/// aggregation weights + the step scalar.
inline std::size_t param_count(const ModelConfig& cfg) {
  const std::size_t p = cfg.p();
  return cfg.K * (4 * p * p + p) + p * cfg.m + p + 1;
}

/// DCT dictionary, c = ||D||_2^2, unit aggregation weights, Kaiming-uniform
/// MLPs (bound sqrt(6/fan_in), fan_in = input width).
inline LksvdParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t p = cfg.p();
  LksvdParams params;
  params.D = overcomplete_dct(p, cfg.m).atoms;
  params.c = spectral_norm_sq(params.D).value;
  params.w.assign(p, 1.0);
  CounterRng rng(seed);
  const auto kaiming = [&rng](Matrix& W, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < W.rows(); ++i)
      for (std::size_t j = 0; j < W.cols(); ++j) W(i, j) = rng.next_symmetric(bound);
  };
  params.mlps.resize(cfg.K);
  for (auto& mlp : params.mlps) {
    mlp.W1 = Matrix(p, 2 * p);
    mlp.W2 = Matrix(2 * p, p);
    mlp.w3.assign(p, 0.0);
    kaiming(mlp.W1, p);
    kaiming(mlp.W2, 2 * p);
    const double bound = std::sqrt(6.0 / static_cast<double>(p));
    for (double& v : mlp.w3) v = rng.next_symmetric(bound);
  }
  return params;
}

/// lambda = max(w3 . relu(W2^T relu(W1^T y)), 0)
inline double mlp_lambda(const StageMlp& mlp, const Vector& y) {
  Vector z1 = matvec_t(mlp.W1, y);
  for (double& v : z1) v = v > 0.0 ? v : 0.0;
  Vector z2 = matvec_t(mlp.W2, z1);
  for (double& v : z2) v = v > 0.0 ? v : 0.0;
  const double raw = dot(mlp.w3, z2);
  return raw > 0.0 ? raw : 0.0;
}

namespace detail {
inline void check_params_shape(const ModelConfig& cfg, const LksvdParams& params) {
  const std::size_t p = cfg.p();
  if (params.D.rows() != p || params.D.cols() != cfg.m)
    throw std::invalid_argument("params: D shape mismatch");
  if (!(params.c > 0.0)) throw std::invalid_argument("params: c <= 0");
  if (params.w.size() != p) throw std::invalid_argument("params: w length mismatch");
  if (params.mlps.size() != cfg.K)
    throw std::invalid_argument("params: stage count mismatch");
  for (const auto& mlp : params.mlps)
    if (mlp.W1.rows() != p || mlp.W1.cols() != 2 * p || mlp.W2.rows() != 2 * p ||
        mlp.W2.cols() != p || mlp.w3.size() != p)
      throw std::invalid_argument("params: MLP shape mismatch");
}
}  // namespace detail

/// One denoising stage: extract, per-patch lambda, T ISTA steps from the zero
/// code, reconstruct D*alpha, weighted aggregation.
inline GrayImage forward_stage(const ModelConfig& cfg, const LksvdParams& params,
                               std::size_t stage_idx, const GrayImage& in,
                               std::size_t threads = 0) {
  cfg.validate();
  detail::check_params_shape(cfg, params);
  if (stage_idx >= cfg.K) throw std::invalid_argument("forward_stage: stage_idx >= K");
  const std::size_t p = cfg.p();
  const StageMlp& mlp = params.mlps[stage_idx];
  PatchSet ps = extract_patches(in, cfg.patch_side);
  Matrix estimates(ps.count(), p);
  parallel_chunks(ps.count(), threads, [&](std::size_t, std::size_t b, std::size_t e) {
    Vector y(p);
    for (std::size_t k = b; k < e; ++k) {
      const double* row = ps.patches.row(k);
      y.assign(row, row + p);
      const double lambda = mlp_lambda(mlp, y);
      const Vector alpha = ista(params.D, y, {lambda, params.c, cfg.T});
      matvec_into(params.D, alpha.data(), estimates.row(k));
    }
  });
  return aggregate_weighted(ps, estimates, params.w);
}

/// K-stage composition; stage j+1 consumes stage j's output image.
inline GrayImage forward(const ModelConfig& cfg, const LksvdParams& params,
                         const GrayImage& noisy, std::size_t threads = 0) {
  GrayImage x = noisy;
  for (std::size_t j = 0; j < cfg.K; ++j)
    x = forward_stage(cfg, params, j, x, threads);
  return x;
}

// ---------------------------------------------------------------------------
// Model container
//
// Layout (little-endian):
//   "LKSV" | u16 version=1 | f64 x5: patch_side, m, T, K, sigma |
//   f64 payload: D row-major, c, w, per stage W1, W2, W3 row-major.
// A dictionary-only file is the same container with T = K = 0 and a payload
// of just the D block. Trailing bytes are an error.

static_assert(std::endian::native == std::endian::little,
              "model container assumes a little-endian host");

namespace detail {

constexpr std::uint16_t kModelVersion = 1;

inline void append_f64(std::string& out, double v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

inline void append_f64s(std::string& out, const double* v, std::size_t n) {
  out.append(reinterpret_cast<const char*>(v), 8 * n);
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void expect_magic() {
    if (bytes_.size() < 4 || bytes_.compare(0, 4, "LKSV") != 0)
      throw IoError(path_ + ": bad magic (not a model container)");
    pos_ = 4;
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v;
    std::memcpy(&v, bytes_.data() + pos_, 2);
    pos_ += 2;
    return v;
  }

  double f64() {
    need(8);
    double v;
    std::memcpy(&v, bytes_.data() + pos_, 8);
    pos_ += 8;
    return v;
  }

  void f64s(double* dst, std::size_t n) {
    need(8 * n);
    std::memcpy(dst, bytes_.data() + pos_, 8 * n);
    pos_ += 8 * n;
  }

  void expect_end() const {
    if (pos_ != bytes_.size())
      throw IoError(path_ + ": trailing bytes after payload (" +
                    std::to_string(bytes_.size() - pos_) + " extra)");
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw IoError(path_ + ": truncated at byte offset " + std::to_string(pos_));
  }
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open");
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(path + ": write failed");
}

inline std::size_t f64_to_count(double v, const std::string& what,
                                const std::string& path) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e12)
    throw IoError(path + ": invalid " + what + " in header");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline std::string serialize_model(const ModelConfig& cfg,
                                   const LksvdParams& params) {
  cfg.validate();
  detail::check_params_shape(cfg, params);
  std::string out;
  out.reserve(4 + 2 + 8 * (5 + param_count(cfg)));
  out.append("LKSV", 4);
  const std::uint16_t ver = detail::kModelVersion;
  out.append(reinterpret_cast<const char*>(&ver), 2);
  for (double v : {static_cast<double>(cfg.patch_side), static_cast<double>(cfg.m),
                   static_cast<double>(cfg.T), static_cast<double>(cfg.K), cfg.sigma})
    detail::append_f64(out, v);
  detail::append_f64s(out, params.D.data(), params.D.size());
  detail::append_f64(out, params.c);
  detail::append_f64s(out, params.w.data(), params.w.size());
  for (const auto& mlp : params.mlps) {
    detail::append_f64s(out, mlp.W1.data(), mlp.W1.size());
    detail::append_f64s(out, mlp.W2.data(), mlp.W2.size());
    detail::append_f64s(out, mlp.w3.data(), mlp.w3.size());
  }
  return out;
}

inline void save_model(const ModelConfig& cfg, const LksvdParams& params,
                       const std::string& path) {
  detail::write_file(path, serialize_model(cfg, params));
}

inline std::pair<ModelConfig, LksvdParams> load_model(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic();
  const std::uint16_t ver = r.u16();
  if (ver != detail::kModelVersion)
    throw IoError(path + ": unsupported container version " + std::to_string(ver));
  ModelConfig cfg;
  cfg.patch_side = detail::f64_to_count(r.f64(), "patch_side", path);
  cfg.m = detail::f64_to_count(r.f64(), "m", path);
  cfg.T = detail::f64_to_count(r.f64(), "T", path);
  cfg.K = detail::f64_to_count(r.f64(), "K", path);
  cfg.sigma = r.f64();
  if (cfg.T == 0 || cfg.K == 0)
    throw IoError(path + ": dictionary-only container, not a model");
  try {
    cfg.validate();
  } catch (const std::exception& e) {
    throw IoError(path + ": inconsistent header: " + e.what());
  }
  const std::size_t p = cfg.p();
  LksvdParams params;
  params.D = Matrix(p, cfg.m);
  r.f64s(params.D.data(), params.D.size());
  params.c = r.f64();
  params.w.assign(p, 0.0);
  r.f64s(params.w.data(), p);
  params.mlps.resize(cfg.K);
  for (auto& mlp : params.mlps) {
    mlp.W1 = Matrix(p, 2 * p);
    mlp.W2 = Matrix(2 * p, p);
    mlp.w3.assign(p, 0.0);
    r.f64s(mlp.W1.data(), mlp.W1.size());
    r.f64s(mlp.W2.data(), mlp.W2.size());
    r.f64s(mlp.w3.data(), p);
  }
  r.expect_end();
  if (!(params.c > 0.0)) throw IoError(path + ": non-positive step scalar c");
  return {cfg, params};
}

/// Dictionary in the model container (T = K = 0, payload D only).
inline void save_dictionary(const Dictionary& dict, const std::string& path) {
  std::string out;
  out.append("LKSV", 4);
  const std::uint16_t ver = detail::kModelVersion;
  out.append(reinterpret_cast<const char*>(&ver), 2);
  for (double v : {static_cast<double>(dict.patch_side * dict.patch_side),
                   static_cast<double>(dict.atom_count()), 0.0, 0.0, 0.0})
    detail::append_f64(out, v);
  detail::append_f64s(out, dict.atoms.data(), dict.atoms.size());
  detail::write_file(path, out);
}

inline Dictionary load_dictionary(const std::string& path) {
  detail::ByteReader r(detail::read_file(path), path);
  r.expect_magic();
  const std::uint16_t ver = r.u16();
  if (ver != detail::kModelVersion)
    throw IoError(path + ": unsupported container version " + std::to_string(ver));
  const std::size_t p = detail::f64_to_count(r.f64(), "p", path);
  const std::size_t m = detail::f64_to_count(r.f64(), "m", path);
  const std::size_t T = detail::f64_to_count(r.f64(), "T", path);
  const std::size_t K = detail::f64_to_count(r.f64(), "K", path);
  r.f64();  // sigma, unused
  if (T != 0 || K != 0)
    throw IoError(path + ": model container, not a dictionary (use load_model)");
  std::size_t side = 0;
  if (p == 0 || m == 0 || !perfect_square_root(p, side))
    throw IoError(path + ": inconsistent dictionary header");
  Dictionary dict;
  dict.patch_side = side;
  dict.atoms = Matrix(p, m);
  r.f64s(dict.atoms.data(), dict.atoms.size());
  r.expect_end();
  return dict;
}

}  // namespace lksvd
