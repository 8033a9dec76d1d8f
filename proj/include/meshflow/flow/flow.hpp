#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "meshflow/nn/ops.hpp"
#include "meshflow/rng.hpp"

namespace meshflow::flow {

using nn::Matrix;

/// Straight-line path between a noise draw (t = 0) and data (t = 1).
/// The endpoints are returned exactly.
template <typename T>
Matrix<T> interpolant(const Matrix<T>& x0, const Matrix<T>& x1, double t) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw ValidationError("interpolant: shape mismatch");
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("interpolant: t = " + std::to_string(t) + " outside [0, 1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  const T tt = static_cast<T>(t);
  return tt * x1 + (T(1) - tt) * x0;
}

template <typename T>
Matrix<T> velocity_target(const Matrix<T>& x0, const Matrix<T>& x1) {
  if (x0.rows() != x1.rows() || x0.cols() != x1.cols()) throw ValidationError("velocity_target: shape mismatch");
  return x1 - x0;
}

struct TimeSampler {
  double m = 0.5;
  double s = 1.0;

  void validate() const {
    if (!(s > 0.0) || !std::isfinite(m) || !std::isfinite(s))
      throw ValidationError("time sampler: scale must be positive and parameters finite");
  }
};

/// Density of sigmoid(m + s * eps) with eps ~ N(0, 1).
inline double logit_normal_density(double t, double m, double s) {
  if (!(t > 0.0 && t < 1.0)) throw ValidationError("logit_normal_density: t must lie in (0, 1)");
  if (!(s > 0.0)) throw ValidationError("logit_normal_density: s must be positive");
  const double z = std::log(t / (1.0 - t)) - m;
  return std::exp(-z * z / (2.0 * s * s)) / (s * std::sqrt(2.0 * std::numbers::pi) * t * (1.0 - t));
}

inline double sample_time(const TimeSampler& sampler, Rng& rng) {
  const double x = sampler.m + sampler.s * standard_normal(rng);
  return 1.0 / (1.0 + std::exp(-x));
}

inline double sample_time(const TimeSampler& sampler, std::uint64_t seed) {
  auto rng = make_rng(seed, "time");
  return sample_time(sampler, rng);
}

/// Velocity regression loss over valid token rows.
template <typename T>
nn::Var<T> flow_loss(const nn::Var<T>& v_pred, const Matrix<T>& v_target, std::span<const unsigned char> valid) {
  return nn::masked_mse(v_pred, v_target, valid);
}

/// Eager variant used outside training.
template <typename T>
T flow_loss_value(const Matrix<T>& v_pred, const Matrix<T>& v_target, std::span<const unsigned char> valid) {
  nn::Tape<T> tape(false);
  return flow_loss(tape.constant(v_pred), v_target, valid).scalar();
}

/// v_uncond + w (v_cond - v_uncond)
template <typename T>
Matrix<T> cfg_single(const Matrix<T>& v_uncond, const Matrix<T>& v_cond, double w) {
  if (v_uncond.rows() != v_cond.rows() || v_uncond.cols() != v_cond.cols())
    throw ValidationError("cfg_single: shape mismatch");
  return v_uncond + static_cast<T>(w) * (v_cond - v_uncond);
}

/// v_nn + w1 (v_fn - v_nn) + w2 (v_fi - v_fn)
template <typename T>
Matrix<T> cfg_dual(const Matrix<T>& v_null_null, const Matrix<T>& v_f_null, const Matrix<T>& v_f_i, double w1,
                   double w2) {
  if (v_null_null.rows() != v_f_null.rows() || v_null_null.cols() != v_f_null.cols() ||
      v_f_i.rows() != v_f_null.rows() || v_f_i.cols() != v_f_null.cols())
    throw ValidationError("cfg_dual: shape mismatch");
  return v_null_null + static_cast<T>(w1) * (v_f_null - v_null_null) + static_cast<T>(w2) * (v_f_i - v_f_null);
}

/// Which conditions a velocity evaluation sees.
enum class Branch { Unconditional, FaceOnly, Full };

enum class GuidanceMode { None, Single, Dual };

struct CFGWeights {
  GuidanceMode mode = GuidanceMode::Single;
  double w = 8.0;
  double w1 = 1.0;
  double w2 = 5.0;

  /// Velocity evaluations per Euler step.
  int evaluations_per_step() const {
    switch (mode) {
      case GuidanceMode::None: return 1;
      case GuidanceMode::Single: return 2;
      case GuidanceMode::Dual: return 3;
    }
    return 1;
  }
};

inline const char* to_string(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::None: return "none";
    case GuidanceMode::Single: return "single";
    case GuidanceMode::Dual: return "dual";
  }
  return "?";
}

inline GuidanceMode parse_guidance_mode(const std::string& s) {
  if (s == "none") return GuidanceMode::None;
  if (s == "single") return GuidanceMode::Single;
  if (s == "dual") return GuidanceMode::Dual;
  throw ValidationError("unknown guidance mode '" + s + "' (expected none, single or dual)");
}

template <typename T>
using VelocityFn = std::function<Matrix<T>(const Matrix<T>& z, double t, Branch branch)>;

struct TraceRecord {
  int step = 0;
  double t = 0.0;
  double mean_abs_velocity = 0.0;
};

template <typename T>
struct SampleResult {
  Matrix<T> z;
  std::size_t evaluations = 0;
  std::vector<TraceRecord> trace;
};

/// Guided velocity at (z, t) following `cfg`.
template <typename T>
Matrix<T> guided_velocity(const VelocityFn<T>& fn, const Matrix<T>& z, double t, const CFGWeights& cfg,
                          std::size_t& evaluations) {
  switch (cfg.mode) {
    case GuidanceMode::None:
      evaluations += 1;
      return fn(z, t, Branch::Full);
    case GuidanceMode::Single: {
      evaluations += 2;
      Matrix<T> vu = fn(z, t, Branch::Unconditional);
      return cfg_single<T>(vu, fn(z, t, Branch::Full), cfg.w);
    }
    case GuidanceMode::Dual: {
      evaluations += 3;
      Matrix<T> vnn = fn(z, t, Branch::Unconditional);
      Matrix<T> vfn = fn(z, t, Branch::FaceOnly);
      return cfg_dual<T>(vnn, vfn, fn(z, t, Branch::Full), cfg.w1, cfg.w2);
    }
  }
  throw ValidationError("guided_velocity: bad guidance mode");
}

/// Per-step hook, called after each update with the new time.
template <typename T>
using StepHook = std::function<void(Matrix<T>& z, int step, double t_next)>;

/// Left-endpoint Euler integration from t = 0 to t = 1 on a uniform grid.
template <typename T>
SampleResult<T> euler_integrate(const VelocityFn<T>& fn, Matrix<T> z, int steps, const CFGWeights& cfg,
                                bool trace = false, const StepHook<T>& hook = {}) {
  if (steps < 1) throw ValidationError("euler_sample: steps must be >= 1");
  SampleResult<T> res;
  const T dt = static_cast<T>(1.0 / steps);
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    Matrix<T> v = guided_velocity(fn, z, t, cfg, res.evaluations);
    if (v.rows() != z.rows() || v.cols() != z.cols()) throw ValidationError("euler_sample: velocity shape mismatch");
    z += dt * v;
    if (!z.allFinite()) throw NumericError("euler_sample: non-finite state at step " + std::to_string(k));
    if (trace) res.trace.push_back({k, t, static_cast<double>(v.cwiseAbs().mean())});
    if (hook) hook(z, k, static_cast<double>(k + 1) / steps);
  }
  res.z = std::move(z);
  return res;
}

template <typename T>
Matrix<T> standard_normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                                 std::string_view stream = "noise") {
  auto rng = make_rng(seed, stream);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(standard_normal(rng));
  return m;
}

/// Draws z0 ~ N(0, I) from `seed` and integrates to t = 1.
template <typename T>
SampleResult<T> euler_sample(const VelocityFn<T>& fn, Eigen::Index rows, Eigen::Index cols, int steps,
                             const CFGWeights& cfg, std::uint64_t seed, bool trace = false) {
  return euler_integrate(fn, standard_normal_matrix<T>(rows, cols, seed), steps, cfg, trace);
}

/// Inpainting-style completion: after every step, rows flagged in
/// `known_rows` are reset to the interpolant between one fixed noise draw
/// (the same z0 the sampler starts from) and the known tokens.
template <typename T>
SampleResult<T> repaint_complete(const VelocityFn<T>& fn, const Matrix<T>& known_tokens,
                                 std::span<const unsigned char> known_rows, int steps, const CFGWeights& cfg,
                                 std::uint64_t seed, bool trace = false) {
  if (static_cast<Eigen::Index>(known_rows.size()) != known_tokens.rows())
    throw ValidationError("repaint_complete: mask length does not match token rows");
  std::vector<Eigen::Index> known;
  for (Eigen::Index r = 0; r < known_tokens.rows(); ++r)
    if (known_rows[static_cast<std::size_t>(r)]) known.push_back(r);
  if (static_cast<Eigen::Index>(known.size()) == known_tokens.rows()) {
    std::cerr << "warning: every position is known; nothing to complete\n";
    return {known_tokens, 0, {}};
  }
  const Matrix<T> z0 = standard_normal_matrix<T>(known_tokens.rows(), known_tokens.cols(), seed);
  Matrix<T> start = z0;
  StepHook<T> hook = [&](Matrix<T>& z, int, double t_next) {
    for (Eigen::Index r : known)
      z.row(r) = interpolant<T>(Matrix<T>(z0.row(r)), Matrix<T>(known_tokens.row(r)), t_next);
  };
  if (known.empty()) hook = {};
  return euler_integrate(fn, std::move(start), steps, cfg, trace, hook);
}

}  // namespace meshflow::flow
