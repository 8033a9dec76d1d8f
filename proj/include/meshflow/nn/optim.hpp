#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "meshflow/nn/params.hpp"

namespace meshflow::nn {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;      // <= 0 disables clipping
  std::size_t warmup = 0;
  std::size_t total_steps = 0;  // cosine horizon; 0 keeps lr constant
  double min_lr_ratio = 0.0;
};

/// Learning rate at `step` (0-based): linear warmup, then cosine decay.
inline double scheduled_lr(const AdamWConfig& c, std::size_t step) {
  if (c.warmup > 0 && step < c.warmup)
    return c.lr * static_cast<double>(step + 1) / static_cast<double>(c.warmup);
  if (c.total_steps <= c.warmup) return c.lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - c.warmup) / static_cast<double>(c.total_steps - c.warmup));
  return c.lr * (c.min_lr_ratio + (1.0 - c.min_lr_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

struct StepInfo {
  double grad_norm = 0.0;
  double lr = 0.0;
};

/// Adam with decoupled weight decay (matrices named "*.W" only) and global
/// gradient-norm clipping.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : cfg_(config) {}

  const AdamWConfig& config() const { return cfg_; }

  StepInfo step(ParameterStore<T>& store, std::size_t step_index) {
    ensure_state(store);
    double sq = 0.0;
    for (const auto& p : store) sq += static_cast<double>(p.grad.squaredNorm());
    StepInfo info{std::sqrt(sq), scheduled_lr(cfg_, step_index)};
    if (!std::isfinite(info.grad_norm)) throw NumericError("AdamW: non-finite gradient norm");
    const T clip = (cfg_.clip_norm > 0.0 && info.grad_norm > cfg_.clip_norm)
                       ? static_cast<T>(cfg_.clip_norm / info.grad_norm)
                       : T(1);
    const double t = static_cast<double>(step_index + 1);
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, t));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, t));
    const T lr = static_cast<T>(info.lr), b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps), wd = static_cast<T>(cfg_.weight_decay);
    std::size_t i = 0;
    for (auto& p : store) {
      Matrix<T>& m = m_[i];
      Matrix<T>& v = v_[i];
      ++i;
      const Matrix<T> g = p.grad * clip;
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.cwiseAbs2();
      if (wd > T(0) && decays(p.name)) p.value *= (T(1) - lr * wd);
      p.value.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
    return info;
  }

  /// Moment tensors in store order, for checkpointing.
  std::vector<Matrix<T>>& first_moments() { return m_; }
  std::vector<Matrix<T>>& second_moments() { return v_; }

  void ensure_state(const ParameterStore<T>& store) {
    if (m_.size() == store.size()) return;
    m_.clear();
    v_.clear();
    for (const auto& p : store) {
      m_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }

 private:
  static bool decays(const std::string& name) {
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".W") == 0;
  }

  AdamWConfig cfg_;
  std::vector<Matrix<T>> m_, v_;
};

}  // namespace meshflow::nn
