#pragma once

#include <deque>
#include <string>
#include <unordered_map>

#include "meshflow/nn/tape.hpp"
#include "meshflow/rng.hpp"

namespace meshflow::nn {

enum class Init { Normal, Zeros, Ones };

/// Owns a model's named parameters in registration order. Each tensor is
/// initialized from its own stream (root seed + name), so adding a parameter
/// never changes another one's initial values.
template <typename T>
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0, double init_std = 0.02)
      : seed_(seed), init_std_(init_std) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<T>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                    Init init = Init::Normal, double std = -1.0) {
    if (index_.count(name)) throw ValidationError("duplicate parameter name '" + name + "'");
    Parameter<T> p{name, Matrix<T>(rows, cols), Matrix<T>::Zero(rows, cols)};
    switch (init) {
      case Init::Zeros: p.value.setZero(); break;
      case Init::Ones: p.value.setOnes(); break;
      case Init::Normal: {
        auto rng = make_rng(seed_, name);
        const double s = std > 0.0 ? std : init_std_;
        for (Eigen::Index i = 0; i < p.value.size(); ++i)
          p.value.data()[i] = static_cast<T>(truncated_normal(rng, s));
        break;
      }
    }
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>& at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw ValidationError("unknown parameter '" + name + "'");
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Copies values by name from a store of another precision.
  template <typename U>
  void copy_values_from(const ParameterStore<U>& other) {
    for (auto& p : params_) {
      const auto* q = other.find(p.name);
      if (!q) throw ValidationError("copy_values_from: missing parameter '" + p.name + "'");
      if (q->value.rows() != p.value.rows() || q->value.cols() != p.value.cols())
        throw ValidationError("copy_values_from: shape mismatch for '" + p.name + "'");
      p.value = q->value.template cast<T>();
    }
  }

 private:
  std::uint64_t seed_;
  double init_std_;
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace meshflow::nn
