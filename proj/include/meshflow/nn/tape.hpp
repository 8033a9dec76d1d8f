#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "meshflow/errors.hpp"

namespace meshflow::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named trainable tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<T>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a computation as a sequence of nodes. Node ids are a topological
/// order, so backward is a single reverse sweep. With recording disabled the
/// tape only holds values (inference).
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(const Matrix<T>& grad_out)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<T> constant(Matrix<T> value) { return push(std::move(value), false, nullptr); }

  /// Leaf whose gradient is kept after backward().
  Var<T> variable(Matrix<T> value) { return push(std::move(value), recording_, nullptr); }

  /// Leaf bound to a parameter; backward() adds its gradient into p.grad.
  Var<T> parameter(Parameter<T>& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>(this, it->second);
    Var<T> v = push(p.value, recording_, &p);
    bound_.emplace(&p, v.id());
    return v;
  }

  /// Adds an op result. `fn` receives d(loss)/d(result) and must call
  /// accumulate()/grad_buffer() for its inputs.
  Var<T> record(Matrix<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
    return record_impl(std::move(value), inputs.begin(), inputs.end(), std::move(fn));
  }
  Var<T> record(Matrix<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
    return record_impl(std::move(value), inputs.begin(), inputs.end(), std::move(fn));
  }


  const Matrix<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(const Var<T>& v) const { return nodes_[v.id()].needs_grad; }

  /// Gradient buffer of an input, zero-initialized on first use. Returns
  /// nullptr when the input does not need a gradient.
  Matrix<T>* grad_buffer(const Var<T>& v) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return nullptr;
    if (!n.has_grad) {
      n.grad.setZero(n.value.rows(), n.value.cols());
      n.has_grad = true;
    }
    return &n.grad;
  }

  template <typename Expr>
  void accumulate(const Var<T>& v, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[v.id()];
    if (!n.needs_grad) return;
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  Matrix<T> grad(const Var<T>& v) const {
    const Node& n = nodes_[v.id()];
    if (n.has_grad) return n.grad;
    return Matrix<T>::Zero(n.value.rows(), n.value.cols());
  }

  void backward(const Var<T>& root, const Matrix<T>& seed) {
    if (!recording_) throw ValidationError("backward on a non-recording tape");
    Node& r = nodes_[root.id()];
    if (seed.rows() != r.value.rows() || seed.cols() != r.value.cols())
      throw ValidationError("backward: seed shape mismatch");
    accumulate(root, seed);
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) {
        if (n.param->grad.rows() != n.value.rows() || n.param->grad.cols() != n.value.cols())
          n.param->grad.setZero(n.value.rows(), n.value.cols());
        n.param->grad += n.grad;
      }
    }
  }

  void backward(const Var<T>& root) {
    if (root.rows() != 1 || root.cols() != 1)
      throw ValidationError("backward: root must be a scalar");
    backward(root, Matrix<T>::Ones(1, 1));
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    bool needs_grad = false;
    bool has_grad = false;
    Backward backward;
    Parameter<T>* param = nullptr;
  };

  template <typename It>
  Var<T> record_impl(Matrix<T> value, It first, It last, Backward fn) {
    bool needs = false;
    if (recording_)
      for (It it = first; it != last; ++it) needs = needs || nodes_[it->id()].needs_grad;
    Var<T> v = push(std::move(value), needs, nullptr);
    if (needs) nodes_[v.id()].backward = std::move(fn);
    return v;
  }

  Var<T> push(Matrix<T> value, bool needs_grad, Parameter<T>* p) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, false, {}, p});
    return Var<T>(this, nodes_.size() - 1);
  }

  bool recording_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::size_t> bound_;
};

template <typename T>
const Matrix<T>& Var<T>::value() const {
  return tape_->value(id_);
}

}  // namespace meshflow::nn
