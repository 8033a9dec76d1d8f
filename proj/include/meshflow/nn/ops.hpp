#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "meshflow/nn/tape.hpp"

namespace meshflow::nn {

namespace detail {
template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                          std::to_string(b.cols()) + ")");
}
}  // namespace detail

// ---------------------------------------------------------------- linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  if (a.cols() != b.rows()) throw ValidationError("matmul: inner dimension mismatch");
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix<T>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

/// x W + b, with W stored (in x out) and b a 1 x out row.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.cols() != w.rows() || b.cols() != w.cols() || b.rows() != 1)
    throw ValidationError("linear: shape mismatch");
  Tape<T>& t = x.tape();
  Matrix<T> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return t.record(std::move(out), {x, w, b}, [&t, x, w, b](const Matrix<T>& g) {
    if (t.needs_grad(x)) t.accumulate(x, g * w.value().transpose());
    if (t.needs_grad(w)) t.accumulate(w, x.value().transpose() * g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  Tape<T>& t = a.tape();
  return t.record(a.value() + b.value(), {a, b}, [&t, a, b](const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Tape<T>& t = a.tape();
  return t.record(a.value() - b.value(), {a, b}, [&t, a, b](const Matrix<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return t.record(std::move(out), {a, b}, [&t, a, b](const Matrix<T>& g) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(b.value()));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tape<T>& t = a.tape();
  return t.record(a.value() * s, {a}, [&t, a, s](const Matrix<T>& g) { t.accumulate(a, g * s); });
}

/// Adds a constant matrix (no gradient to it).
template <typename T>
Var<T> add_constant(const Var<T>& a, const Matrix<T>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ValidationError("add_constant: shape mismatch");
  Tape<T>& t = a.tape();
  return t.record(a.value() + c, {a}, [&t, a](const Matrix<T>& g) { t.accumulate(a, g); });
}

/// Elementwise product with a constant matrix.
template <typename T>
Var<T> mul_constant(const Var<T>& a, const Matrix<T>& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw ValidationError("mul_constant: shape mismatch");
  Tape<T>& t = a.tape();
  return t.record(a.value().cwiseProduct(c), {a}, [&t, a, c](const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(c));
  });
}

/// Adds a 1 x C row to every row of a.
template <typename T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ValidationError("add_row: shape mismatch");
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), {a, row}, [&t, a, row](const Matrix<T>& g) {
    t.accumulate(a, g);
    if (t.needs_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

/// Repeats each row `times` times consecutively: (B x C) -> (B*times x C).
template <typename T>
Var<T> repeat_rows(const Var<T>& a, Eigen::Index times) {
  Tape<T>& t = a.tape();
  const Eigen::Index b = a.rows();
  Matrix<T> out(b * times, a.cols());
  for (Eigen::Index i = 0; i < b; ++i) out.middleRows(i * times, times).rowwise() = a.value().row(i);
  return t.record(std::move(out), {a}, [&t, a, b, times](const Matrix<T>& g) {
    Matrix<T> ga(b, g.cols());
    for (Eigen::Index i = 0; i < b; ++i) ga.row(i) = g.middleRows(i * times, times).colwise().sum();
    t.accumulate(a, ga);
  });
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ValidationError("slice_cols: out of range");
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value().middleCols(start, count);
  return t.record(std::move(out), {a}, [&t, a, start, count](const Matrix<T>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->middleCols(start, count) += g;
  });
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ValidationError("slice_rows: out of range");
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value().middleRows(start, count);
  return t.record(std::move(out), {a}, [&t, a, start, count](const Matrix<T>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->middleRows(start, count) += g;
  });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  Tape<T>& t = parts.front().tape();
  Eigen::Index rows = parts.front().rows(), cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ValidationError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), parts, [&t, parts](const Matrix<T>& g) {
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      t.accumulate(p, g.middleCols(c0, p.cols()));
      c0 += p.cols();
    }
  });
}

// ---------------------------------------------------------------- pointwise

template <typename T>
Var<T> silu(const Var<T>& a) {
  Tape<T>& t = a.tape();
  Matrix<T> sig = (T(1) + (-a.value().array()).exp()).inverse().matrix();
  Matrix<T> out = a.value().cwiseProduct(sig);
  return t.record(std::move(out), {a}, [&t, a, sig](const Matrix<T>& g) {
    // d/dx x*s(x) = s(x) * (1 + x (1 - s(x)))
    auto ds = sig.array() * (T(1) + a.value().array() * (T(1) - sig.array()));
    t.accumulate(a, (g.array() * ds).matrix());
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value().array().exp().matrix();
  return t.record(out, {a}, [&t, a, out](const Matrix<T>& g) {
    t.accumulate(a, g.cwiseProduct(out));
  });
}

/// Clamps into [lo, hi]; the gradient is zero where the input was clipped.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  Tape<T>& t = a.tape();
  Matrix<T> out = a.value().cwiseMax(lo).cwiseMin(hi);
  return t.record(std::move(out), {a}, [&t, a, lo, hi](const Matrix<T>& g) {
    Matrix<T> ga = g;
    for (Eigen::Index i = 0; i < ga.size(); ++i) {
      const T x = a.value().data()[i];
      if (x < lo || x > hi) ga.data()[i] = T(0);
    }
    t.accumulate(a, ga);
  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  Tape<T>& t = a.tape();
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), {a}, [&t, a](const Matrix<T>& g) {
    t.accumulate(a, Matrix<T>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

/// sum(a ⊙ w) for a constant weight matrix w.
template <typename T>
Var<T> weighted_sum(const Var<T>& a, const Matrix<T>& w) {
  if (a.rows() != w.rows() || a.cols() != w.cols()) throw ValidationError("weighted_sum: shape mismatch");
  Tape<T>& t = a.tape();
  Matrix<T> out(1, 1);
  out(0, 0) = a.value().cwiseProduct(w).sum();
  return t.record(std::move(out), {a}, [&t, a, w](const Matrix<T>& g) { t.accumulate(a, w * g(0, 0)); });
}

// ---------------------------------------------------------------- normalization

/// Root-mean-square normalization of each row, times an optional 1 x C gain.
template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>* gain = nullptr, T eps = T(1e-6)) {
  Tape<T>& t = x.tape();
  const Eigen::Index n = x.rows(), c = x.cols();
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv(n);
  Matrix<T> normed(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv(i) = T(1) / std::sqrt(x.value().row(i).squaredNorm() / T(c) + eps);
    normed.row(i) = x.value().row(i) * inv(i);
  }
  Matrix<T> out = normed;
  if (gain) {
    if (gain->rows() != 1 || gain->cols() != c) throw ValidationError("rms_norm: gain shape mismatch");
    out.array().rowwise() *= gain->value().row(0).array();
  }
  Var<T> g_var = gain ? *gain : x;
  const bool has_gain = gain != nullptr;
  return t.record(std::move(out), {x, g_var},
                  [&t, x, g_var, has_gain, normed, inv, c](const Matrix<T>& g) {
                    Matrix<T> dn = g;
                    if (has_gain) {
                      if (t.needs_grad(g_var)) t.accumulate(g_var, g.cwiseProduct(normed).colwise().sum());
                      dn.array().rowwise() *= g_var.value().row(0).array();
                    }
                    if (!t.needs_grad(x)) return;
                    Matrix<T> dx(normed.rows(), c);
                    for (Eigen::Index i = 0; i < normed.rows(); ++i) {
                      const T proj = dn.row(i).dot(normed.row(i)) / T(c);
                      dx.row(i) = (dn.row(i) - normed.row(i) * proj) * inv(i);
                    }
                    t.accumulate(x, dx);
                  });
}

/// LayerNorm without affine parameters, applied independently to each
/// contiguous group of `group` columns (one attention head per group).
template <typename T>
Var<T> layer_norm_groups(const Var<T>& x, Eigen::Index group, T eps = T(1e-6)) {
  if (group <= 0 || x.cols() % group != 0) throw ValidationError("layer_norm_groups: bad group size");
  Tape<T>& t = x.tape();
  const Eigen::Index n = x.rows(), ng = x.cols() / group;
  Matrix<T> y(n, x.cols());
  Matrix<T> inv(n, ng);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index h = 0; h < ng; ++h) {
      auto seg = x.value().row(i).segment(h * group, group);
      const T mean = seg.mean();
      const T var = (seg.array() - mean).square().mean();
      inv(i, h) = T(1) / std::sqrt(var + eps);
      y.row(i).segment(h * group, group) = ((seg.array() - mean) * inv(i, h)).matrix();
    }
  return t.record(y, {x}, [&t, x, y, inv, group, ng](const Matrix<T>& g) {
    Matrix<T> dx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index h = 0; h < ng; ++h) {
        auto gy = g.row(i).segment(h * group, group);
        auto yy = y.row(i).segment(h * group, group);
        const T mg = gy.mean();
        const T mgy = gy.dot(yy) / T(group);
        dx.row(i).segment(h * group, group) =
            ((gy.array() - mg - yy.array() * mgy) * inv(i, h)).matrix();
      }
    t.accumulate(x, dx);
  });
}

// ---------------------------------------------------------------- losses

/// Mean cross-entropy over the valid rows of `logits` (N x groups*classes),
/// where each row holds `groups` independent classification slots.
/// `targets` is row-major N x groups.
template <typename T>
Var<T> grouped_cross_entropy(const Var<T>& logits, std::span<const int> targets, int groups,
                             std::span<const unsigned char> row_valid) {
  const Eigen::Index n = logits.rows();
  if (groups <= 0 || logits.cols() % groups != 0)
    throw ValidationError("cross_entropy: columns not divisible by groups");
  const Eigen::Index classes = logits.cols() / groups;
  if (static_cast<Eigen::Index>(targets.size()) != n * groups || static_cast<Eigen::Index>(row_valid.size()) != n)
    throw ValidationError("cross_entropy: target/mask size mismatch");
  Tape<T>& t = logits.tape();
  Matrix<T> probs = Matrix<T>::Zero(n, logits.cols());
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!row_valid[i]) continue;
    for (int gidx = 0; gidx < groups; ++gidx) {
      const int target = targets[i * groups + gidx];
      if (target < 0 || target >= classes)
        throw ValidationError("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                              std::to_string(classes) + ")");
      auto seg = logits.value().row(i).segment(gidx * classes, classes);
      const T mx = seg.maxCoeff();
      auto e = (seg.array() - mx).exp();
      const T z = e.sum();
      probs.row(i).segment(gidx * classes, classes) = (e / z).matrix();
      total += static_cast<double>(mx + std::log(z) - seg(target));
      ++count;
    }
  }
  if (count == 0) throw ValidationError("cross_entropy: no valid slots");
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(total / static_cast<double>(count));
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<unsigned char> valid(row_valid.begin(), row_valid.end());
  return t.record(std::move(out), {logits},
                  [&t, logits, probs, tg = std::move(tg), valid = std::move(valid), groups, classes,
                   count](const Matrix<T>& g) {
                    Matrix<T> d = probs;
                    for (Eigen::Index i = 0; i < d.rows(); ++i) {
                      if (!valid[i]) continue;
                      for (int gidx = 0; gidx < groups; ++gidx) d(i, gidx * classes + tg[i * groups + gidx]) -= T(1);
                    }
                    t.accumulate(logits, d * (g(0, 0) / static_cast<T>(count)));
                  });
}

/// Mean squared error over the token-channel slots of valid rows.
template <typename T>
Var<T> masked_mse(const Var<T>& pred, const Matrix<T>& target, std::span<const unsigned char> row_valid) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw ValidationError("masked_mse: shape mismatch");
  if (static_cast<Eigen::Index>(row_valid.size()) != pred.rows())
    throw ValidationError("masked_mse: mask size mismatch");
  Tape<T>& t = pred.tape();
  Matrix<T> diff = Matrix<T>::Zero(pred.rows(), pred.cols());
  std::size_t rows = 0;
  for (Eigen::Index i = 0; i < pred.rows(); ++i)
    if (row_valid[i]) {
      diff.row(i) = pred.value().row(i) - target.row(i);
      ++rows;
    }
  if (rows == 0) throw ValidationError("masked_mse: zero valid slots");
  const T count = static_cast<T>(rows * static_cast<std::size_t>(pred.cols()));
  Matrix<T> out(1, 1);
  out(0, 0) = diff.squaredNorm() / count;
  return t.record(std::move(out), {pred}, [&t, pred, diff, count](const Matrix<T>& g) {
    t.accumulate(pred, diff * (T(2) * g(0, 0) / count));
  });
}

/// KL regularizer over valid rows: mean of 1/2 (mu^2 + sigma^2 - log sigma^2),
/// with sigma^2 = exp(logvar).
template <typename T>
Var<T> kl_regularizer(const Var<T>& mu, const Var<T>& logvar, std::span<const unsigned char> row_valid) {
  detail::require_same_shape(mu, logvar, "kl_regularizer");
  if (static_cast<Eigen::Index>(row_valid.size()) != mu.rows())
    throw ValidationError("kl_regularizer: mask size mismatch");
  Tape<T>& t = mu.tape();
  double total = 0.0;
  std::size_t rows = 0;
  for (Eigen::Index i = 0; i < mu.rows(); ++i) {
    if (!row_valid[i]) continue;
    ++rows;
    for (Eigen::Index j = 0; j < mu.cols(); ++j) {
      const double m = mu.value()(i, j), lv = logvar.value()(i, j);
      total += 0.5 * (m * m + std::exp(lv) - lv);
    }
  }
  if (rows == 0) throw ValidationError("kl_regularizer: no valid rows");
  const T count = static_cast<T>(rows * static_cast<std::size_t>(mu.cols()));
  Matrix<T> out(1, 1);
  out(0, 0) = static_cast<T>(total / static_cast<double>(count));
  std::vector<unsigned char> valid(row_valid.begin(), row_valid.end());
  return t.record(std::move(out), {mu, logvar},
                  [&t, mu, logvar, valid = std::move(valid), count](const Matrix<T>& g) {
                    const T s = g(0, 0) / count;
                    Matrix<T> dmu = Matrix<T>::Zero(mu.rows(), mu.cols());
                    Matrix<T> dlv = Matrix<T>::Zero(mu.rows(), mu.cols());
                    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
                      if (!valid[i]) continue;
                      dmu.row(i) = mu.value().row(i) * s;
                      dlv.row(i) = ((logvar.value().row(i).array().exp() - T(1)) * (T(0.5) * s)).matrix();
                    }
                    t.accumulate(mu, dmu);
                    t.accumulate(logvar, dlv);
                  });
}

// ---------------------------------------------------------------- lookup

/// Row gather from an embedding table; the gradient scatters back only into
/// the rows that were read.
template <typename T>
Var<T> embedding(const Var<T>& table, std::span<const int> indices) {
  Tape<T>& t = table.tape();
  Matrix<T> out(static_cast<Eigen::Index>(indices.size()), table.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows())
      throw ValidationError("embedding: index " + std::to_string(indices[i]) + " out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return t.record(std::move(out), {table}, [&t, table, idx = std::move(idx)](const Matrix<T>& g) {
    if (auto* gt = t.grad_buffer(table))
      for (std::size_t i = 0; i < idx.size(); ++i) gt->row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

}  // namespace meshflow::nn
