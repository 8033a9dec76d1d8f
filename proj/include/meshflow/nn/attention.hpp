#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "meshflow/nn/ops.hpp"

namespace meshflow::nn {

/// Additive mask value for padded keys. Finite so softmax never sees inf-inf.
template <typename T>
inline constexpr T kMaskNegInf = T(-1e9);

/// Row layout of a padded batch: sample b occupies rows [b*length, (b+1)*length),
/// of which the first lengths[b] are valid.
struct SequenceLayout {
  Eigen::Index batch = 1;
  Eigen::Index length = 0;
  std::vector<int> lengths;

  static SequenceLayout single(int n) { return {1, n, {n}}; }
  static SequenceLayout padded(std::vector<int> lengths) {
    if (lengths.empty()) throw ValidationError("SequenceLayout: empty batch");
    int mx = 0;
    for (int l : lengths) {
      if (l <= 0) throw ValidationError("SequenceLayout: sequence lengths must be positive");
      mx = std::max(mx, l);
    }
    return {static_cast<Eigen::Index>(lengths.size()), mx, std::move(lengths)};
  }

  Eigen::Index rows() const { return batch * length; }

  std::vector<unsigned char> row_valid() const {
    std::vector<unsigned char> v(static_cast<std::size_t>(rows()), 0);
    for (Eigen::Index b = 0; b < batch; ++b)
      for (int i = 0; i < lengths[b]; ++i) v[static_cast<std::size_t>(b * length + i)] = 1;
    return v;
  }

  /// Position of each row within its sequence (RoPE input).
  std::vector<int> positions() const {
    std::vector<int> p(static_cast<std::size_t>(rows()));
    for (Eigen::Index r = 0; r < rows(); ++r) p[static_cast<std::size_t>(r)] = static_cast<int>(r % length);
    return p;
  }
};

/// Additive attention bias, (batch*queries) x keys, every entry 0 or kMaskNegInf.
template <typename T>
struct AttentionMask {
  Eigen::Index batch = 1, queries = 0, keys = 0;
  Matrix<T> bias;

  static AttentionMask none(Eigen::Index batch, Eigen::Index queries, Eigen::Index keys) {
    return {batch, queries, keys, Matrix<T>::Zero(batch * queries, keys)};
  }

  /// Masks key columns at and beyond each sample's valid length.
  static AttentionMask key_padding(const SequenceLayout& layout) {
    AttentionMask m = none(layout.batch, layout.length, layout.length);
    for (Eigen::Index b = 0; b < layout.batch; ++b)
      for (Eigen::Index j = layout.lengths[b]; j < layout.length; ++j)
        m.bias.block(b * layout.length, j, layout.length, 1).setConstant(kMaskNegInf<T>);
    return m;
  }

  bool is_masked(Eigen::Index row, Eigen::Index key) const { return bias(row, key) <= kMaskNegInf<T> / 2; }
};

struct AttentionStats {
  std::size_t fully_masked_rows = 0;
};

/// softmax(q k^T / sqrt(d) + mask) v, per sample and per head. Query rows
/// whose keys are all masked produce zeros and are counted in `stats`.
template <typename T>
Var<T> masked_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int heads,
                        const AttentionMask<T>& mask, AttentionStats* stats = nullptr) {
  const Eigen::Index B = mask.batch, Lq = mask.queries, Lk = mask.keys;
  if (heads <= 0 || q.cols() % heads != 0 || v.cols() % heads != 0)
    throw ValidationError("attention: width not divisible by heads");
  if (q.cols() != k.cols()) throw ValidationError("attention: query/key width mismatch");
  if (q.rows() != B * Lq || k.rows() != B * Lk || v.rows() != B * Lk)
    throw ValidationError("attention: rows do not match mask shape");
  if (mask.bias.rows() != B * Lq || mask.bias.cols() != Lk)
    throw ValidationError("attention: mask bias has wrong shape");
  const Eigen::Index d = q.cols() / heads, dv = v.cols() / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  Tape<T>& t = q.tape();

  std::vector<Matrix<T>> probs(static_cast<std::size_t>(B * heads));
  Matrix<T> out = Matrix<T>::Zero(B * Lq, v.cols());
  std::vector<unsigned char> dead(static_cast<std::size_t>(B * Lq), 0);
  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index r = 0; r < Lq; ++r) {
      bool all = true;
      for (Eigen::Index j = 0; j < Lk && all; ++j) all = mask.is_masked(b * Lq + r, j);
      dead[static_cast<std::size_t>(b * Lq + r)] = all;
    }
  std::size_t dead_count = 0;
  for (auto x : dead) dead_count += x;

  for (Eigen::Index b = 0; b < B; ++b)
    for (Eigen::Index h = 0; h < heads; ++h) {
      Matrix<T> s = q.value().block(b * Lq, h * d, Lq, d) * k.value().block(b * Lk, h * d, Lk, d).transpose();
      s *= scale;
      s += mask.bias.middleRows(b * Lq, Lq);
      for (Eigen::Index r = 0; r < Lq; ++r) {
        if (dead[static_cast<std::size_t>(b * Lq + r)]) {
          s.row(r).setZero();
          continue;
        }
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      out.block(b * Lq, h * dv, Lq, dv).noalias() = s * v.value().block(b * Lk, h * dv, Lk, dv);
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(s);
    }
  if (stats) stats->fully_masked_rows += dead_count;

  return t.record(std::move(out), {q, k, v},
                  [&t, q, k, v, probs = std::move(probs), B, Lq, Lk, heads, d, dv, scale](const Matrix<T>& g) {
                    Matrix<T>* gq = t.grad_buffer(q);
                    Matrix<T>* gk = t.grad_buffer(k);
                    Matrix<T>* gv = t.grad_buffer(v);
                    for (Eigen::Index b = 0; b < B; ++b)
                      for (Eigen::Index h = 0; h < heads; ++h) {
                        const Matrix<T>& p = probs[static_cast<std::size_t>(b * heads + h)];
                        auto go = g.block(b * Lq, h * dv, Lq, dv);
                        if (gv) gv->block(b * Lk, h * dv, Lk, dv).noalias() += p.transpose() * go;
                        if (!gq && !gk) continue;
                        Matrix<T> dp = go * v.value().block(b * Lk, h * dv, Lk, dv).transpose();
                        // softmax backward: ds = p ⊙ (dp - rowsum(dp ⊙ p))
                        Eigen::Matrix<T, Eigen::Dynamic, 1> rs = dp.cwiseProduct(p).rowwise().sum();
                        Matrix<T> ds = p.cwiseProduct(dp - rs.replicate(1, Lk)) * scale;
                        if (gq) gq->block(b * Lq, h * d, Lq, d).noalias() += ds * k.value().block(b * Lk, h * d, Lk, d);
                        if (gk) gk->block(b * Lk, h * d, Lk, d).noalias() += ds.transpose() * q.value().block(b * Lq, h * d, Lq, d);
                      }
                  });
}

/// Rotary position embedding: within every head, channel pairs (2i, 2i+1)
/// are rotated by position * base^(-2i/d).
template <typename T>
Var<T> rope(const Var<T>& x, std::span<const int> positions, int heads, double base = 10000.0) {
  if (heads <= 0 || x.cols() % heads != 0) throw ValidationError("rope: width not divisible by heads");
  const Eigen::Index d = x.cols() / heads;
  if (d % 2 != 0) throw ValidationError("rope: head dimension must be even");
  if (static_cast<Eigen::Index>(positions.size()) != x.rows()) throw ValidationError("rope: positions size mismatch");
  Tape<T>& t = x.tape();
  const Eigen::Index half = d / 2;
  Matrix<T> cs(x.rows(), half), sn(x.rows(), half);
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index i = 0; i < half; ++i) {
      const double theta = positions[r] * std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(d));
      cs(r, i) = static_cast<T>(std::cos(theta));
      sn(r, i) = static_cast<T>(std::sin(theta));
    }
  auto rotate = [heads, d, half](const Matrix<T>& in, const Matrix<T>& c, const Matrix<T>& s, T sign) {
    Matrix<T> o(in.rows(), in.cols());
    for (Eigen::Index r = 0; r < in.rows(); ++r)
      for (Eigen::Index h = 0; h < heads; ++h)
        for (Eigen::Index i = 0; i < half; ++i) {
          const Eigen::Index a = h * d + 2 * i;
          const T x0 = in(r, a), x1 = in(r, a + 1);
          const T sv = sign * s(r, i);
          o(r, a) = x0 * c(r, i) - x1 * sv;
          o(r, a + 1) = x0 * sv + x1 * c(r, i);
        }
    return o;
  };
  Matrix<T> out = rotate(x.value(), cs, sn, T(1));
  return t.record(std::move(out), {x}, [&t, x, cs, sn, rotate](const Matrix<T>& g) {
    t.accumulate(x, rotate(g, cs, sn, T(-1)));
  });
}

/// Symmetric-normalized propagation with self loops, D^-1/2 (A + I) D^-1/2,
/// stored sparse. Several graphs can be stacked block-diagonally.
template <typename T>
struct GraphOperator {
  Eigen::Index n = 0;
  std::vector<std::vector<std::pair<Eigen::Index, T>>> rows;

  /// `neighbors[i]` lists the neighbours of node i (without i itself).
  /// Nodes are placed at `offset`; the operator grows to cover them.
  void append(const std::vector<std::vector<std::uint32_t>>& neighbors, Eigen::Index offset) {
    const Eigen::Index count = static_cast<Eigen::Index>(neighbors.size());
    if (offset + count > n) {
      n = offset + count;
      rows.resize(static_cast<std::size_t>(n));
    }
    for (Eigen::Index i = 0; i < count; ++i) {
      const T di = static_cast<T>(neighbors[i].size() + 1);
      auto& row = rows[static_cast<std::size_t>(offset + i)];
      row.clear();
      row.emplace_back(offset + i, T(1) / di);
      for (auto j : neighbors[i]) {
        const T dj = static_cast<T>(neighbors[j].size() + 1);
        row.emplace_back(offset + j, T(1) / std::sqrt(di * dj));
      }
    }
  }

  void resize(Eigen::Index rows_total) {
    if (rows_total < n) throw ValidationError("GraphOperator: cannot shrink");
    n = rows_total;
    rows.resize(static_cast<std::size_t>(n));
  }

  Matrix<T> apply(const Matrix<T>& x) const {
    Matrix<T> out = Matrix<T>::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < n; ++i)
      for (const auto& [j, w] : rows[static_cast<std::size_t>(i)]) out.row(i) += w * x.row(j);
    return out;
  }

  Matrix<T> dense() const {
    Matrix<T> m = Matrix<T>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (const auto& [j, w] : rows[static_cast<std::size_t>(i)]) m(i, j) += w;
    return m;
  }
};

/// Graph propagation; the operator is symmetric so backward applies it again.
template <typename T>
Var<T> propagate(const Var<T>& x, const GraphOperator<T>& graph) {
  if (x.rows() != graph.n) throw ValidationError("propagate: feature rows != graph nodes");
  Tape<T>& t = x.tape();
  return t.record(graph.apply(x.value()), {x}, [&t, x, graph](const Matrix<T>& g) {
    t.accumulate(x, graph.apply(g));
  });
}

}  // namespace meshflow::nn
