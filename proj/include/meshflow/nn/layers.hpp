#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "meshflow/nn/attention.hpp"
#include "meshflow/nn/params.hpp"

namespace meshflow::nn {

template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;  // in x out
  Parameter<T>* bias = nullptr;    // 1 x out

  Linear() = default;
  Linear(ParameterStore<T>& store, const std::string& name, Eigen::Index in, Eigen::Index out,
         Init init = Init::Normal, double std = -1.0)
      : weight(&store.add(name + ".W", in, out, init, std)),
        bias(&store.add(name + ".b", 1, out, Init::Zeros)) {}

  Var<T> operator()(const Var<T>& x) const {
    Tape<T>& t = x.tape();
    return linear(x, t.parameter(*weight), t.parameter(*bias));
  }
  Eigen::Index in() const { return weight->value.rows(); }
  Eigen::Index out() const { return weight->value.cols(); }
};

template <typename T>
struct RMSNorm {
  Parameter<T>* gain = nullptr;

  RMSNorm() = default;
  RMSNorm(ParameterStore<T>& store, const std::string& name, Eigen::Index dim)
      : gain(&store.add(name + ".gain", 1, dim, Init::Ones)) {}

  Var<T> operator()(const Var<T>& x) const {
    Var<T> g = x.tape().parameter(*gain);
    return rms_norm(x, &g);
  }
};

/// Hidden width of the gated feed-forward: 8d/3 rounded to a multiple of 8.
inline Eigen::Index swiglu_hidden(Eigen::Index d) {
  const double h = 8.0 * static_cast<double>(d) / 3.0;
  return std::max<Eigen::Index>(8, 8 * static_cast<Eigen::Index>(std::lround(h / 8.0)));
}

/// down(silu(gate(x)) ⊙ up(x))
template <typename T>
struct SwiGLU {
  Linear<T> gate, up, down;

  SwiGLU() = default;
  SwiGLU(ParameterStore<T>& store, const std::string& name, Eigen::Index dim)
      : gate(store, name + ".gate", dim, swiglu_hidden(dim)),
        up(store, name + ".up", dim, swiglu_hidden(dim)),
        down(store, name + ".down", swiglu_hidden(dim), dim) {}

  Var<T> operator()(const Var<T>& x) const { return down(mul(silu(gate(x)), up(x))); }
};

/// x + post_norm(sublayer(pre_norm(x)))
template <typename T>
Var<T> sandwich(const Var<T>& x, const RMSNorm<T>& pre, const RMSNorm<T>& post,
                const std::function<Var<T>(const Var<T>&)>& sublayer) {
  return add(x, post(sublayer(pre(x))));
}

struct AttentionOptions {
  int heads = 4;
  bool rope = true;
  bool qk_norm = true;
  double rope_base = 10000.0;
};

/// Fused-projection self-attention with optional QK-norm (per-head
/// LayerNorm) and rotary positions on queries and keys.
template <typename T>
struct SelfAttention {
  Linear<T> qkv, proj;
  AttentionOptions opt;

  SelfAttention() = default;
  SelfAttention(ParameterStore<T>& store, const std::string& name, Eigen::Index dim, AttentionOptions o,
                Init proj_init = Init::Normal)
      : qkv(store, name + ".qkv", dim, 3 * dim), proj(store, name + ".proj", dim, dim, proj_init), opt(o) {
    if (dim % o.heads != 0) throw ValidationError(name + ": hidden size not divisible by heads");
  }

  Var<T> operator()(const Var<T>& x, const AttentionMask<T>& mask, std::span<const int> positions,
                    AttentionStats* stats = nullptr) const {
    const Eigen::Index dim = x.cols();
    Var<T> all = qkv(x);
    Var<T> q = slice_cols(all, 0, dim), k = slice_cols(all, dim, dim), v = slice_cols(all, 2 * dim, dim);
    if (opt.qk_norm) {
      q = layer_norm_groups(q, dim / opt.heads);
      k = layer_norm_groups(k, dim / opt.heads);
    }
    if (opt.rope) {
      q = rope(q, positions, opt.heads, opt.rope_base);
      k = rope(k, positions, opt.heads, opt.rope_base);
    }
    return proj(masked_attention(q, k, v, opt.heads, mask, stats));
  }
};

/// Queries from the token stream, keys/values from a condition context.
template <typename T>
struct CrossAttention {
  Linear<T> q, kv, proj;
  int heads = 4;
  bool qk_norm = true;

  CrossAttention() = default;
  CrossAttention(ParameterStore<T>& store, const std::string& name, Eigen::Index dim, Eigen::Index ctx_dim,
                 int h, bool qkn)
      : q(store, name + ".q", dim, dim), kv(store, name + ".kv", ctx_dim, 2 * dim),
        proj(store, name + ".proj", dim, dim), heads(h), qk_norm(qkn) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& context, const AttentionMask<T>& mask) const {
    const Eigen::Index dim = x.cols();
    Var<T> qq = q(x);
    Var<T> both = kv(context);
    Var<T> k = slice_cols(both, 0, dim), v = slice_cols(both, dim, dim);
    if (qk_norm) {
      qq = layer_norm_groups(qq, dim / heads);
      k = layer_norm_groups(k, dim / heads);
    }
    return proj(masked_attention(qq, k, v, heads, mask));
  }
};

/// Sandwich-normalized attention + SwiGLU block used by the autoencoder.
template <typename T>
struct TransformerBlock {
  RMSNorm<T> attn_pre, attn_post, ffn_pre, ffn_post;
  SelfAttention<T> attn;
  SwiGLU<T> ffn;

  TransformerBlock() = default;
  TransformerBlock(ParameterStore<T>& store, const std::string& name, Eigen::Index dim, AttentionOptions o)
      : attn_pre(store, name + ".attn_pre", dim), attn_post(store, name + ".attn_post", dim),
        ffn_pre(store, name + ".ffn_pre", dim), ffn_post(store, name + ".ffn_post", dim),
        attn(store, name + ".attn", dim, o), ffn(store, name + ".ffn", dim) {}

  Var<T> operator()(const Var<T>& x, const AttentionMask<T>& mask, std::span<const int> positions) const {
    Var<T> h = sandwich<T>(x, attn_pre, attn_post, [&](const Var<T>& y) { return attn(y, mask, positions); });
    return sandwich<T>(h, ffn_pre, ffn_post, [&](const Var<T>& y) { return ffn(y); });
  }
};

/// adaLN-Zero: silu(cond) -> zero-initialized linear -> `chunks` modulation
/// vectors of width `dim` per sample.
template <typename T>
struct AdaLNModulation {
  Linear<T> proj;
  Eigen::Index dim = 0;
  int chunks = 0;

  AdaLNModulation() = default;
  AdaLNModulation(ParameterStore<T>& store, const std::string& name, Eigen::Index cond_dim, Eigen::Index d,
                  int n_chunks)
      : proj(store, name, cond_dim, d * n_chunks, Init::Zeros), dim(d), chunks(n_chunks) {}

  /// cond: B x cond_dim. Returns `chunks` matrices of B x dim.
  std::vector<Var<T>> operator()(const Var<T>& cond) const {
    Var<T> all = proj(silu(cond));
    std::vector<Var<T>> out;
    for (int c = 0; c < chunks; ++c) out.push_back(slice_cols(all, c * dim, dim));
    return out;
  }
};

/// x ⊙ (1 + scale) + shift, with per-sample (B x C) scale/shift broadcast
/// over each sample's `length` rows.
template <typename T>
Var<T> modulate(const Var<T>& x, const Var<T>& shift, const Var<T>& scale_, Eigen::Index length) {
  Var<T> sc = repeat_rows(scale_, length);
  Var<T> sh = repeat_rows(shift, length);
  return add(add(x, mul(x, sc)), sh);
}

/// Per-sample gate broadcast over rows.
template <typename T>
Var<T> gate_rows(const Var<T>& x, const Var<T>& gate, Eigen::Index length) {
  return mul(x, repeat_rows(gate, length));
}

/// One graph convolution: silu(Â x W + b).
template <typename T>
struct GCNLayer {
  Linear<T> lin;

  GCNLayer() = default;
  GCNLayer(ParameterStore<T>& store, const std::string& name, Eigen::Index in, Eigen::Index out)
      : lin(store, name, in, out) {}

  Var<T> operator()(const Var<T>& x, const GraphOperator<T>& graph) const {
    return silu(lin(propagate(x, graph)));
  }
};

}  // namespace meshflow::nn
