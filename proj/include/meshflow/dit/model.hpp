#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "meshflow/config.hpp"
#include "meshflow/nn/layers.hpp"

namespace meshflow::dit {

using nn::Matrix;
using nn::Tape;
using nn::Var;

struct DiTConfig {
  int layers = 6;
  int hidden = 256;
  int heads = 8;
  int latent_dim = 8;
  int max_faces = 64;
  bool use_cross_attention = false;
  int context_dim = 27;  // width of condition vectors (toy encoder: 3 + 6 * frequencies)
  int context_tokens = 4;
  bool rope = true;
  bool qk_norm = true;
  int time_frequencies = 256;
  double time_scale = 100.0;  // t in [0, 1] is multiplied by this before the sinusoids
  double latent_scale = 1.0;  // tokens are multiplied by this before entering the flow

  void validate() const {
    if (layers < 1 || hidden < 8 || heads < 1 || latent_dim < 1 || max_faces < 1)
      throw ValidationError("dit config: layers, hidden, heads, latent_dim and max_faces must be positive");
    if (hidden % heads != 0 || (hidden / heads) % 2 != 0)
      throw ValidationError("dit config: hidden / heads must be a positive even integer");
    if (time_frequencies < 2 || time_frequencies % 2 != 0)
      throw ValidationError("dit config: time_frequencies must be even");
    if (use_cross_attention && (context_dim < 1 || context_tokens < 1))
      throw ValidationError("dit config: cross-attention needs context_dim and context_tokens >= 1");
    if (!(latent_scale > 0.0) || !(time_scale > 0.0))
      throw ValidationError("dit config: latent_scale and time_scale must be positive");
  }

  int null_face_index() const { return max_faces + 1; }

  void write(KeyValues& kv, const std::string& p = "dit.") const {
    kv.set(p + "layers", layers);
    kv.set(p + "hidden", hidden);
    kv.set(p + "heads", heads);
    kv.set(p + "latent_dim", latent_dim);
    kv.set(p + "max_faces", max_faces);
    kv.set(p + "use_cross_attention", use_cross_attention);
    kv.set(p + "context_dim", context_dim);
    kv.set(p + "context_tokens", context_tokens);
    kv.set(p + "rope", rope);
    kv.set(p + "qk_norm", qk_norm);
    kv.set(p + "time_frequencies", time_frequencies);
    kv.set(p + "time_scale", time_scale);
    kv.set(p + "latent_scale", latent_scale);
  }

  static DiTConfig read(const KeyValues& kv, const std::string& p = "dit.") {
    DiTConfig c;
    c.layers = static_cast<int>(kv.get_int(p + "layers"));
    c.hidden = static_cast<int>(kv.get_int(p + "hidden"));
    c.heads = static_cast<int>(kv.get_int(p + "heads"));
    c.latent_dim = static_cast<int>(kv.get_int(p + "latent_dim"));
    c.max_faces = static_cast<int>(kv.get_int(p + "max_faces"));
    c.use_cross_attention = kv.get_bool(p + "use_cross_attention");
    c.context_dim = static_cast<int>(kv.get_int(p + "context_dim"));
    c.context_tokens = static_cast<int>(kv.get_int(p + "context_tokens"));
    c.rope = kv.get_bool(p + "rope");
    c.qk_norm = kv.get_bool(p + "qk_norm");
    c.time_frequencies = static_cast<int>(kv.get_int(p + "time_frequencies"));
    c.time_scale = kv.get_double(p + "time_scale");
    c.latent_scale = kv.get_double(p + "latent_scale");
    c.validate();
    return c;
  }
};

/// Conditions of one sample. An absent face count or context means "null".
struct ConditionBundle {
  std::optional<int> face_count;
  std::optional<Matrix<double>> context;  // context_tokens x context_dim
};

/// Zero-padded token batch; sample b occupies rows [b*L, b*L + lengths[b]).
template <typename T>
struct PaddedBatch {
  nn::SequenceLayout layout;
  Matrix<T> tokens;
  nn::AttentionMask<T> mask;

  std::vector<int> lengths() const { return layout.lengths; }
};

template <typename T>
PaddedBatch<T> pad_batch(const std::vector<Matrix<T>>& sequences) {
  if (sequences.empty()) throw ValidationError("pad_batch: no sequences");
  std::vector<int> lengths;
  for (const auto& s : sequences) {
    if (s.rows() == 0) throw ValidationError("pad_batch: empty sequence");
    if (s.cols() != sequences.front().cols()) throw ValidationError("pad_batch: token width mismatch");
    lengths.push_back(static_cast<int>(s.rows()));
  }
  PaddedBatch<T> b;
  b.layout = nn::SequenceLayout::padded(lengths);
  b.tokens = Matrix<T>::Zero(b.layout.rows(), sequences.front().cols());
  for (std::size_t i = 0; i < sequences.size(); ++i)
    b.tokens.middleRows(static_cast<Eigen::Index>(i) * b.layout.length, sequences[i].rows()) = sequences[i];
  b.mask = nn::AttentionMask<T>::key_padding(b.layout);
  return b;
}

/// Valid rows of each sample of a padded (B*L x C) matrix.
template <typename T>
std::vector<Matrix<T>> unpad(const Matrix<T>& padded, const nn::SequenceLayout& layout) {
  if (padded.rows() != layout.rows()) throw ValidationError("unpad: row count does not match layout");
  std::vector<Matrix<T>> out;
  for (Eigen::Index b = 0; b < layout.batch; ++b)
    out.emplace_back(padded.middleRows(b * layout.length, layout.lengths[static_cast<std::size_t>(b)]));
  return out;
}

/// [cos(s f_0) .. cos(s f_{h-1}), sin(s f_0) .. sin(s f_{h-1})] with
/// s = t * scale and f_i = 10000^(-i/h), h = frequencies / 2.
inline Matrix<double> timestep_features(std::span<const double> t, int frequencies, double scale) {
  const int half = frequencies / 2;
  Matrix<double> out(static_cast<Eigen::Index>(t.size()), frequencies);
  for (std::size_t r = 0; r < t.size(); ++r) {
    const double s = t[r] * scale;
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / half);
      out(static_cast<Eigen::Index>(r), i) = std::cos(s * f);
      out(static_cast<Eigen::Index>(r), half + i) = std::sin(s * f);
    }
  }
  return out;
}

/// adaLN-Zero transformer block: modulated sandwich self-attention, optional
/// gated cross-attention to the condition context, modulated sandwich SwiGLU.
template <typename T>
struct DiTBlock {
  nn::RMSNorm<T> attn_pre, attn_post, ffn_pre, ffn_post, cross_pre, cross_post;
  nn::SelfAttention<T> attn;
  std::optional<nn::CrossAttention<T>> cross;
  nn::SwiGLU<T> ffn;
  nn::AdaLNModulation<T> ada;

  DiTBlock() = default;
  DiTBlock(nn::ParameterStore<T>& store, const std::string& name, const DiTConfig& c) {
    const nn::AttentionOptions ao{c.heads, c.rope, c.qk_norm};
    attn_pre = nn::RMSNorm<T>(store, name + ".attn_pre", c.hidden);
    attn_post = nn::RMSNorm<T>(store, name + ".attn_post", c.hidden);
    attn = nn::SelfAttention<T>(store, name + ".attn", c.hidden, ao);
    if (c.use_cross_attention) {
      cross_pre = nn::RMSNorm<T>(store, name + ".cross_pre", c.hidden);
      cross_post = nn::RMSNorm<T>(store, name + ".cross_post", c.hidden);
      cross.emplace(store, name + ".cross", c.hidden, c.context_dim, c.heads, c.qk_norm);
    }
    ffn_pre = nn::RMSNorm<T>(store, name + ".ffn_pre", c.hidden);
    ffn_post = nn::RMSNorm<T>(store, name + ".ffn_post", c.hidden);
    ffn = nn::SwiGLU<T>(store, name + ".ffn", c.hidden);
    ada = nn::AdaLNModulation<T>(store, name + ".ada", c.hidden, c.hidden, c.use_cross_attention ? 7 : 6);
  }

  Var<T> operator()(const Var<T>& x, const Var<T>& cond, const nn::AttentionMask<T>& mask,
                    std::span<const int> positions, const Var<T>* context,
                    const nn::AttentionMask<T>* context_mask) const {
    const Eigen::Index L = mask.queries;
    auto m = ada(cond);  // shift/scale/gate for attention, then for the FFN, then the cross gate
    Var<T> h = nn::modulate(attn_pre(x), m[0], m[1], L);
    h = attn_post(attn(h, mask, positions));
    Var<T> y = nn::add(x, nn::gate_rows(h, m[2], L));
    if (cross) {
      Var<T> c = cross_post((*cross)(cross_pre(y), *context, *context_mask));
      y = nn::add(y, nn::gate_rows(c, m[6], L));
    }
    Var<T> f = ffn_post(ffn(nn::modulate(ffn_pre(y), m[3], m[4], L)));
    return nn::add(y, nn::gate_rows(f, m[5], L));
  }
};

/// Inputs of one forward pass over a padded batch.
template <typename T>
struct DiTInput {
  const PaddedBatch<T>* batch = nullptr;
  std::vector<double> t;               // one per sample
  std::vector<ConditionBundle> conds;  // one per sample
};

/// Velocity predictor over variable-length token sequences.
template <typename T>
class DiT {
 public:
  DiT(const DiTConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
    cfg_.validate();
    in_ = nn::Linear<T>(store_, "dit.in", cfg_.latent_dim, cfg_.hidden, nn::Init::Normal,
                        1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim)));
    t_mlp1_ = nn::Linear<T>(store_, "dit.t_mlp1", cfg_.time_frequencies, cfg_.hidden);
    t_mlp2_ = nn::Linear<T>(store_, "dit.t_mlp2", cfg_.hidden, cfg_.hidden);
    face_table_ = &store_.add("dit.face_embed", cfg_.max_faces + 2, cfg_.hidden);
    if (cfg_.use_cross_attention) null_context_ = &store_.add("dit.null_context", 1, cfg_.context_dim);
    for (int i = 0; i < cfg_.layers; ++i) blocks_.emplace_back(store_, "dit.block" + std::to_string(i), cfg_);
    final_norm_ = nn::RMSNorm<T>(store_, "dit.final_norm", cfg_.hidden);
    final_ada_ = nn::AdaLNModulation<T>(store_, "dit.final_ada", cfg_.hidden, cfg_.hidden, 2);
    head_ = nn::Linear<T>(store_, "dit.head", cfg_.hidden, cfg_.latent_dim, nn::Init::Zeros);
  }
  DiT(const DiT&) = delete;
  DiT& operator=(const DiT&) = delete;

  const DiTConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }

  /// Table row of a face-count condition; validates the range.
  int face_index(const std::optional<int>& count) const {
    if (!count) return cfg_.null_face_index();
    if (*count < 1 || *count > cfg_.max_faces)
      throw ValidationError("face count " + std::to_string(*count) + " outside [1, " +
                            std::to_string(cfg_.max_faces) + "]");
    return *count;
  }

  /// B x hidden face-count embedding rows.
  Var<T> embed_face_count(Tape<T>& tape, const std::vector<std::optional<int>>& counts) const {
    std::vector<int> idx;
    for (const auto& c : counts) idx.push_back(face_index(c));
    return nn::embedding(tape.parameter(*face_table_), idx);
  }

  /// B x hidden timestep embedding.
  Var<T> embed_time(Tape<T>& tape, std::span<const double> t) const {
    for (double v : t)
      if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("embed_time: t outside [0, 1]");
    Matrix<T> f = timestep_features(t, cfg_.time_frequencies, cfg_.time_scale).template cast<T>();
    return t_mlp2_(nn::silu(t_mlp1_(tape.constant(std::move(f)))));
  }

  /// Velocity prediction (B*L x latent_dim); padded rows carry no meaning.
  Var<T> forward(Tape<T>& tape, const DiTInput<T>& in) const {
    return forward(tape.constant(in.batch->tokens), in);
  }

  /// Forward pass on an explicit token leaf (gradient checks).
  Var<T> forward(const Var<T>& tokens, const DiTInput<T>& in) const {
    Tape<T>& tape = tokens.tape();
    const auto& layout = in.batch->layout;
    if (tokens.rows() != layout.rows() || tokens.cols() != cfg_.latent_dim)
      throw ValidationError("dit forward: token shape does not match the batch layout");
    if (in.t.size() != static_cast<std::size_t>(layout.batch) || in.conds.size() != in.t.size())
      throw ValidationError("dit forward: need one time and one condition per sample");
    std::vector<std::optional<int>> counts;
    for (const auto& c : in.conds) counts.push_back(c.face_count);
    Var<T> cond = nn::add(embed_time(tape, in.t), embed_face_count(tape, counts));

    std::optional<Var<T>> context;
    std::optional<nn::AttentionMask<T>> cmask;
    if (cfg_.use_cross_attention) {
      context = build_context(tape, in.conds);
      cmask = nn::AttentionMask<T>::none(layout.batch, layout.length, cfg_.context_tokens);
    }
    const auto positions = layout.positions();
    Var<T> x = in_(tokens);
    for (const auto& blk : blocks_)
      x = blk(x, cond, in.batch->mask, positions, context ? &*context : nullptr, cmask ? &*cmask : nullptr);
    auto fm = final_ada_(cond);
    x = nn::modulate(final_norm_(x), fm[0], fm[1], layout.length);
    Var<T> out = head_(x);
    if (!out.value().allFinite()) throw NumericError("dit forward: non-finite output");
    return out;
  }

 private:
  /// (B * context_tokens) x context_dim; null contexts repeat the learned null vector.
  Var<T> build_context(Tape<T>& tape, const std::vector<ConditionBundle>& conds) const {
    const Eigen::Index K = cfg_.context_tokens;
    Matrix<T> given = Matrix<T>::Zero(static_cast<Eigen::Index>(conds.size()) * K, cfg_.context_dim);
    Matrix<T> is_null = Matrix<T>::Zero(given.rows(), given.cols());
    for (std::size_t b = 0; b < conds.size(); ++b) {
      const auto r0 = static_cast<Eigen::Index>(b) * K;
      if (conds[b].context) {
        const auto& c = *conds[b].context;
        if (c.rows() != K || c.cols() != cfg_.context_dim)
          throw ValidationError("dit forward: context must be " + std::to_string(K) + " x " +
                                std::to_string(cfg_.context_dim));
        given.middleRows(r0, K) = c.template cast<T>();
      } else {
        is_null.middleRows(r0, K).setOnes();
      }
    }
    Var<T> null_rows = nn::repeat_rows(tape.parameter(*null_context_), given.rows());
    return nn::add_constant(nn::mul_constant(null_rows, is_null), given);
  }

  DiTConfig cfg_;
  nn::ParameterStore<T> store_;
  nn::Linear<T> in_, t_mlp1_, t_mlp2_;
  nn::Parameter<T>* face_table_ = nullptr;
  nn::Parameter<T>* null_context_ = nullptr;
  std::vector<DiTBlock<T>> blocks_;
  nn::RMSNorm<T> final_norm_;
  nn::AdaLNModulation<T> final_ada_;
  nn::Linear<T> head_;
};

}  // namespace meshflow::dit
