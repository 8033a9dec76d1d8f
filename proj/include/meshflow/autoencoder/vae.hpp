#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "meshflow/config.hpp"
#include "meshflow/geometry/adjacency.hpp"
#include "meshflow/geometry/attributes.hpp"
#include "meshflow/geometry/canonical.hpp"
#include "meshflow/nn/layers.hpp"

namespace meshflow::autoencoder {

using nn::Matrix;
using nn::Tape;
using nn::Var;
using FaceBins = std::array<int, 9>;

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

struct VAEConfig {
  int resolution = 128;
  int encoder_layers = 4;
  int encoder_hidden = 192;
  int decoder_layers = 4;
  int decoder_hidden = 192;
  int latent_dim = 8;
  int heads = 4;
  bool rope = true;
  bool qk_norm = true;

  void validate() const {
    if (resolution < 2) throw ValidationError("vae: resolution must be >= 2");
    if (encoder_layers < 0 || decoder_layers < 0) throw ValidationError("vae: layer counts must be >= 0");
    if (latent_dim < 1) throw ValidationError("vae: latent_dim must be >= 1");
    if (heads < 1 || encoder_hidden % heads || decoder_hidden % heads)
      throw ValidationError("vae: hidden sizes must be divisible by heads");
    if (rope && ((encoder_hidden / heads) % 2 || (decoder_hidden / heads) % 2))
      throw ValidationError("vae: head dimension must be even for rotary embeddings");
  }

  void write(KeyValues& kv, const std::string& prefix = "vae.") const {
    kv.set(prefix + "resolution", resolution);
    kv.set(prefix + "encoder_layers", encoder_layers);
    kv.set(prefix + "encoder_hidden", encoder_hidden);
    kv.set(prefix + "decoder_layers", decoder_layers);
    kv.set(prefix + "decoder_hidden", decoder_hidden);
    kv.set(prefix + "latent_dim", latent_dim);
    kv.set(prefix + "heads", heads);
    kv.set(prefix + "rope", rope);
    kv.set(prefix + "qk_norm", qk_norm);
  }

  static VAEConfig read(const KeyValues& kv, const std::string& prefix = "vae.") {
    VAEConfig c;
    c.resolution = static_cast<int>(kv.get_int(prefix + "resolution"));
    c.encoder_layers = static_cast<int>(kv.get_int(prefix + "encoder_layers"));
    c.encoder_hidden = static_cast<int>(kv.get_int(prefix + "encoder_hidden"));
    c.decoder_layers = static_cast<int>(kv.get_int(prefix + "decoder_layers"));
    c.decoder_hidden = static_cast<int>(kv.get_int(prefix + "decoder_hidden"));
    c.latent_dim = static_cast<int>(kv.get_int(prefix + "latent_dim"));
    c.heads = static_cast<int>(kv.get_int(prefix + "heads"));
    c.rope = kv.get_bool(prefix + "rope");
    c.qk_norm = kv.get_bool(prefix + "qk_norm");
    c.validate();
    return c;
  }
};

/// Everything the encoder needs from one canonical mesh.
struct MeshSample {
  geometry::CanonicalMesh mesh;
  Matrix<double> features;  // n x 16
  std::vector<std::vector<std::uint32_t>> neighbors;
  std::vector<int> targets;  // n x 9 bins, row-major

  std::size_t faces() const { return mesh.faces.size(); }

  static MeshSample from(const geometry::CanonicalMesh& cm) {
    MeshSample s;
    s.mesh = cm;
    const auto feats = geometry::face_features(cm);
    const Eigen::Index n = static_cast<Eigen::Index>(cm.faces.size());
    if (n == 0) throw ValidationError("encode: mesh has no faces");
    s.features.resize(n, geometry::kFaceFeatureDim);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < geometry::kFaceFeatureDim; ++j) s.features(i, j) = feats[static_cast<std::size_t>(i)][j];
    s.neighbors = geometry::build_adjacency(cm).neighbors;
    s.targets.reserve(static_cast<std::size_t>(n) * 9);
    for (std::size_t i = 0; i < cm.faces.size(); ++i)
      for (int b : cm.face_bins(i)) s.targets.push_back(b);
    return s;
  }
};

/// A padded batch of meshes laid out as batch*length rows.
template <typename T>
struct VAEBatch {
  nn::SequenceLayout layout;
  Matrix<T> features;
  nn::GraphOperator<T> graph;
  nn::AttentionMask<T> mask;
  std::vector<int> positions;
  std::vector<unsigned char> valid;
  std::vector<int> targets;  // rows x 9; padded rows hold 0

  static VAEBatch make(std::span<const MeshSample* const> samples) {
    if (samples.empty()) throw ValidationError("vae batch: no samples");
    std::vector<int> lengths;
    for (const auto* s : samples) lengths.push_back(static_cast<int>(s->faces()));
    VAEBatch b;
    b.layout = nn::SequenceLayout::padded(lengths);
    const Eigen::Index L = b.layout.length;
    b.features = Matrix<T>::Zero(b.layout.rows(), geometry::kFaceFeatureDim);
    b.targets.assign(static_cast<std::size_t>(b.layout.rows()) * 9, 0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = *samples[i];
      const Eigen::Index off = static_cast<Eigen::Index>(i) * L;
      b.features.middleRows(off, s.features.rows()) = s.features.template cast<T>();
      b.graph.append(s.neighbors, off);
      std::copy(s.targets.begin(), s.targets.end(), b.targets.begin() + off * 9);
    }
    b.graph.resize(b.layout.rows());
    b.mask = nn::AttentionMask<T>::key_padding(b.layout);
    b.positions = b.layout.positions();
    b.valid = b.layout.row_valid();
    return b;
  }

  static VAEBatch single(const MeshSample& s) {
    const MeshSample* p = &s;
    return make(std::span<const MeshSample* const>(&p, 1));
  }
};

template <typename T>
struct Encoded {
  Var<T> mu;
  Var<T> logvar;
};

/// Face-token autoencoder: 16 face features -> linear -> one GCN layer ->
/// transformer blocks -> (mu, logvar); tokens -> transformer blocks -> MLP
/// -> 9 x R bin logits per face.
template <typename T>
class VAE {
 public:
  VAE(const VAEConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
    cfg_.validate();
    const nn::AttentionOptions ao{cfg_.heads, cfg_.rope, cfg_.qk_norm};
    // Input and latent projections use fan-in scaling so the token signal is
    // on the same scale as the unit-RMS sublayer outputs of the sandwich blocks.
    in_proj_ = nn::Linear<T>(store_, "enc.in", geometry::kFaceFeatureDim, cfg_.encoder_hidden, nn::Init::Normal,
                             fan_in_std(geometry::kFaceFeatureDim));
    gcn_ = nn::GCNLayer<T>(store_, "enc.gcn", cfg_.encoder_hidden, cfg_.encoder_hidden);
    for (int i = 0; i < cfg_.encoder_layers; ++i)
      enc_.emplace_back(store_, "enc.block" + std::to_string(i), cfg_.encoder_hidden, ao);
    enc_norm_ = nn::RMSNorm<T>(store_, "enc.out_norm", cfg_.encoder_hidden);
    fc_mu_ = nn::Linear<T>(store_, "enc.fc_mu", cfg_.encoder_hidden, cfg_.latent_dim, nn::Init::Normal,
                           fan_in_std(cfg_.encoder_hidden));
    fc_logvar_ = nn::Linear<T>(store_, "enc.fc_logvar", cfg_.encoder_hidden, cfg_.latent_dim);
    dec_in_ = nn::Linear<T>(store_, "dec.in", cfg_.latent_dim, cfg_.decoder_hidden, nn::Init::Normal,
                            fan_in_std(cfg_.latent_dim));
    for (int i = 0; i < cfg_.decoder_layers; ++i)
      dec_.emplace_back(store_, "dec.block" + std::to_string(i), cfg_.decoder_hidden, ao);
    dec_norm_ = nn::RMSNorm<T>(store_, "dec.out_norm", cfg_.decoder_hidden);
    head1_ = nn::Linear<T>(store_, "dec.mlp1", cfg_.decoder_hidden, cfg_.decoder_hidden);
    head2_ = nn::Linear<T>(store_, "dec.mlp2", cfg_.decoder_hidden, 9 * cfg_.resolution);
  }
  VAE(const VAE&) = delete;
  VAE& operator=(const VAE&) = delete;

  const VAEConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }

  Encoded<T> encode(Tape<T>& tape, const VAEBatch<T>& b) const {
    return encode(tape.constant(b.features), b);
  }

  /// Encoder on an explicit feature leaf (used by gradient checks).
  Encoded<T> encode(const Var<T>& features, const VAEBatch<T>& b) const {
    Var<T> x = gcn_(in_proj_(features), b.graph);
    for (const auto& blk : enc_) x = blk(x, b.mask, b.positions);
    x = enc_norm_(x);
    return {fc_mu_(x), nn::clamp(fc_logvar_(x), T(kLogvarMin), T(kLogvarMax))};
  }

  /// Bin logits, rows x (9 * resolution); slot j occupies columns [j*R, (j+1)*R).
  Var<T> decode(const Var<T>& tokens, const nn::AttentionMask<T>& mask, std::span<const int> positions) const {
    if (tokens.cols() != cfg_.latent_dim) throw ValidationError("decode: token width != latent_dim");
    Var<T> x = dec_in_(tokens);
    for (const auto& blk : dec_) x = blk(x, mask, positions);
    return head2_(nn::silu(head1_(dec_norm_(x))));
  }

 private:
  static double fan_in_std(int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

  VAEConfig cfg_;
  nn::ParameterStore<T> store_;
  nn::Linear<T> in_proj_;
  nn::GCNLayer<T> gcn_;
  std::vector<nn::TransformerBlock<T>> enc_;
  nn::RMSNorm<T> enc_norm_;
  nn::Linear<T> fc_mu_, fc_logvar_;
  nn::Linear<T> dec_in_;
  std::vector<nn::TransformerBlock<T>> dec_;
  nn::RMSNorm<T> dec_norm_;
  nn::Linear<T> head1_, head2_;
};

struct LatentSequence {
  Matrix<double> mu, logvar, noise, sample;
};

/// sample = mu + exp(logvar / 2) * eps with eps drawn from `seed`;
/// `use_mean` returns mu (inference mode).
inline LatentSequence reparameterize(const Matrix<double>& mu, const Matrix<double>& logvar, std::uint64_t seed,
                                     bool use_mean = false) {
  if (mu.rows() != logvar.rows() || mu.cols() != logvar.cols())
    throw ValidationError("reparameterize: shape mismatch");
  LatentSequence s{mu, logvar.cwiseMax(kLogvarMin).cwiseMin(kLogvarMax), Matrix<double>::Zero(mu.rows(), mu.cols()), mu};
  if (use_mean) return s;
  auto rng = make_rng(seed, "reparam");
  for (Eigen::Index i = 0; i < mu.size(); ++i) s.noise.data()[i] = standard_normal(rng);
  s.sample = mu.array() + (s.logvar.array() * 0.5).exp() * s.noise.array();
  return s;
}

/// Differentiable reparameterization with fixed noise.
template <typename T>
Var<T> reparameterize(const Encoded<T>& e, const Matrix<T>& noise) {
  Tape<T>& t = e.mu.tape();
  return nn::add(e.mu, nn::mul(nn::exp(nn::scale(e.logvar, T(0.5))), t.constant(noise)));
}

/// Mean over n * C of 1/2 (mu^2 + sigma^2 - log sigma^2).
template <typename T>
Var<T> kl_loss(const Var<T>& mu, const Var<T>& logvar, std::span<const unsigned char> valid) {
  return nn::kl_regularizer(mu, logvar, valid);
}

inline double kl_loss(const Matrix<double>& mu, const Matrix<double>& logvar) {
  Tape<double> t(false);
  std::vector<unsigned char> valid(static_cast<std::size_t>(mu.rows()), 1);
  return kl_loss(t.constant(mu), t.constant(logvar), valid).scalar();
}

/// Mean cross-entropy over all valid n * 9 coordinate slots.
template <typename T>
Var<T> reconstruction_loss(const Var<T>& logits, std::span<const int> targets, std::span<const unsigned char> valid) {
  return nn::grouped_cross_entropy(logits, targets, 9, valid);
}

inline double reconstruction_loss(const Matrix<double>& logits, const geometry::CanonicalMesh& target) {
  Tape<double> t(false);
  std::vector<int> tg;
  for (std::size_t i = 0; i < target.faces.size(); ++i)
    for (int b : target.face_bins(i)) tg.push_back(b);
  std::vector<unsigned char> valid(static_cast<std::size_t>(logits.rows()), 1);
  return reconstruction_loss(t.constant(logits), tg, valid).scalar();
}

/// Per-slot argmax of rows [first, first + count) of a logit matrix.
template <typename T>
std::vector<FaceBins> argmax_bins(const Matrix<T>& logits, int resolution, Eigen::Index first, Eigen::Index count) {
  std::vector<FaceBins> out(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i)
    for (int j = 0; j < 9; ++j) {
      Eigen::Index best = 0;
      logits.row(first + i).segment(j * resolution, resolution).maxCoeff(&best);
      out[static_cast<std::size_t>(i)][j] = static_cast<int>(best);
    }
  return out;
}

struct ReconMetrics {
  double triangle_accuracy = 0.0;
  double l2_distance = 0.0;
};

/// Triangle accuracy: fraction of faces whose 9 bins all match.
/// L2: mean over face-vertex slots of the distance between dequantized
/// predicted and ground-truth positions.
inline ReconMetrics recon_metrics(std::span<const FaceBins> pred, std::span<const FaceBins> gt, int resolution) {
  if (pred.size() != gt.size()) throw ValidationError("recon_metrics: face count mismatch");
  if (pred.empty()) throw ValidationError("recon_metrics: no faces");
  std::size_t exact = 0;
  double dist = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    exact += pred[i] == gt[i];
    for (int v = 0; v < 3; ++v) {
      double sq = 0.0;
      for (int a = 0; a < 3; ++a) {
        const double d = geometry::dequantize_coord(pred[i][3 * v + a], resolution) -
                         geometry::dequantize_coord(gt[i][3 * v + a], resolution);
        sq += d * d;
      }
      dist += std::sqrt(sq);
    }
  }
  return {static_cast<double>(exact) / static_cast<double>(pred.size()),
          dist / static_cast<double>(3 * pred.size())};
}

inline std::vector<FaceBins> all_face_bins(const geometry::CanonicalMesh& cm) {
  std::vector<FaceBins> out;
  out.reserve(cm.faces.size());
  for (std::size_t i = 0; i < cm.faces.size(); ++i) out.push_back(cm.face_bins(i));
  return out;
}

inline ReconMetrics recon_metrics(const geometry::CanonicalMesh& pred, const geometry::CanonicalMesh& gt) {
  if (pred.resolution != gt.resolution) throw ValidationError("recon_metrics: resolution mismatch");
  const auto p = all_face_bins(pred), g = all_face_bins(gt);
  return recon_metrics(p, g, gt.resolution);
}

/// Decoding produced no usable faces; the raw per-face bins are attached.
class ReconstructionError : public Error {
 public:
  ReconstructionError(const std::string& what, std::vector<FaceBins> partial)
      : Error(what, 3), partial_(std::move(partial)) {}
  const std::vector<FaceBins>& partial() const { return partial_; }

 private:
  std::vector<FaceBins> partial_;
};

struct DecodedMesh {
  std::vector<FaceBins> face_bins;      // one per token, in token order
  geometry::CanonicalMesh mesh;         // canonicalized; may drop faces
  geometry::CanonicalizeReport report;  // what canonicalization dropped
};

/// Argmax bins of one sequence, canonicalized.
inline DecodedMesh to_decoded_mesh(std::vector<FaceBins> bins, int resolution) {
  DecodedMesh d;
  d.face_bins = std::move(bins);
  try {
    d.mesh = geometry::canonicalize_face_bins(d.face_bins, resolution, &d.report);
  } catch (const DegenerateInputError&) {
    throw ReconstructionError("decoded mesh is fully degenerate", d.face_bins);
  }
  return d;
}

/// Decodes a single token sequence (n x latent_dim) without padding.
template <typename T>
DecodedMesh decode_tokens(const VAE<T>& vae, const Matrix<T>& tokens) {
  Tape<T> tape(false);
  const auto layout = nn::SequenceLayout::single(static_cast<int>(tokens.rows()));
  const auto mask = nn::AttentionMask<T>::none(1, tokens.rows(), tokens.rows());
  const auto pos = layout.positions();
  Var<T> logits = vae.decode(tape.constant(tokens), mask, pos);
  return to_decoded_mesh(argmax_bins(logits.value(), vae.config().resolution, 0, tokens.rows()),
                         vae.config().resolution);
}

/// Decodes several sequences of possibly different lengths as one padded batch.
template <typename T>
std::vector<std::vector<FaceBins>> decode_batch_bins(const VAE<T>& vae, const std::vector<Matrix<T>>& sequences) {
  std::vector<int> lengths;
  for (const auto& s : sequences) lengths.push_back(static_cast<int>(s.rows()));
  const auto layout = nn::SequenceLayout::padded(lengths);
  Matrix<T> tokens = Matrix<T>::Zero(layout.rows(), vae.config().latent_dim);
  for (std::size_t i = 0; i < sequences.size(); ++i)
    tokens.middleRows(static_cast<Eigen::Index>(i) * layout.length, sequences[i].rows()) = sequences[i];
  Tape<T> tape(false);
  const auto mask = nn::AttentionMask<T>::key_padding(layout);
  const auto pos = layout.positions();
  Var<T> logits = vae.decode(tape.constant(tokens), mask, pos);
  std::vector<std::vector<FaceBins>> out;
  for (std::size_t i = 0; i < sequences.size(); ++i)
    out.push_back(argmax_bins(logits.value(), vae.config().resolution, static_cast<Eigen::Index>(i) * layout.length,
                              sequences[i].rows()));
  return out;
}

/// Posterior statistics of one mesh as double matrices.
template <typename T>
LatentSequence encode_mesh(const VAE<T>& vae, const MeshSample& s) {
  Tape<T> tape(false);
  auto b = VAEBatch<T>::single(s);
  auto e = vae.encode(tape, b);
  return {e.mu.value().template cast<double>(), e.logvar.value().template cast<double>(), {}, {}};
}

enum class TokenMode { Mean, Sample };

struct Reconstruction {
  LatentSequence latents;
  DecodedMesh decoded;
  ReconMetrics metrics;  // against the input, in token order
};

/// encode -> (mu or sampled token) -> decode -> argmax -> canonical mesh.
template <typename T>
Reconstruction reconstruct(const VAE<T>& vae, const MeshSample& s, TokenMode mode = TokenMode::Mean,
                           std::uint64_t seed = 0) {
  if (s.mesh.resolution != vae.config().resolution) throw ValidationError("reconstruct: resolution mismatch");
  Reconstruction r;
  auto stats = encode_mesh(vae, s);
  r.latents = reparameterize(stats.mu, stats.logvar, seed, mode == TokenMode::Mean);
  Tape<T> tape(false);
  auto b = VAEBatch<T>::single(s);
  Var<T> logits = vae.decode(tape.constant(r.latents.sample.cast<T>()), b.mask, b.positions);
  auto bins = argmax_bins(logits.value(), vae.config().resolution, 0, static_cast<Eigen::Index>(s.faces()));
  const auto gt = all_face_bins(s.mesh);
  r.metrics = recon_metrics(bins, gt, s.mesh.resolution);
  r.decoded = to_decoded_mesh(std::move(bins), vae.config().resolution);
  return r;
}

/// Mean triangle accuracy and L2 over a dataset, decoding batches of `batch`
/// meshes from mu.
template <typename T>
ReconMetrics evaluate_reconstruction(const VAE<T>& vae, std::span<const MeshSample> data, std::size_t batch = 16) {
  std::size_t faces = 0;
  double exact = 0.0, l2 = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    std::vector<const MeshSample*> ptrs;
    for (std::size_t i = start; i < std::min(data.size(), start + batch); ++i) ptrs.push_back(&data[i]);
    auto b = VAEBatch<T>::make(ptrs);
    Tape<T> tape(false);
    auto e = vae.encode(tape, b);
    Var<T> logits = vae.decode(e.mu, b.mask, b.positions);
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      const Eigen::Index n = static_cast<Eigen::Index>(ptrs[i]->faces());
      auto bins = argmax_bins(logits.value(), vae.config().resolution, static_cast<Eigen::Index>(i) * b.layout.length, n);
      auto m = recon_metrics(bins, all_face_bins(ptrs[i]->mesh), vae.config().resolution);
      exact += m.triangle_accuracy * static_cast<double>(n);
      l2 += m.l2_distance * static_cast<double>(n);
      faces += static_cast<std::size_t>(n);
    }
  }
  if (faces == 0) throw ValidationError("evaluate_reconstruction: empty dataset");
  return {exact / static_cast<double>(faces), l2 / static_cast<double>(faces)};
}

}  // namespace meshflow::autoencoder
