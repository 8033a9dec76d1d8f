#pragma once

#include "meshflow/autoencoder/vae.hpp"
#include "meshflow/dit/model.hpp"
#include "meshflow/flow/flow.hpp"

namespace meshflow::dit {

/// Decoding a generated sequence failed; the raw tokens are attached.
class GenerationError : public Error {
 public:
  GenerationError(const std::string& what, Matrix<double> tokens) : Error(what, 3), tokens_(std::move(tokens)) {}
  const Matrix<double>& tokens() const { return tokens_; }

 private:
  Matrix<double> tokens_;
};

/// Conditions seen by a guidance branch.
inline ConditionBundle branch_condition(const ConditionBundle& full, flow::Branch branch) {
  switch (branch) {
    case flow::Branch::Unconditional: return {};
    case flow::Branch::FaceOnly: return {full.face_count, std::nullopt};
    case flow::Branch::Full: return full;
  }
  return full;
}

/// Velocity field over a padded batch with per-sample conditions. Padded rows
/// of the returned velocity are zero so padding stays inert.
template <typename T>
flow::VelocityFn<T> batch_velocity(const DiT<T>& model, const PaddedBatch<T>& shape,
                                   const std::vector<ConditionBundle>& conds) {
  return [&model, &shape, conds](const Matrix<T>& z, double t, flow::Branch branch) {
    PaddedBatch<T> b{shape.layout, z, shape.mask};
    DiTInput<T> in{&b, std::vector<double>(conds.size(), t), {}};
    for (const auto& c : conds) in.conds.push_back(branch_condition(c, branch));
    Tape<T> tape(false);
    Matrix<T> v = model.forward(tape, in).value();
    for (Eigen::Index s = 0; s < shape.layout.batch; ++s) {
      const int len = shape.layout.lengths[static_cast<std::size_t>(s)];
      v.middleRows(s * shape.layout.length + len, shape.layout.length - len).setZero();
    }
    return v;
  };
}

struct GenerationRequest {
  ConditionBundle cond;  // cond.face_count sets the sequence length
  std::uint64_t seed = 0;
};

struct Generation {
  Matrix<double> tokens;  // face_count x latent_dim, autoencoder scale
  autoencoder::DecodedMesh decoded;
  std::size_t evaluations = 0;
  std::vector<flow::TraceRecord> trace;
};

/// Tokens and decoded meshes for several requests sampled as one padded
/// batch. Each request draws its own z0 from its seed, so results match
/// unbatched generation up to padding round-off.
template <typename T>
std::vector<Generation> generate_batch(const DiT<T>& model, const autoencoder::VAE<T>& vae,
                                       const std::vector<GenerationRequest>& requests, const flow::CFGWeights& cfg,
                                       int steps, bool trace = false) {
  const auto& mc = model.config();
  if (requests.empty()) throw ValidationError("generate: no requests");
  if (vae.config().latent_dim != mc.latent_dim) throw ValidationError("generate: autoencoder/DiT latent width mismatch");
  std::vector<Matrix<T>> z0;
  std::vector<ConditionBundle> conds;
  for (const auto& r : requests) {
    if (!r.cond.face_count) throw ValidationError("generate: a face count is required");
    model.face_index(r.cond.face_count);
    if (cfg.mode == flow::GuidanceMode::Dual && !mc.use_cross_attention)
      throw ValidationError("generate: dual guidance needs a cross-attention model");
    z0.push_back(flow::standard_normal_matrix<T>(*r.cond.face_count, mc.latent_dim, r.seed));
    conds.push_back(r.cond);
  }
  const auto shape = pad_batch(z0);
  auto res = flow::euler_integrate(batch_velocity(model, shape, conds), shape.tokens, steps, cfg, trace);
  const auto parts = unpad(res.z, shape.layout);

  std::vector<Matrix<T>> scaled;
  for (const auto& p : parts) scaled.push_back(p / static_cast<T>(mc.latent_scale));
  const auto bins = autoencoder::decode_batch_bins(vae, scaled);
  std::vector<Generation> out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    Generation g;
    g.tokens = scaled[i].template cast<double>();
    g.evaluations = res.evaluations;
    g.trace = res.trace;
    try {
      g.decoded = autoencoder::to_decoded_mesh(bins[i], vae.config().resolution);
    } catch (const autoencoder::ReconstructionError& e) {
      throw GenerationError(std::string("generate: ") + e.what(), g.tokens);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// One sample at its exact length (no padding).
template <typename T>
Generation generate(const DiT<T>& model, const autoencoder::VAE<T>& vae, const ConditionBundle& cond,
                    const flow::CFGWeights& cfg, int steps, std::uint64_t seed, bool trace = false) {
  return std::move(generate_batch(model, vae, {{cond, seed}}, cfg, steps, trace).front());
}

struct Completion {
  Matrix<double> flow_tokens;  // final state in flow scale; known rows equal known_tokens exactly
  Matrix<double> known_tokens;
  std::vector<unsigned char> known_rows;
  Matrix<double> tokens;  // autoencoder scale
  autoencoder::DecodedMesh decoded;
};

/// Completes `partial` to `total_faces` faces: its encoded faces become the
/// known prefix and the rest are generated with repaint-style sampling.
template <typename T>
Completion complete(const DiT<T>& model, const autoencoder::VAE<T>& vae, const geometry::CanonicalMesh& partial,
                    int total_faces, ConditionBundle cond, const flow::CFGWeights& cfg, int steps, std::uint64_t seed) {
  const auto& mc = model.config();
  const int known = static_cast<int>(partial.faces.size());
  if (known < 1) throw ValidationError("complete: the partial mesh has no faces");
  if (total_faces <= known)
    throw ValidationError("complete: total_faces (" + std::to_string(total_faces) +
                          ") must exceed the partial face count (" + std::to_string(known) + ")");
  cond.face_count = total_faces;
  model.face_index(cond.face_count);
  if (cfg.mode == flow::GuidanceMode::Dual && !mc.use_cross_attention)
    throw ValidationError("complete: dual guidance needs a cross-attention model");

  const auto stats = autoencoder::encode_mesh(vae, autoencoder::MeshSample::from(partial));
  Matrix<T> known_tokens = Matrix<T>::Zero(total_faces, mc.latent_dim);
  known_tokens.topRows(known) = (stats.mu * mc.latent_scale).template cast<T>();
  std::vector<unsigned char> rows(static_cast<std::size_t>(total_faces), 0);
  std::fill(rows.begin(), rows.begin() + known, 1);

  const auto shape = pad_batch(std::vector<Matrix<T>>{known_tokens});
  auto res = flow::repaint_complete(batch_velocity(model, shape, {cond}), known_tokens, rows, steps, cfg, seed);

  Completion c;
  c.flow_tokens = res.z.template cast<double>();
  c.known_tokens = known_tokens.template cast<double>();
  c.known_rows = rows;
  Matrix<T> scaled = res.z / static_cast<T>(mc.latent_scale);
  c.tokens = scaled.template cast<double>();
  try {
    c.decoded = autoencoder::decode_tokens(vae, scaled);
  } catch (const autoencoder::ReconstructionError& e) {
    throw GenerationError(std::string("complete: ") + e.what(), c.tokens);
  }
  return c;
}

}  // namespace meshflow::dit
