#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>

#include "meshflow/autoencoder/vae.hpp"
#include "meshflow/geometry/augment.hpp"
#include "meshflow/nn/checkpoint.hpp"
#include "meshflow/nn/optim.hpp"

namespace meshflow::autoencoder {

struct VAETrainConfig {
  std::size_t steps = 10000;
  std::size_t batch_size = 8;
  double lambda_kl = 1e-4;
  bool sample_tokens = true;  // decode reparameterized samples (false: mu)
  bool augment = false;
  geometry::AugmentOptions augment_options{};
  std::size_t log_every = 100;
  std::size_t eval_every = 0;    // 0 disables periodic evaluation
  double stop_accuracy = 0.0;    // stop once training accuracy reaches this (0 disables)
  double stop_l2 = 0.0;          // ... and L2 is at most this, when stopping on accuracy
  std::size_t checkpoint_every = 0;
  nn::AdamWConfig optim{};
};

struct VAETrainLog {
  std::size_t step = 0;
  double loss = 0.0, ce = 0.0, kl = 0.0;
  double lr = 0.0, grad_norm = 0.0;
  double faces_per_second = 0.0;
};

struct VAEEvalLog {
  std::size_t step = 0;
  ReconMetrics metrics;
};

struct VAETrainHooks {
  std::function<void(const VAETrainLog&)> on_step;
  std::function<void(const VAETrainLog&)> on_log;
  std::function<void(const VAEEvalLog&)> on_eval;
  std::function<void(std::size_t next_step)> on_checkpoint;
};

struct VAETrainResult {
  std::size_t next_step = 0;  // first step not yet run
  VAETrainLog last;
  std::vector<double> losses;  // per step, in order
  bool stopped_early = false;
  ReconMetrics final_metrics;
};

/// Indices of the meshes used at `step`; depends only on (seed, step).
inline std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch, std::uint64_t seed,
                                              std::size_t step, std::string_view stream) {
  std::vector<std::size_t> idx(dataset_size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto rng = make_rng(seed, stream, step);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(batch, dataset_size));
  return idx;
}

/// Training noise for step `step`, drawn from the "reparam" stream.
template <typename T>
Matrix<T> reparam_noise(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, std::size_t step) {
  auto rng = make_rng(seed, "reparam", step);
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(standard_normal(rng));
  return m;
}

/// Minimizes cross-entropy + lambda_kl * KL from `start_step` up to
/// cfg.steps. Everything random is keyed by (seed, step), so a run resumed
/// from a checkpoint continues exactly as the uninterrupted run would.
template <typename T>
VAETrainResult train_vae(VAE<T>& vae, nn::AdamW<T>& opt, std::span<const MeshSample> data,
                         const VAETrainConfig& cfg, std::uint64_t seed, std::size_t start_step = 0,
                         const VAETrainHooks& hooks = {}) {
  if (data.empty()) throw ValidationError("train_vae: dataset is empty");
  if (cfg.batch_size == 0) throw ValidationError("train_vae: batch_size must be >= 1");
  auto& store = vae.parameters();
  VAETrainResult res;
  res.next_step = start_step;
  const int R = vae.config().resolution;
  auto t0 = std::chrono::steady_clock::now();
  std::size_t faces_since = 0;

  for (std::size_t step = start_step; step < cfg.steps; ++step) {
    const auto idx = batch_indices(data.size(), cfg.batch_size, seed, step, "vae.batch");
    std::vector<MeshSample> augmented;
    std::vector<const MeshSample*> ptrs;
    if (cfg.augment) {
      augmented.reserve(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& s = data[idx[k]];
        auto m = geometry::augment(geometry::dequantize(s.mesh), derive_seed(seed, "augment", step * 4096 + k),
                                   cfg.augment_options);
        augmented.push_back(MeshSample::from(geometry::canonicalize(m, R)));
      }
      for (const auto& a : augmented) ptrs.push_back(&a);
    } else {
      for (auto i : idx) ptrs.push_back(&data[i]);
    }
    auto batch = VAEBatch<T>::make(ptrs);

    store.zero_grad();
    Tape<T> tape;
    auto enc = vae.encode(tape, batch);
    Var<T> tokens = enc.mu;
    if (cfg.sample_tokens) {
      auto noise = reparam_noise<T>(batch.layout.rows(), vae.config().latent_dim, seed, step);
      tokens = reparameterize(enc, noise);
    }
    Var<T> logits = vae.decode(tokens, batch.mask, batch.positions);
    Var<T> ce = reconstruction_loss(logits, batch.targets, batch.valid);
    Var<T> kl = kl_loss(enc.mu, enc.logvar, batch.valid);
    Var<T> loss = nn::add(ce, nn::scale(kl, static_cast<T>(cfg.lambda_kl)));
    if (!std::isfinite(static_cast<double>(loss.scalar())))
      throw NumericError("train_vae: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    const auto info = opt.step(store, step);

    for (auto* p : ptrs) faces_since += p->faces();
    res.losses.push_back(static_cast<double>(loss.scalar()));
    res.last = {step, static_cast<double>(loss.scalar()), static_cast<double>(ce.scalar()),
                static_cast<double>(kl.scalar()), info.lr, info.grad_norm, 0.0};
    res.next_step = step + 1;
    if (hooks.on_step) hooks.on_step(res.last);

    if (cfg.log_every && (step + 1) % cfg.log_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.last.faces_per_second = secs > 0 ? static_cast<double>(faces_since) / secs : 0.0;
      t0 = std::chrono::steady_clock::now();
      faces_since = 0;
      if (hooks.on_log) hooks.on_log(res.last);
    }
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(step + 1);
    if (cfg.eval_every && (step + 1) % cfg.eval_every == 0) {
      res.final_metrics = evaluate_reconstruction(vae, data);
      if (hooks.on_eval) hooks.on_eval({step + 1, res.final_metrics});
      if (cfg.stop_accuracy > 0.0 && res.final_metrics.triangle_accuracy >= cfg.stop_accuracy &&
          (cfg.stop_l2 <= 0.0 || res.final_metrics.l2_distance <= cfg.stop_l2)) {
        res.stopped_early = true;
        break;
      }
    }
  }
  return res;
}

}  // namespace meshflow::autoencoder
