#pragma once

#include <chrono>
#include <functional>

#include "meshflow/autoencoder/latents.hpp"
#include "meshflow/autoencoder/train.hpp"
#include "meshflow/dit/model.hpp"
#include "meshflow/flow/flow.hpp"
#include "meshflow/nn/optim.hpp"

namespace meshflow::dit {

struct DiTTrainConfig {
  std::size_t steps = 5000;
  std::size_t batch_size = 8;
  double condition_dropout = 0.1;  // per condition, independently
  flow::TimeSampler sampler{};
  bool sample_latents = true;  // x1 = mu + sigma * eps (false: x1 = mu)
  std::size_t log_every = 100;
  std::size_t checkpoint_every = 0;
  nn::AdamWConfig optim{};
};

struct DiTTrainLog {
  std::size_t step = 0;
  double loss = 0.0, lr = 0.0, grad_norm = 0.0;
  double tokens_per_second = 0.0;
};

struct DiTTrainHooks {
  std::function<void(const DiTTrainLog&)> on_step;
  std::function<void(const DiTTrainLog&)> on_log;
  std::function<void(std::size_t next_step)> on_checkpoint;
};

struct DiTTrainResult {
  std::size_t next_step = 0;
  DiTTrainLog last;
  std::vector<double> losses;
};

struct DropDecision {
  bool face_count = false;
  bool context = false;
};

/// Condition dropout for the `batch` samples of `step`.
inline std::vector<DropDecision> dropout_draws(std::uint64_t seed, std::size_t step, std::size_t batch, double p) {
  auto rng = make_rng(seed, "dropout", step);
  std::vector<DropDecision> out(batch);
  for (auto& d : out) {
    d.face_count = uniform01(rng) < p;
    d.context = uniform01(rng) < p;
  }
  return out;
}

/// Flow-matching training on encoded latents. All randomness is keyed by
/// (seed, step): batch choice, latent sampling, t, x0 and dropout.
template <typename T>
DiTTrainResult train_dit(DiT<T>& model, nn::AdamW<T>& opt, const autoencoder::LatentDataset& data,
                         const DiTTrainConfig& cfg, std::uint64_t seed, std::size_t start_step = 0,
                         const DiTTrainHooks& hooks = {}) {
  const auto& mc = model.config();
  if (data.records.empty()) throw ValidationError("train_dit: latent dataset is empty");
  if (data.latent_dim != mc.latent_dim) throw ValidationError("train_dit: latent width does not match the model");
  if (cfg.batch_size == 0) throw ValidationError("train_dit: batch_size must be >= 1");
  if (!(cfg.condition_dropout >= 0.0 && cfg.condition_dropout <= 1.0))
    throw ValidationError("train_dit: condition_dropout must lie in [0, 1]");
  cfg.sampler.validate();
  for (const auto& r : data.records) {
    model.face_index(r.faces());
    if (mc.use_cross_attention && !r.context) throw ValidationError("train_dit: record '" + r.id + "' has no context");
  }

  auto& store = model.parameters();
  DiTTrainResult res;
  res.next_step = start_step;
  auto t0 = std::chrono::steady_clock::now();
  std::size_t tokens_since = 0;

  for (std::size_t step = start_step; step < cfg.steps; ++step) {
    const auto idx = autoencoder::batch_indices(data.records.size(), cfg.batch_size, seed, step, "dit.batch");
    auto reparam = make_rng(seed, "reparam", step);
    auto noise = make_rng(seed, "noise", step);
    auto time = make_rng(seed, "time", step);
    const auto drops = dropout_draws(seed, step, idx.size(), cfg.condition_dropout);

    std::vector<Matrix<T>> xt, target;
    DiTInput<T> in;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& rec = data.records[idx[k]];
      Matrix<double> x1 = rec.mu;
      if (cfg.sample_latents)
        for (Eigen::Index i = 0; i < x1.size(); ++i)
          x1.data()[i] += std::exp(0.5 * rec.logvar.data()[i]) * standard_normal(reparam);
      x1 *= mc.latent_scale;
      Matrix<double> x0(x1.rows(), x1.cols());
      for (Eigen::Index i = 0; i < x0.size(); ++i) x0.data()[i] = standard_normal(noise);
      const double t = flow::sample_time(cfg.sampler, time);
      xt.push_back(flow::interpolant<double>(x0, x1, t).template cast<T>());
      target.push_back(flow::velocity_target<double>(x0, x1).template cast<T>());
      in.t.push_back(t);
      ConditionBundle c;
      if (!drops[k].face_count) c.face_count = rec.faces();
      if (mc.use_cross_attention && !drops[k].context) c.context = rec.context;
      in.conds.push_back(std::move(c));
      tokens_since += static_cast<std::size_t>(rec.faces());
    }
    const auto batch = pad_batch(xt);
    const auto tgt = pad_batch(target);
    in.batch = &batch;
    const auto valid = batch.layout.row_valid();

    store.zero_grad();
    Tape<T> tape;
    Var<T> loss = flow::flow_loss(model.forward(tape, in), tgt.tokens, valid);
    if (!std::isfinite(static_cast<double>(loss.scalar())))
      throw NumericError("train_dit: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    const auto info = opt.step(store, step);

    res.losses.push_back(static_cast<double>(loss.scalar()));
    res.last = {step, static_cast<double>(loss.scalar()), info.lr, info.grad_norm, 0.0};
    res.next_step = step + 1;
    if (hooks.on_step) hooks.on_step(res.last);
    if (cfg.log_every && (step + 1) % cfg.log_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      res.last.tokens_per_second = secs > 0 ? static_cast<double>(tokens_since) / secs : 0.0;
      t0 = std::chrono::steady_clock::now();
      tokens_since = 0;
      if (hooks.on_log) hooks.on_log(res.last);
    }
    if (cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 && hooks.on_checkpoint)
      hooks.on_checkpoint(step + 1);
  }
  return res;
}

}  // namespace meshflow::dit
