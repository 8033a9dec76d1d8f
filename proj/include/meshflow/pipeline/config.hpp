#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "meshflow/autoencoder/train.hpp"
#include "meshflow/config.hpp"
#include "meshflow/dit/train.hpp"
#include "meshflow/flow/flow.hpp"
#include "meshflow/geometry/obj.hpp"
#include "meshflow/metrics/metrics.hpp"

namespace meshflow::pipeline {

struct ConfigKey {
  const char* key;
  const char* value;
  const char* doc;
};

/// Every accepted key with its default. Full-scale values are listed in the
/// docs for reference; the defaults are sized for a single workstation.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", "0", "root seed; every random stream is derived from it"},

      {"data.resolution", "128", "quantization bins per axis (full scale: 128 or 256)"},
      {"data.max_faces", "64", "face budget; larger meshes are skipped (full scale: 800)"},
      {"data.allow_oversize", "false", "keep meshes over the face budget"},
      {"data.sigma_hausdorff", "0.05", "max Hausdorff distance between a mesh and its original, normalized units"},
      {"data.hausdorff_samples", "2048", "surface points per mesh for the Hausdorff estimate"},
      {"data.original_dir", "", "directory of same-named originals for the Hausdorff filter; empty disables it"},
      {"data.split_ratio", "10", "train:val ratio, one validation mesh per split_ratio + 1"},

      {"synth.kinds", "box,grid:4,grid:5", "comma-separated box | pyramid | prism:<sides> | grid:<cells>"},
      {"synth.count", "32", "number of meshes written by synth"},

      {"vae.resolution", "128", "must equal data.resolution"},
      {"vae.encoder_layers", "4", "full scale: 12"},
      {"vae.encoder_hidden", "192", "full scale: 768"},
      {"vae.decoder_layers", "4", "full scale: 18"},
      {"vae.decoder_hidden", "192", "full scale: 384"},
      {"vae.latent_dim", "8", "channels per face token"},
      {"vae.heads", "4", "attention heads"},
      {"vae.rope", "true", "rotary positions in attention"},
      {"vae.qk_norm", "true", "per-head LayerNorm on queries and keys"},

      {"vae_train.steps", "10000", "optimizer steps"},
      {"vae_train.batch_size", "8", "meshes per step"},
      {"vae_train.lambda_kl", "1e-4", "KL weight"},
      {"vae_train.lr", "1e-3", "peak learning rate"},
      {"vae_train.warmup", "200", "linear warmup steps"},
      {"vae_train.min_lr_ratio", "0.05", "cosine floor as a fraction of lr"},
      {"vae_train.weight_decay", "0", "decoupled weight decay on matrices"},
      {"vae_train.clip_norm", "1", "global gradient-norm clip; 0 disables"},
      {"vae_train.sample_tokens", "true", "decode reparameterized samples rather than means"},
      {"vae_train.augment", "false", "random axis scaling and rotation"},
      {"vae_train.eval_every", "250", "steps between training-set reconstruction metrics; 0 disables"},
      {"vae_train.stop_accuracy", "0", "stop once triangle accuracy reaches this; 0 disables"},
      {"vae_train.stop_l2", "0", "also require L2 at most this when stopping early; 0 ignores L2"},
      {"vae_train.checkpoint_every", "500", "steps between checkpoints; 0 saves only at the end"},
      {"vae_train.log_every", "100", "steps between progress lines"},

      {"encode.context", "true", "store a point-cloud context per mesh for cross-attention models"},

      {"dit.layers", "6", "full scale: 24"},
      {"dit.hidden", "256", "full scale: 864"},
      {"dit.heads", "8", "attention heads"},
      {"dit.latent_dim", "8", "must equal vae.latent_dim"},
      {"dit.max_faces", "64", "largest face count the embedding table covers"},
      {"dit.use_cross_attention", "false", "condition on a context through cross-attention"},
      {"dit.context_dim", "27", "context feature width"},
      {"dit.context_tokens", "4", "context tokens per sample"},
      {"dit.rope", "true", "rotary positions in self-attention"},
      {"dit.qk_norm", "true", "per-head LayerNorm on queries and keys"},
      {"dit.time_frequencies", "256", "sinusoidal time features"},
      {"dit.time_scale", "100", "t is multiplied by this before the sinusoids"},
      {"dit.latent_scale", "0", "multiplier applied to latents; 0 uses 1 / std of the encoded means"},

      {"dit_train.steps", "5000", "optimizer steps"},
      {"dit_train.batch_size", "8", "sequences per step"},
      {"dit_train.condition_dropout", "0.1", "probability of dropping each condition, independently"},
      {"dit_train.lr", "5e-4", "peak learning rate"},
      {"dit_train.warmup", "200", "linear warmup steps"},
      {"dit_train.min_lr_ratio", "0.1", "cosine floor as a fraction of lr"},
      {"dit_train.weight_decay", "0", "decoupled weight decay on matrices"},
      {"dit_train.clip_norm", "1", "global gradient-norm clip; 0 disables"},
      {"dit_train.time_m", "0.5", "logit-normal location"},
      {"dit_train.time_s", "1", "logit-normal scale"},
      {"dit_train.sample_latents", "true", "train on mu + sigma * eps rather than mu"},
      {"dit_train.checkpoint_every", "500", "steps between checkpoints; 0 saves only at the end"},
      {"dit_train.log_every", "100", "steps between progress lines"},

      {"sample.faces", "12", "requested face count"},
      {"sample.count", "1", "meshes to generate"},
      {"sample.steps", "50", "Euler steps"},
      {"sample.guidance", "single", "none | single | dual"},
      {"sample.w", "8", "guidance weight for single-condition guidance"},
      {"sample.w1", "1", "dual guidance: face-count weight"},
      {"sample.w2", "5", "dual guidance: context weight"},
      {"sample.batch", "8", "sequences integrated together"},

      {"eval.points", "1024", "surface points per mesh"},
      {"eval.jsd_resolution", "28", "occupancy grid cells per axis"},

      {"gradcheck.profile", "desk", "desk | small"},
      {"gradcheck.max_coords", "8", "checked coordinates per tensor"},
      {"gradcheck.tolerance", "1e-4", "maximum relative error"},
  };
  return schema;
}

/// Flat `key = value` run configuration with documented defaults. Unknown
/// keys are rejected.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) kv_.set(k.key, std::string(k.value));
  }

  static RunConfig from_text(std::string_view text) {
    RunConfig c;
    c.merge(KeyValues::parse(text));
    return c;
  }
  static RunConfig load(const std::string& path) { return from_text(geometry::read_text_file(path)); }

  void merge(const KeyValues& kv) {
    for (const auto& [k, v] : kv.entries()) set(k, v);
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ValidationError("unknown config key '" + key + "'");
    kv_.set(key, value);
  }

  /// Applies "key=value".
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ValidationError("expected key=value, got '" + assignment + "'");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  static bool known(const std::string& key) {
    const auto& s = config_schema();
    return std::any_of(s.begin(), s.end(), [&](const ConfigKey& k) { return key == k.key; });
  }

  const KeyValues& values() const { return kv_; }
  std::string text() const { return kv_.str(); }

  /// Defaults with their documentation, as a config file.
  static std::string documented_defaults() {
    std::string out;
    for (const auto& k : config_schema()) out += std::string("# ") + k.doc + "\n" + k.key + " = " + k.value + "\n";
    return out;
  }

  std::uint64_t seed() const { return kv_.get_uint("seed"); }
  std::string str(const std::string& key) const { return kv_.get_string(key); }
  std::int64_t integer(const std::string& key) const { return kv_.get_int(key); }
  std::size_t count(const std::string& key) const {
    const auto v = kv_.get_int(key);
    if (v < 0) throw ValidationError("config key '" + key + "' must be >= 0");
    return static_cast<std::size_t>(v);
  }
  double real(const std::string& key) const { return kv_.get_double(key); }
  bool flag(const std::string& key) const { return kv_.get_bool(key); }

  int resolution() const {
    const int r = static_cast<int>(integer("data.resolution"));
    if (r < 2) throw ValidationError("data.resolution must be >= 2");
    return r;
  }

  autoencoder::VAEConfig vae() const {
    auto c = autoencoder::VAEConfig::read(kv_);
    if (c.resolution != resolution()) throw ValidationError("vae.resolution must equal data.resolution");
    return c;
  }

  autoencoder::VAETrainConfig vae_train() const {
    autoencoder::VAETrainConfig t;
    t.steps = count("vae_train.steps");
    t.batch_size = count("vae_train.batch_size");
    t.lambda_kl = real("vae_train.lambda_kl");
    t.sample_tokens = flag("vae_train.sample_tokens");
    t.augment = flag("vae_train.augment");
    t.eval_every = count("vae_train.eval_every");
    t.stop_accuracy = real("vae_train.stop_accuracy");
    t.stop_l2 = real("vae_train.stop_l2");
    t.checkpoint_every = count("vae_train.checkpoint_every");
    t.log_every = count("vae_train.log_every");
    t.optim = optim("vae_train.", t.steps);
    return t;
  }

  /// Model settings; dit.latent_scale may still be 0 ("derive from data").
  dit::DiTConfig dit_unresolved() const {
    KeyValues kv = kv_;
    const double scale = real("dit.latent_scale");
    if (scale < 0.0) throw ValidationError("dit.latent_scale must be >= 0");
    if (scale == 0.0) kv.set("dit.latent_scale", 1.0);
    auto c = dit::DiTConfig::read(kv);
    c.latent_scale = scale;
    return c;
  }

  dit::DiTTrainConfig dit_train() const {
    dit::DiTTrainConfig t;
    t.steps = count("dit_train.steps");
    t.batch_size = count("dit_train.batch_size");
    t.condition_dropout = real("dit_train.condition_dropout");
    if (!(t.condition_dropout >= 0.0 && t.condition_dropout <= 1.0))
      throw ValidationError("dit_train.condition_dropout must be in [0, 1]");
    t.sampler.m = real("dit_train.time_m");
    t.sampler.s = real("dit_train.time_s");
    t.sampler.validate();
    t.sample_latents = flag("dit_train.sample_latents");
    t.checkpoint_every = count("dit_train.checkpoint_every");
    t.log_every = count("dit_train.log_every");
    t.optim = optim("dit_train.", t.steps);
    return t;
  }

  flow::CFGWeights guidance() const {
    flow::CFGWeights w;
    w.mode = flow::parse_guidance_mode(str("sample.guidance"));
    w.w = real("sample.w");
    w.w1 = real("sample.w1");
    w.w2 = real("sample.w2");
    return w;
  }

  int sample_steps() const {
    const auto s = integer("sample.steps");
    if (s < 1) throw ValidationError("sample.steps must be >= 1");
    return static_cast<int>(s);
  }

  metrics::EvaluateOptions evaluation() const {
    metrics::EvaluateOptions o;
    o.points_per_mesh = count("eval.points");
    o.jsd_resolution = static_cast<int>(integer("eval.jsd_resolution"));
    o.seed = seed();
    return o;
  }

 private:
  nn::AdamWConfig optim(const std::string& p, std::size_t steps) const {
    nn::AdamWConfig o;
    o.lr = real(p + "lr");
    o.warmup = count(p + "warmup");
    o.total_steps = steps;
    o.min_lr_ratio = real(p + "min_lr_ratio");
    o.weight_decay = real(p + "weight_decay");
    o.clip_norm = real(p + "clip_norm");
    if (!(o.lr > 0.0)) throw ValidationError(p + "lr must be positive");
    return o;
  }

  KeyValues kv_;
};

}  // namespace meshflow::pipeline
