#pragma once

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "meshflow/autoencoder/latents.hpp"
#include "meshflow/autoencoder/train.hpp"
#include "meshflow/dit/condition.hpp"
#include "meshflow/dit/generate.hpp"
#include "meshflow/dit/train.hpp"
#include "meshflow/geometry/canonical.hpp"
#include "meshflow/geometry/manifest.hpp"
#include "meshflow/geometry/obj.hpp"
#include "meshflow/geometry/sampling.hpp"
#include "meshflow/geometry/synthetic.hpp"
#include "meshflow/metrics/metrics.hpp"
#include "meshflow/nn/checkpoint.hpp"
#include "meshflow/pipeline/config.hpp"
#include "meshflow/pipeline/gradcheck_suite.hpp"

namespace meshflow::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kVaeCheckpoint = "vae.ckpt";
inline constexpr const char* kDitCheckpoint = "dit.ckpt";
inline constexpr const char* kLatentsName = "latents.bin";

// ---------------------------------------------------------------- helpers

/// *.obj files of a directory, sorted by file name.
inline std::vector<fs::path> list_obj_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ValidationError("not a directory: " + dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".obj") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline void require_file(const std::string& path, const std::string& hint) {
  if (!fs::is_regular_file(path)) throw ValidationError("missing input " + path + " (" + hint + ")");
}

inline void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

/// Writes through a temporary file so an interrupted write never leaves a
/// truncated artifact behind.
inline void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  geometry::write_text_file(tmp, bytes);
  fs::rename(tmp, path);
}

inline std::string matrix_text(const Matrix<double>& m) {
  std::ostringstream s;
  s << std::setprecision(17);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) s << (c ? " " : "") << m(r, c);
    s << '\n';
  }
  return s.str();
}

/// Canonical meshes written by preprocess are re-read without normalizing:
/// their bin-center coordinates quantize back to the same bins.
inline geometry::CanonicalMesh load_canonical(const std::string& path, int resolution) {
  return geometry::canonicalize(geometry::load_obj(path), resolution);
}

struct Dataset {
  std::vector<geometry::ManifestRecord> records;  // train split only
  std::vector<autoencoder::MeshSample> samples;
};

inline Dataset load_train_split(const std::string& data_dir, int resolution) {
  const std::string manifest = (fs::path(data_dir) / kManifestName).string();
  require_file(manifest, "run 'meshflow preprocess' first");
  Dataset d;
  for (auto& r : geometry::load_manifest(manifest)) {
    if (r.split != "train") continue;
    const auto cm = load_canonical((fs::path(data_dir) / r.path).string(), resolution);
    if (cm.faces.size() != r.faces)
      throw ValidationError("manifest: " + r.path + " has " + std::to_string(cm.faces.size()) +
                            " faces, manifest says " + std::to_string(r.faces));
    d.samples.push_back(autoencoder::MeshSample::from(cm));
    d.records.push_back(std::move(r));
  }
  if (d.samples.empty()) throw ValidationError("manifest " + manifest + " has no training meshes");
  return d;
}

/// The condition encoder whose output matches the model's context shape.
inline dit::ToyConditionEncoder condition_encoder(const dit::DiTConfig& c) {
  if ((c.context_dim - 3) % 6 != 0 || c.context_dim < 3)
    throw ValidationError("dit.context_dim must be 3 + 6k for the point-cloud condition encoder");
  dit::ToyConditionEncoder e;
  e.tokens = c.context_tokens;
  e.frequencies = (c.context_dim - 3) / 6;
  return e;
}

// ---------------------------------------------------------------- checkpoints

template <typename Model>
nn::Checkpoint make_checkpoint(const RunConfig& cfg, Model& model, nn::AdamW<float>* opt, std::size_t step) {
  nn::Checkpoint ck;
  ck.step = step;
  ck.config = cfg.text();
  nn::store_parameters(ck, model.parameters());
  if (opt) nn::store_optimizer(ck, *opt, model.parameters());
  return ck;
}

inline void save_checkpoint_atomic(const std::string& path, const nn::Checkpoint& ck) {
  write_file_atomic(path, nn::encode_checkpoint(ck));
}

inline RunConfig checkpoint_config(const nn::Checkpoint& ck) { return RunConfig::from_text(ck.config); }

inline std::unique_ptr<autoencoder::VAE<float>> load_vae(const std::string& path) {
  require_file(path, "run 'meshflow train-vae' first");
  const auto ck = nn::load_checkpoint(path);
  auto vae = std::make_unique<autoencoder::VAE<float>>(checkpoint_config(ck).vae(), 0);
  nn::restore_parameters(ck, vae->parameters());
  return vae;
}

inline std::unique_ptr<dit::DiT<float>> load_dit(const std::string& path) {
  require_file(path, "run 'meshflow train-dit' first");
  const auto ck = nn::load_checkpoint(path);
  auto c = checkpoint_config(ck).dit_unresolved();
  if (c.latent_scale <= 0.0) throw ValidationError("checkpoint " + path + " has no resolved latent scale");
  auto model = std::make_unique<dit::DiT<float>>(c, 0);
  nn::restore_parameters(ck, model->parameters());
  return model;
}

/// Keys starting with `prefix` must agree between a checkpoint and the
/// current configuration before training resumes.
inline void require_same_model(const RunConfig& now, const RunConfig& saved, const std::string& prefix,
                               const std::vector<std::string>& ignore = {}) {
  for (const auto& [k, v] : now.values().entries()) {
    if (k.rfind(prefix, 0) != 0 || std::find(ignore.begin(), ignore.end(), k) != ignore.end()) continue;
    if (saved.str(k) != v)
      throw ValidationError("cannot resume: " + k + " is " + v + " but the checkpoint has " + saved.str(k));
  }
}

/// History as "step<TAB>value..." lines; on resume the lines whose step is
/// below `keep_below` are kept and the rest is rewritten.
class LossLog {
 public:
  LossLog(std::string path, std::string header, std::size_t keep_below) : path_(std::move(path)) {
    text_ = header + "\n";
    if (keep_below > 0 && fs::is_regular_file(path_)) {
      std::istringstream in(geometry::read_text_file(path_));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find('\t'))) >= keep_below) break;
        text_ += line + "\n";
      }
    }
  }
  void add(const std::string& line) { text_ += line + "\n"; }
  void flush() const { write_file_atomic(path_, text_); }

 private:
  std::string path_;
  std::string text_;
};

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------- preprocess

struct PreprocessResult {
  std::vector<geometry::ManifestRecord> records;
  std::vector<std::string> skipped;  // "file: reason"
};

/// Normalize, canonicalize, apply the face budget and the optional Hausdorff
/// filter, then assign a deterministic train/val split.
inline PreprocessResult cmd_preprocess(const RunConfig& cfg, const std::string& input_dir, const std::string& out_dir,
                                       std::ostream& log) {
  const int R = cfg.resolution();
  const auto budget = cfg.count("data.max_faces");
  const bool oversize = cfg.flag("data.allow_oversize");
  const std::string originals = cfg.str("data.original_dir");
  const double sigma = cfg.real("data.sigma_hausdorff");
  const auto split_ratio = cfg.count("data.split_ratio");
  const auto files = list_obj_files(input_dir);
  make_dir((fs::path(out_dir) / "meshes").string());

  PreprocessResult res;
  auto skip = [&](const fs::path& f, const std::string& why) {
    res.skipped.push_back(f.filename().string() + ": " + why);
    log << "skip " << f.filename().string() << ": " << why << "\n";
  };
  for (const auto& f : files) {
    geometry::CanonicalMesh cm;
    try {
      const auto mesh = geometry::normalize(geometry::load_obj(f.string()));
      if (!originals.empty()) {
        const auto orig = fs::path(originals) / f.filename();
        if (fs::is_regular_file(orig)) {
          const double h = geometry::hausdorff_distance(mesh, geometry::normalize(geometry::load_obj(orig.string())),
                                                        cfg.count("data.hausdorff_samples"), cfg.seed());
          if (h > sigma) {
            skip(f, "Hausdorff distance " + fmt(h) + " to the original exceeds " + fmt(sigma));
            continue;
          }
        }
      }
      cm = geometry::canonicalize(mesh, R);
    } catch (const ValidationError& e) {
      skip(f, e.what());
      continue;
    } catch (const IoError& e) {
      skip(f, e.what());
      continue;
    }
    if (cm.faces.empty()) {
      skip(f, "no faces left after canonicalization");
      continue;
    }
    if (cm.faces.size() > budget && !oversize) {
      skip(f, std::to_string(cm.faces.size()) + " faces exceed the budget of " + std::to_string(budget));
      continue;
    }
    const std::string rel = "meshes/" + f.stem().string() + ".obj";
    geometry::save_obj((fs::path(out_dir) / rel).string(), geometry::dequantize(cm));
    res.records.push_back({rel, cm.faces.size(), "train"});
  }
  if (res.records.empty()) throw ValidationError("preprocess: no usable meshes in " + input_dir);

  std::vector<std::size_t> order(res.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_rng(cfg.seed(), "split");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_val = res.records.size() / (split_ratio + 1);
  for (std::size_t i = 0; i < n_val; ++i) res.records[order[i]].split = "val";

  geometry::write_text_file((fs::path(out_dir) / kManifestName).string(), geometry::write_manifest(res.records));
  std::string skipped;
  for (const auto& s : res.skipped) skipped += s + "\n";
  geometry::write_text_file((fs::path(out_dir) / "skipped.txt").string(), skipped);
  log << "preprocess: " << res.records.size() << " meshes kept (" << n_val << " val), " << res.skipped.size()
      << " skipped\n";
  return res;
}

// ---------------------------------------------------------------- synth

struct SynthKind {
  geometry::ShapeKind kind;
  int param = 0;  // prism sides or grid cells
};

inline std::vector<SynthKind> parse_synth_kinds(const std::string& text) {
  std::vector<SynthKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    SynthKind k{geometry::parse_shape_kind(item.substr(0, colon)), 0};
    if (colon != std::string::npos) {
      try {
        k.param = std::stoi(item.substr(colon + 1));
      } catch (const std::exception&) {
        throw ValidationError("synth.kinds: bad parameter in '" + item + "'");
      }
    }
    out.push_back(k);
  }
  if (out.empty()) throw ValidationError("synth.kinds is empty");
  return out;
}

/// Parametric meshes named synth_0000.obj, ...; mesh i uses kind i mod K.
inline std::vector<std::string> cmd_synth(const RunConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const auto kinds = parse_synth_kinds(cfg.str("synth.kinds"));
  const auto count = cfg.count("synth.count");
  if (count < 1) throw ValidationError("synth.count must be >= 1");
  make_dir(out_dir);
  std::vector<std::string> files;
  for (std::size_t i = 0; i < count; ++i) {
    const auto& k = kinds[i % kinds.size()];
    geometry::ShapeParams base;
    if (k.kind == geometry::ShapeKind::Prism && k.param) base.sides = k.param;
    if (k.kind == geometry::ShapeKind::Grid && k.param) base.grid = k.param;
    const auto p = geometry::random_shape_params(k.kind, derive_seed(cfg.seed(), "synth", i), base);
    const auto mesh = geometry::generate_synthetic(p, derive_seed(cfg.seed(), "synth.mesh", i));
    char name[32];
    std::snprintf(name, sizeof name, "synth_%04zu.obj", i);
    const auto path = (fs::path(out_dir) / name).string();
    geometry::save_obj(path, mesh, std::string(geometry::to_string(k.kind)));
    files.push_back(path);
  }
  log << "synth: wrote " << files.size() << " meshes to " << out_dir << "\n";
  return files;
}

// ---------------------------------------------------------------- train-vae

struct TrainOptions {
  bool resume = false;
  std::optional<std::size_t> until;  // stop after this step (the schedule still spans all steps)
};

struct VaeTrainSummary {
  std::size_t start_step = 0, next_step = 0;
  autoencoder::ReconMetrics metrics;
  std::vector<double> losses;  // steps run in this invocation
};

inline VaeTrainSummary cmd_train_vae(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
                                     const TrainOptions& topt, std::ostream& log) {
  const auto data = load_train_split(data_dir, cfg.resolution());
  auto tc = cfg.vae_train();
  if (topt.until) tc.steps = std::min(tc.steps, *topt.until);
  make_dir(out_dir);
  const std::string ck_path = (fs::path(out_dir) / kVaeCheckpoint).string();

  autoencoder::VAE<float> vae(cfg.vae(), derive_seed(cfg.seed(), "vae.init"));
  nn::AdamW<float> opt(tc.optim);
  VaeTrainSummary sum;
  if (topt.resume && fs::is_regular_file(ck_path)) {
    const auto ck = nn::load_checkpoint(ck_path);
    require_same_model(cfg, checkpoint_config(ck), "vae.");
    require_same_model(cfg, checkpoint_config(ck), "vae_train.");
    nn::restore_parameters(ck, vae.parameters());
    nn::restore_optimizer(ck, opt, vae.parameters());
    sum.start_step = ck.step;
    log << "train-vae: resuming at step " << ck.step << "\n";
  }

  LossLog losses((fs::path(out_dir) / "vae_losses.tsv").string(), "step\tloss\tce\tkl", sum.start_step);
  LossLog evals((fs::path(out_dir) / "vae_eval.tsv").string(), "step\ttriangle_accuracy\tl2", sum.start_step + 1);
  autoencoder::VAETrainHooks hooks;
  hooks.on_step = [&](const autoencoder::VAETrainLog& l) {
    losses.add(std::to_string(l.step) + "\t" + fmt(l.loss) + "\t" + fmt(l.ce) + "\t" + fmt(l.kl));
  };
  hooks.on_log = [&](const autoencoder::VAETrainLog& l) {
    log << "vae step " << l.step + 1 << "/" << tc.optim.total_steps << " loss " << fmt(l.loss) << " ce " << fmt(l.ce)
        << " kl " << fmt(l.kl) << " lr " << fmt(l.lr) << " faces/s " << std::fixed << std::setprecision(0)
        << l.faces_per_second << std::defaultfloat << "\n";
  };
  hooks.on_eval = [&](const autoencoder::VAEEvalLog& e) {
    evals.add(std::to_string(e.step) + "\t" + fmt(e.metrics.triangle_accuracy) + "\t" + fmt(e.metrics.l2_distance));
    log << "vae eval step " << e.step << " triangle accuracy " << fmt(e.metrics.triangle_accuracy) << " l2 "
        << fmt(e.metrics.l2_distance) << "\n";
  };
  hooks.on_checkpoint = [&](std::size_t next) {
    save_checkpoint_atomic(ck_path, make_checkpoint(cfg, vae, &opt, next));
    losses.flush();
    evals.flush();
    log << "vae checkpoint at step " << next << "\n";
  };
  auto res = autoencoder::train_vae(vae, opt, std::span<const autoencoder::MeshSample>(data.samples), tc, cfg.seed(),
                                    sum.start_step, hooks);
  save_checkpoint_atomic(ck_path, make_checkpoint(cfg, vae, &opt, res.next_step));
  losses.flush();
  evals.flush();

  sum.next_step = res.next_step;
  sum.losses = res.losses;
  sum.metrics = autoencoder::evaluate_reconstruction(vae, std::span<const autoencoder::MeshSample>(data.samples));
  KeyValues m;
  m.set("step", sum.next_step);
  m.set("triangle_accuracy", sum.metrics.triangle_accuracy);
  m.set("l2_distance", sum.metrics.l2_distance);
  m.set("meshes", data.samples.size());
  geometry::write_text_file((fs::path(out_dir) / "vae_metrics.txt").string(), m.str());
  log << "train-vae: step " << sum.next_step << " triangle accuracy " << fmt(sum.metrics.triangle_accuracy) << " l2 "
      << fmt(sum.metrics.l2_distance) << "\n";
  return sum;
}

// ---------------------------------------------------------------- encode

inline autoencoder::LatentDataset cmd_encode(const RunConfig& cfg, const std::string& data_dir,
                                             const std::string& vae_path, const std::string& out_dir,
                                             std::ostream& log) {
  const auto vae_ptr = load_vae(vae_path);
  const auto& vae = *vae_ptr;
  const auto data = load_train_split(data_dir, vae.config().resolution);
  const bool with_context = cfg.flag("encode.context");
  const auto encoder = condition_encoder(cfg.dit_unresolved());
  autoencoder::LatentDataset ds;
  ds.latent_dim = vae.config().latent_dim;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto lat = autoencoder::encode_mesh(vae, data.samples[i]);
    autoencoder::LatentRecord rec{data.records[i].path, lat.mu, lat.logvar, std::nullopt};
    if (with_context) rec.context = encoder(geometry::dequantize(data.samples[i].mesh), derive_seed(cfg.seed(), "condition", i));
    ds.records.push_back(std::move(rec));
  }
  make_dir(out_dir);
  autoencoder::save_latents((fs::path(out_dir) / kLatentsName).string(), ds);
  log << "encode: " << ds.records.size() << " sequences, latent scale " << fmt(ds.scale_factor()) << "\n";
  return ds;
}

// ---------------------------------------------------------------- train-dit

struct DitTrainSummary {
  std::size_t start_step = 0, next_step = 0;
  double latent_scale = 1.0;
  std::vector<double> losses;
};

inline DitTrainSummary cmd_train_dit(const RunConfig& cfg_in, const std::string& latents_path,
                                     const std::string& out_dir, const TrainOptions& topt, std::ostream& log) {
  require_file(latents_path, "run 'meshflow encode' first");
  const auto ds = autoencoder::load_latents(latents_path);
  RunConfig cfg = cfg_in;
  auto mc = cfg.dit_unresolved();
  if (mc.latent_dim != ds.latent_dim)
    throw ValidationError("dit.latent_dim is " + std::to_string(mc.latent_dim) + " but the latents have width " +
                          std::to_string(ds.latent_dim));
  if (mc.latent_scale == 0.0) {
    mc.latent_scale = ds.scale_factor();
    cfg.set("dit.latent_scale", KeyValues::format_double(mc.latent_scale));
  }
  auto tc = cfg.dit_train();
  if (topt.until) tc.steps = std::min(tc.steps, *topt.until);
  make_dir(out_dir);
  const std::string ck_path = (fs::path(out_dir) / kDitCheckpoint).string();

  dit::DiT<float> model(mc, derive_seed(cfg.seed(), "dit.init"));
  nn::AdamW<float> opt(tc.optim);
  DitTrainSummary sum;
  sum.latent_scale = mc.latent_scale;
  if (topt.resume && fs::is_regular_file(ck_path)) {
    const auto ck = nn::load_checkpoint(ck_path);
    require_same_model(cfg, checkpoint_config(ck), "dit.");
    require_same_model(cfg, checkpoint_config(ck), "dit_train.");
    nn::restore_parameters(ck, model.parameters());
    nn::restore_optimizer(ck, opt, model.parameters());
    sum.start_step = ck.step;
    log << "train-dit: resuming at step " << ck.step << "\n";
  }

  LossLog losses((fs::path(out_dir) / "dit_losses.tsv").string(), "step\tloss", sum.start_step);
  dit::DiTTrainHooks hooks;
  hooks.on_step = [&](const dit::DiTTrainLog& l) { losses.add(std::to_string(l.step) + "\t" + fmt(l.loss)); };
  hooks.on_log = [&](const dit::DiTTrainLog& l) {
    log << "dit step " << l.step + 1 << "/" << tc.optim.total_steps << " loss " << fmt(l.loss) << " lr " << fmt(l.lr)
        << " tokens/s " << std::fixed << std::setprecision(0) << l.tokens_per_second << std::defaultfloat << "\n";
  };
  hooks.on_checkpoint = [&](std::size_t next) {
    save_checkpoint_atomic(ck_path, make_checkpoint(cfg, model, &opt, next));
    losses.flush();
    log << "dit checkpoint at step " << next << "\n";
  };
  auto res = dit::train_dit(model, opt, ds, tc, cfg.seed(), sum.start_step, hooks);
  save_checkpoint_atomic(ck_path, make_checkpoint(cfg, model, &opt, res.next_step));
  losses.flush();
  sum.next_step = res.next_step;
  sum.losses = res.losses;
  log << "train-dit: step " << sum.next_step << " latent scale " << fmt(sum.latent_scale) << "\n";
  return sum;
}

// ---------------------------------------------------------------- sample

struct SampleOptions {
  std::optional<std::string> context_obj;  // reference mesh for cross-attention models
};

inline std::optional<Matrix<double>> context_from(const RunConfig& cfg, const dit::DiTConfig& mc,
                                                  const std::optional<std::string>& obj) {
  if (!obj) return std::nullopt;
  if (!mc.use_cross_attention) throw ValidationError("--context needs a cross-attention model");
  return condition_encoder(mc)(geometry::normalize(geometry::load_obj(*obj)), derive_seed(cfg.seed(), "condition"));
}

/// Seed of sample k.
inline std::uint64_t sample_seed(std::uint64_t root, std::size_t k) { return derive_seed(root, "sample", k); }

inline std::string sample_stem(int faces, std::size_t k) {
  char name[48];
  std::snprintf(name, sizeof name, "sample_f%03d_%04zu", faces, k);
  return name;
}

/// Generates sample.count meshes in groups of sample.batch. Writes
/// <stem>.obj and a <stem>.txt sidecar per sample; a failed decode writes
/// <stem>.tokens.txt and throws.
inline std::vector<dit::Generation> cmd_sample(const RunConfig& cfg, const std::string& vae_path,
                                               const std::string& dit_path, const std::string& out_dir,
                                               const SampleOptions& sopt, std::ostream& log) {
  const auto vae_ptr = load_vae(vae_path);
  const auto& vae = *vae_ptr;
  const auto model_ptr = load_dit(dit_path);
  const auto& model = *model_ptr;
  const int faces = static_cast<int>(cfg.integer("sample.faces"));
  const auto count = cfg.count("sample.count");
  const auto batch = std::max<std::size_t>(1, cfg.count("sample.batch"));
  const auto guidance = cfg.guidance();
  const int steps = cfg.sample_steps();
  model.face_index(faces);
  dit::ConditionBundle cond;
  cond.face_count = faces;
  cond.context = context_from(cfg, model.config(), sopt.context_obj);
  make_dir(out_dir);

  std::vector<dit::Generation> out;
  for (std::size_t first = 0; first < count; first += batch) {
    std::vector<dit::GenerationRequest> req;
    for (std::size_t k = first; k < std::min(count, first + batch); ++k) req.push_back({cond, sample_seed(cfg.seed(), k)});
    std::vector<dit::Generation> gen;
    try {
      gen = dit::generate_batch(model, vae, req, guidance, steps);
    } catch (const dit::GenerationError& e) {
      const auto path = (fs::path(out_dir) / (sample_stem(faces, first) + ".tokens.txt")).string();
      geometry::write_text_file(path, matrix_text(e.tokens()));
      log << "sample: decode failed, tokens written to " << path << "\n";
      throw;
    }
    for (std::size_t i = 0; i < gen.size(); ++i) {
      const std::size_t k = first + i;
      const auto stem = sample_stem(faces, k);
      geometry::save_obj((fs::path(out_dir) / (stem + ".obj")).string(), geometry::dequantize(gen[i].decoded.mesh));
      KeyValues side;
      side.set("seed", static_cast<std::int64_t>(cfg.seed()));
      side.set("sample", k);
      side.set("sample_seed", std::to_string(req[i].seed));
      side.set("faces", faces);
      side.set("decoded_faces", gen[i].decoded.mesh.faces.size());
      side.set("steps", steps);
      side.set("guidance", flow::to_string(guidance.mode));
      side.set("w", guidance.w);
      side.set("w1", guidance.w1);
      side.set("w2", guidance.w2);
      side.set("evaluations", gen[i].evaluations);
      side.set("context", sopt.context_obj.has_value());
      geometry::write_text_file((fs::path(out_dir) / (stem + ".txt")).string(), side.str());
      out.push_back(std::move(gen[i]));
    }
    log << "sample: " << std::min(count, first + batch) << "/" << count << "\n";
  }
  return out;
}

// ---------------------------------------------------------------- complete

inline dit::Completion cmd_complete(const RunConfig& cfg, const std::string& vae_path, const std::string& dit_path,
                                    const std::string& partial_obj, const std::string& out_dir,
                                    const SampleOptions& sopt, std::ostream& log) {
  const auto vae_ptr = load_vae(vae_path);
  const auto& vae = *vae_ptr;
  const auto model_ptr = load_dit(dit_path);
  const auto& model = *model_ptr;
  require_file(partial_obj, "expected a partial mesh in OBJ format");
  // The partial mesh is taken in the normalized frame of the full shape.
  const auto partial = geometry::canonicalize(geometry::load_obj(partial_obj), vae.config().resolution);
  const int total = static_cast<int>(cfg.integer("sample.faces"));
  dit::ConditionBundle cond;
  cond.context = context_from(cfg, model.config(), sopt.context_obj);
  make_dir(out_dir);
  const std::string stem = "complete_f" + std::to_string(total);
  dit::Completion c;
  try {
    c = dit::complete(model, vae, partial, total, cond, cfg.guidance(), cfg.sample_steps(), cfg.seed());
  } catch (const dit::GenerationError& e) {
    geometry::write_text_file((fs::path(out_dir) / (stem + ".tokens.txt")).string(), matrix_text(e.tokens()));
    throw;
  }
  geometry::save_obj((fs::path(out_dir) / (stem + ".obj")).string(), geometry::dequantize(c.decoded.mesh));
  KeyValues side;
  side.set("seed", static_cast<std::int64_t>(cfg.seed()));
  side.set("known_faces", partial.faces.size());
  side.set("faces", total);
  side.set("decoded_faces", c.decoded.mesh.faces.size());
  side.set("steps", cfg.sample_steps());
  side.set("guidance", flow::to_string(cfg.guidance().mode));
  side.set("w", cfg.guidance().w);
  geometry::write_text_file((fs::path(out_dir) / (stem + ".txt")).string(), side.str());
  log << "complete: " << partial.faces.size() << " known + " << (total - static_cast<int>(partial.faces.size()))
      << " generated faces, decoded " << c.decoded.mesh.faces.size() << "\n";
  return c;
}

// ---------------------------------------------------------------- eval

inline std::vector<geometry::Mesh> load_mesh_dir(const std::string& dir) {
  std::vector<geometry::Mesh> out;
  for (const auto& f : list_obj_files(dir)) out.push_back(geometry::load_obj(f.string()));
  if (out.empty()) throw ValidationError("no .obj files in " + dir);
  return out;
}

inline metrics::MetricReport cmd_eval(const RunConfig& cfg, const std::string& gen_dir, const std::string& ref_dir,
                                      const std::string& out_dir, std::ostream& log) {
  const auto rep = metrics::evaluate(load_mesh_dir(gen_dir), load_mesh_dir(ref_dir), cfg.evaluation());
  make_dir(out_dir);
  geometry::write_text_file((fs::path(out_dir) / "metrics.txt").string(), rep.table());
  geometry::write_text_file((fs::path(out_dir) / "metrics.records").string(), rep.records());
  log << "eval: " << rep.n_gen << " generated vs " << rep.n_ref << " reference meshes\n";
  return rep;
}

// ---------------------------------------------------------------- gradcheck

inline GradcheckSuiteResult cmd_gradcheck(const RunConfig& cfg, const std::optional<std::string>& corrupt,
                                          const std::string& out_dir, std::ostream& log) {
  GradcheckSuiteOptions opt;
  opt.tolerance = cfg.real("gradcheck.tolerance");
  opt.max_coords = cfg.count("gradcheck.max_coords");
  opt.corrupt = corrupt;
  std::string report;
  auto res = run_gradcheck_suite(GradcheckProfile::named(cfg.str("gradcheck.profile")), opt,
                                 [&](const GradcheckCaseResult& c) {
                                   const std::string line = c.report.op + "\tmax_rel_error " +
                                                            fmt(c.report.max_rel_error()) + "\t" +
                                                            (c.passed(opt.tolerance) ? "pass" : "FAIL");
                                   report += line + "\n";
                                   log << line << "  (" << std::fixed << std::setprecision(1) << c.seconds << " s)"
                                       << std::defaultfloat << "\n";
                                 });
  for (const auto& o : res.offenders()) report += "offender " + o + "\n";
  if (!out_dir.empty()) {
    make_dir(out_dir);
    geometry::write_text_file((fs::path(out_dir) / "gradcheck.txt").string(), report);
  }
  return res;
}

}  // namespace meshflow::pipeline
