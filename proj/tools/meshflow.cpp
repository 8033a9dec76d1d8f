// meshflow command-line driver.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "meshflow/parallel.hpp"
#include "meshflow/pipeline/commands.hpp"

using namespace meshflow;
using namespace meshflow::pipeline;

namespace {

struct Globals {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> assignments;
  bool dump_config = false;
};

// Precedence: defaults < --config file < --set < dedicated flags.
RunConfig build_config(const Globals& g, const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig cfg;
  if (!g.config_file.empty()) cfg = RunConfig::load(g.config_file);
  for (const auto& a : g.assignments) cfg.set_assignment(a);
  if (g.seed) cfg.set("seed", std::to_string(*g.seed));
  for (const auto& [k, v] : flags) cfg.set(k, v);
  return cfg;
}

template <typename T>
void flag_value(std::vector<std::pair<std::string, std::string>>& out, const std::string& key, const std::optional<T>& v) {
  if (!v) return;
  if constexpr (std::is_same_v<T, std::string>)
    out.emplace_back(key, *v);
  else
    out.emplace_back(key, KeyValues::format_double(static_cast<double>(*v)));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshflow: face-token mesh autoencoder and flow-matching transformer"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "root seed (overrides the config)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--set", g.assignments, "override a config key, key=value (repeatable)");
  app.add_flag("--dump-config", g.dump_config, "print the effective configuration and exit");

  std::string input, data, vae, dit, latents, partial, gen, ref, context, corrupt;
  bool resume = false;
  std::optional<std::size_t> until;
  std::optional<long> faces, count, steps;
  std::optional<double> w;
  std::optional<std::string> guidance, kinds, profile;

  auto* preprocess = app.add_subcommand("preprocess", "normalize, canonicalize and split a directory of OBJ files");
  preprocess->add_option("--input", input, "directory of .obj files")->required()->check(CLI::ExistingDirectory);

  auto* synth = app.add_subcommand("synth", "write parametric primitive meshes");
  synth->add_option("--count", count, "number of meshes (synth.count)");
  synth->add_option("--kinds", kinds, "shape kinds (synth.kinds)");

  auto* train_vae = app.add_subcommand("train-vae", "train the face autoencoder");
  train_vae->add_option("--data", data, "preprocess output directory")->required();
  train_vae->add_flag("--resume", resume, "continue from <out>/vae.ckpt when present");
  train_vae->add_option("--until", until, "stop after this many steps, keeping the full schedule");

  auto* encode = app.add_subcommand("encode", "encode the training split into latent sequences");
  encode->add_option("--data", data, "preprocess output directory")->required();
  encode->add_option("--vae", vae, "autoencoder checkpoint")->required();

  auto* train_dit = app.add_subcommand("train-dit", "train the flow-matching transformer on latents");
  train_dit->add_option("--latents", latents, "latent file written by encode")->required();
  train_dit->add_flag("--resume", resume, "continue from <out>/dit.ckpt when present");
  train_dit->add_option("--until", until, "stop after this many steps, keeping the full schedule");

  auto* sample = app.add_subcommand("sample", "generate meshes with a requested face count");
  auto* complete = app.add_subcommand("complete", "complete a partial mesh to a requested face count");
  for (auto* sc : {sample, complete}) {
    sc->add_option("--vae", vae, "autoencoder checkpoint")->required();
    sc->add_option("--dit", dit, "transformer checkpoint")->required();
    sc->add_option("--faces", faces, "face count (sample.faces)");
    sc->add_option("--steps", steps, "Euler steps (sample.steps)");
    sc->add_option("--guidance", guidance, "none | single | dual (sample.guidance)");
    sc->add_option("--w", w, "guidance weight (sample.w)");
    sc->add_option("--context", context, "reference mesh for cross-attention models");
  }
  sample->add_option("--count", count, "number of samples (sample.count)");
  complete->add_option("--partial", partial, "partial mesh, already in normalized coordinates")->required();

  auto* eval = app.add_subcommand("eval", "compare two directories of meshes");
  eval->add_option("--gen", gen, "generated meshes")->required();
  eval->add_option("--ref", ref, "reference meshes")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every differentiable block");
  gradcheck->add_option("--profile", profile, "desk | small (gradcheck.profile)");
  gradcheck->add_option("--corrupt", corrupt, "scale the backward pass of one case (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_max_threads(threads_from_env());
    std::vector<std::pair<std::string, std::string>> flags;
    auto* sub = app.get_subcommands().front();
    if (sub == synth) {
      flag_value(flags, "synth.count", count);
      flag_value(flags, "synth.kinds", kinds);
    } else if (sub == sample || sub == complete) {
      flag_value(flags, "sample.faces", faces);
      flag_value(flags, "sample.steps", steps);
      flag_value(flags, "sample.guidance", guidance);
      flag_value(flags, "sample.w", w);
      if (sub == sample) flag_value(flags, "sample.count", count);
    } else if (sub == gradcheck) {
      flag_value(flags, "gradcheck.profile", profile);
    }
    const RunConfig cfg = build_config(g, flags);
    if (g.dump_config) {
      std::cout << cfg.text();
      return 0;
    }
    auto& log = std::cerr;
    const std::optional<std::string> ctx = context.empty() ? std::nullopt : std::optional<std::string>(context);

    if (sub == preprocess) {
      cmd_preprocess(cfg, input, g.out, log);
    } else if (sub == synth) {
      cmd_synth(cfg, g.out, log);
    } else if (sub == train_vae) {
      cmd_train_vae(cfg, data, g.out, {resume, until}, log);
    } else if (sub == encode) {
      cmd_encode(cfg, data, vae, g.out, log);
    } else if (sub == train_dit) {
      cmd_train_dit(cfg, latents, g.out, {resume, until}, log);
    } else if (sub == sample) {
      cmd_sample(cfg, vae, dit, g.out, {ctx}, log);
    } else if (sub == complete) {
      cmd_complete(cfg, vae, dit, partial, g.out, {ctx}, log);
    } else if (sub == eval) {
      std::cout << cmd_eval(cfg, gen, ref, g.out, log).table();
    } else if (sub == gradcheck) {
      const auto res =
          cmd_gradcheck(cfg, corrupt.empty() ? std::nullopt : std::optional<std::string>(corrupt), g.out, log);
      if (!res.passed()) {
        std::cerr << "gradcheck failed:\n";
        for (const auto& o : res.offenders()) std::cerr << "  " << o << "\n";
        return 3;
      }
      std::cerr << "gradcheck passed\n";
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
