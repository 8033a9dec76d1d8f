#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "meshflow/autoencoder/vae.hpp"
#include "meshflow/dit/model.hpp"
#include "meshflow/flow/flow.hpp"
#include "meshflow/nn/gradcheck.hpp"
#include "meshflow/nn/layers.hpp"

namespace meshflow::pipeline {

using nn::Matrix;

/// "desk" checks the full-size autoencoder and DiT; "small" shrinks them so
/// the suite runs in seconds.
struct GradcheckProfile {
  std::string name = "desk";
  autoencoder::VAEConfig vae{};
  dit::DiTConfig dit{};

  static GradcheckProfile named(const std::string& name) {
    GradcheckProfile p;
    p.name = name;
    p.dit.use_cross_attention = true;
    if (name == "desk") return p;
    if (name == "small") {
      p.vae.resolution = 32;
      p.vae.encoder_layers = p.vae.decoder_layers = 1;
      p.vae.encoder_hidden = p.vae.decoder_hidden = 32;
      p.vae.heads = 2;
      p.vae.latent_dim = 4;
      p.dit.layers = 2;
      p.dit.hidden = 32;
      p.dit.heads = 2;
      p.dit.latent_dim = 4;
      p.dit.max_faces = 16;
      p.dit.time_frequencies = 16;
      return p;
    }
    throw ValidationError("gradcheck: unknown profile '" + name + "' (expected desk or small)");
  }
};

struct GradcheckSuiteOptions {
  double tolerance = 1e-4;
  std::size_t max_coords = 8;
  std::optional<std::string> corrupt;  // case whose backward is scaled, as a negative control
  double corrupt_factor = 1.01;
};

struct GradcheckCaseResult {
  nn::GradCheckReport report;
  double seconds = 0.0;
  bool passed(double tol) const { return report.passed(tol); }
};

struct GradcheckSuiteResult {
  std::vector<GradcheckCaseResult> cases;
  double tolerance = 1e-4;

  bool passed() const {
    for (const auto& c : cases)
      if (!c.passed(tolerance)) return false;
    return true;
  }
  /// "case/tensor" for every entry above tolerance, plus non-finite cases.
  std::vector<std::string> offenders() const {
    std::vector<std::string> out;
    for (const auto& c : cases) {
      if (!c.report.finite) out.push_back(c.report.op + " (" + c.report.diagnostic + ")");
      for (const auto& e : c.report.entries)
        if (e.max_rel_error > tolerance) out.push_back(c.report.op + "/" + e.tensor);
    }
    return out;
  }
};

namespace detail {

inline Matrix<double> gc_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed, "gradcheck.input");
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

inline void gc_randomize(nn::ParameterStore<double>& store, std::uint64_t seed, double scale) {
  std::uint64_t i = 0;
  for (auto& p : store) p.value = gc_matrix(p.value.rows(), p.value.cols(), seed + 31 * i++, scale);
}

}  // namespace detail

/// Names of the suite's cases, in run order.
inline std::vector<std::string> gradcheck_case_names() {
  return {"attention", "cross_attention", "swiglu", "sandwich_block", "adaln", "gcn", "vae", "dit"};
}

/// Central finite-difference checks of every differentiable block in double
/// precision. Parameters are randomized so zero-initialized paths are
/// exercised.
inline GradcheckSuiteResult run_gradcheck_suite(const GradcheckProfile& profile, const GradcheckSuiteOptions& opt = {},
                                                const std::function<void(const GradcheckCaseResult&)>& on_case = {}) {
  using namespace nn;
  using Md = Matrix<double>;
  using detail::gc_matrix;
  using detail::gc_randomize;
  if (opt.corrupt) {
    const auto names = gradcheck_case_names();
    if (std::find(names.begin(), names.end(), *opt.corrupt) == names.end())
      throw ValidationError("gradcheck: unknown case '" + *opt.corrupt + "'");
  }
  GradcheckSuiteResult result;
  result.tolerance = opt.tolerance;

  auto finish = [&](const std::string& name, const Var<double>& v) {
    return opt.corrupt && *opt.corrupt == name ? corrupt_backward(v, opt.corrupt_factor) : v;
  };
  auto run = [&](const std::string& name, const ScalarFn& fn, const std::vector<std::pair<std::string, Md>>& inputs,
                 ParameterStore<double>* params, double epsilon) {
    GradCheckOptions o;
    o.epsilon = epsilon;
    o.max_coords = opt.max_coords;
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckCaseResult r;
    r.report = grad_check(name, fn, inputs, params, o);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_case) on_case(r);
    result.cases.push_back(std::move(r));
  };

  {
    ParameterStore<double> store(1);
    SelfAttention<double> attn(store, "attn", 8, AttentionOptions{2, true, true});
    gc_randomize(store, 10, 0.3);
    auto layout = SequenceLayout::padded({2, 4});
    auto mask = AttentionMask<double>::key_padding(layout);
    auto pos = layout.positions();
    const Md w = projection_weights(layout.rows(), 8, 11);
    run("attention",
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          return weighted_sum(finish("attention", attn(in[0], mask, pos)), w);
        },
        {{"x", gc_matrix(layout.rows(), 8, 12)}}, &store, 1e-6);
  }
  {
    ParameterStore<double> store(2);
    CrossAttention<double> cross(store, "cross", 8, 5, 2, true);
    gc_randomize(store, 20, 0.3);
    auto mask = AttentionMask<double>::none(2, 3, 4);
    mask.bias.bottomRightCorner(3, 1).setConstant(kMaskNegInf<double>);
    const Md w = projection_weights(6, 8, 21);
    run("cross_attention",
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          return weighted_sum(finish("cross_attention", cross(in[0], in[1], mask)), w);
        },
        {{"x", gc_matrix(6, 8, 22)}, {"context", gc_matrix(8, 5, 23)}}, &store, 1e-6);
  }
  {
    ParameterStore<double> store(3);
    SwiGLU<double> ffn(store, "ffn", 6);
    gc_randomize(store, 30, 0.3);
    const Md w = projection_weights(3, 6, 31);
    run("swiglu",
        [&](Tape<double>&, const std::vector<Var<double>>& in) { return weighted_sum(finish("swiglu", ffn(in[0])), w); },
        {{"x", gc_matrix(3, 6, 32)}}, &store, 1e-6);
  }
  {
    ParameterStore<double> store(4);
    TransformerBlock<double> block(store, "blk", 8, AttentionOptions{2, true, true});
    gc_randomize(store, 40, 0.3);
    auto layout = SequenceLayout::padded({3, 2});
    auto mask = AttentionMask<double>::key_padding(layout);
    auto pos = layout.positions();
    const Md w = projection_weights(layout.rows(), 8, 41);
    run("sandwich_block",
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          return weighted_sum(finish("sandwich_block", block(in[0], mask, pos)), w);
        },
        {{"x", gc_matrix(layout.rows(), 8, 42)}}, &store, 1e-6);
  }
  {
    ParameterStore<double> store(5);
    AdaLNModulation<double> mod(store, "ada", 4, 6, 3);
    gc_randomize(store, 50, 0.3);
    const Md w = projection_weights(6, 6, 51);
    run("adaln",
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          auto m = mod(in[1]);
          return weighted_sum(finish("adaln", add(in[0], gate_rows(modulate(in[0], m[0], m[1], 3), m[2], 3))), w);
        },
        {{"x", gc_matrix(6, 6, 52)}, {"cond", gc_matrix(2, 4, 53)}}, &store, 1e-6);
  }
  {
    ParameterStore<double> store(6);
    GCNLayer<double> gcn(store, "gcn", 4, 3);
    gc_randomize(store, 60, 0.3);
    GraphOperator<double> g;
    g.append({{1, 2}, {0}, {0, 3}, {2}}, 0);
    const Md w = projection_weights(4, 3, 61);
    run("gcn",
        [&](Tape<double>&, const std::vector<Var<double>>& in) { return weighted_sum(finish("gcn", gcn(in[0], g)), w); },
        {{"x", gc_matrix(4, 4, 62)}}, &store, 1e-6);
  }
  // Whole-model losses average over many slots, so per-weight gradients are
  // small and the difference step is widened to keep round-off below the
  // tolerance. The steps come from sweeps: the VAE error falls as the step
  // grows up to 1e-3, the DiT error is lowest near 1e-4.
  {
    const auto& vc = profile.vae;
    autoencoder::VAE<double> vae(vc, 70);
    gc_randomize(vae.parameters(), 71, 0.1);
    geometry::Mesh tet;
    tet.vertices = {{-0.8, -0.7, -0.6}, {0.9, -0.5, -0.4}, {-0.1, 0.8, -0.3}, {0.2, 0.1, 0.9}};
    tet.faces = {{0, 1, 2}, {0, 1, 3}, {1, 2, 3}, {0, 2, 3}};
    const auto sample = autoencoder::MeshSample::from(geometry::canonicalize(tet, vc.resolution));
    const auto b = autoencoder::VAEBatch<double>::single(sample);
    const Md noise = gc_matrix(static_cast<Eigen::Index>(sample.faces()), vc.latent_dim, 73);
    run("vae",
        [&](Tape<double>&, const std::vector<Var<double>>& in) {
          auto e = vae.encode(in[0], b);
          auto logits = finish("vae", vae.decode(autoencoder::reparameterize(e, noise), b.mask, b.positions));
          return add(autoencoder::reconstruction_loss(logits, b.targets, b.valid),
                     scale(autoencoder::kl_loss(e.mu, e.logvar, b.valid), 0.5));
        },
        {{"features", b.features}}, &vae.parameters(), 1e-3);
  }
  {
    const auto& dc = profile.dit;
    dit::DiT<double> model(dc, 80);
    gc_randomize(model.parameters(), 81, 0.05);
    std::vector<Md> seqs{gc_matrix(3, dc.latent_dim, 82), gc_matrix(5, dc.latent_dim, 83)};
    auto b = dit::pad_batch(seqs);
    std::vector<dit::ConditionBundle> conds(2);
    conds[0].face_count = 3;
    conds[1].face_count = 5;
    if (dc.use_cross_attention) conds[0].context = gc_matrix(dc.context_tokens, dc.context_dim, 84);
    const Md target = gc_matrix(b.layout.rows(), dc.latent_dim, 85);
    const auto valid = b.layout.row_valid();
    dit::DiTInput<double> in{&b, {0.3, 0.8}, conds};
    run("dit",
        [&](Tape<double>&, const std::vector<Var<double>>& x) {
          return flow::flow_loss(finish("dit", model.forward(x[0], in)), target, valid);
        },
        {{"tokens", b.tokens}}, &model.parameters(), 1e-4);
  }
  return result;
}

}  // namespace meshflow::pipeline
