#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "meshflow/dit/condition.hpp"
#include "meshflow/dit/generate.hpp"
#include "meshflow/dit/train.hpp"
#include "meshflow/geometry/synthetic.hpp"
#include "meshflow/nn/gradcheck.hpp"

using namespace meshflow;
using namespace meshflow::dit;
using Md = nn::Matrix<double>;

namespace {

Md random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  auto rng = make_rng(seed, "test.matrix");
  Md m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

template <typename T>
void randomize(nn::ParameterStore<T>& store, std::uint64_t seed, double scale) {
  std::uint64_t i = 0;
  for (auto& p : store)
    p.value = random_matrix(p.value.rows(), p.value.cols(), seed + 31 * i++, scale).template cast<T>();
}

DiTConfig small_config(int layers = 2, bool cross = false) {
  DiTConfig c;
  c.layers = layers;
  c.hidden = 32;
  c.heads = 4;
  c.latent_dim = 4;
  c.max_faces = 16;
  c.use_cross_attention = cross;
  c.context_dim = 6;
  c.context_tokens = 3;
  c.time_frequencies = 32;
  return c;
}

DiTConfig desk_config(int layers, bool cross) {
  DiTConfig c;
  c.layers = layers;
  c.use_cross_attention = cross;
  return c;
}

std::vector<ConditionBundle> conditions(const DiTConfig& c, const std::vector<int>& lengths, std::uint64_t seed) {
  std::vector<ConditionBundle> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    ConditionBundle b;
    if (i % 3 != 2) b.face_count = lengths[i];
    if (c.use_cross_attention && i % 2 == 0) b.context = random_matrix(c.context_tokens, c.context_dim, seed + i);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Md> random_sequences(const std::vector<int>& lengths, int width, std::uint64_t seed) {
  std::vector<Md> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) out.push_back(random_matrix(lengths[i], width, seed + i));
  return out;
}

autoencoder::VAEConfig tiny_vae() {
  autoencoder::VAEConfig c;
  c.resolution = 32;
  c.encoder_layers = c.decoder_layers = 1;
  c.encoder_hidden = c.decoder_hidden = 32;
  c.heads = 4;
  c.latent_dim = 4;
  return c;
}

}  // namespace

// ---------------------------------------------------------------- padding

TEST(PadBatch, EqualLengthsGiveEmptyMask) {
  auto b = pad_batch(random_sequences({4, 4, 4}, 3, 1));
  EXPECT_EQ(b.mask.bias.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PadBatch, ShortSampleGetsMaskedColumns) {
  auto b = pad_batch(random_sequences({2, 5}, 3, 1));
  ASSERT_EQ(b.layout.length, 5);
  for (Eigen::Index q = 0; q < 5; ++q) {
    int masked = 0;
    for (Eigen::Index k = 0; k < 5; ++k) masked += b.mask.bias(q, k) == nn::kMaskNegInf<double>;
    EXPECT_EQ(masked, 3);
    EXPECT_EQ(b.mask.bias.row(5 + q).cwiseAbs().maxCoeff(), 0.0);
  }
  EXPECT_EQ(b.tokens.middleRows(2, 3).cwiseAbs().maxCoeff(), 0.0);
}

TEST(PadBatch, UnpadRoundTripIsExact) {
  const auto xs = random_sequences({3, 1, 6, 2}, 4, 2);
  auto b = pad_batch(xs);
  const auto back = unpad(b.tokens, b.layout);
  ASSERT_EQ(back.size(), xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) EXPECT_EQ(back[i], xs[i]);
}

TEST(PadBatch, RejectsEmptyInput) {
  EXPECT_THROW(pad_batch(std::vector<Md>{}), ValidationError);
  EXPECT_THROW(pad_batch(std::vector<Md>{Md(0, 3)}), ValidationError);
}

// ---------------------------------------------------------------- embeddings

TEST(Embedding, FaceCountRangeChecked) {
  DiT<double> m(small_config(), 1);
  nn::Tape<double> t(false);
  EXPECT_THROW(m.embed_face_count(t, {0}), ValidationError);
  EXPECT_THROW(m.embed_face_count(t, {17}), ValidationError);
  EXPECT_NO_THROW(m.embed_face_count(t, {16}));
}

TEST(Embedding, DistinctCountsDistinctRowsAndStableNull) {
  DiT<double> m(small_config(), 1);
  nn::Tape<double> t(false);
  auto e = m.embed_face_count(t, {3, 4, std::nullopt, std::nullopt});
  EXPECT_NE(Md(e.value().row(0)), Md(e.value().row(1)));
  EXPECT_EQ(Md(e.value().row(2)), Md(e.value().row(3)));
  EXPECT_EQ(m.face_index(std::nullopt), 17);
}

TEST(Embedding, GradientReachesOnlyUsedRows) {
  DiT<double> m(small_config(), 1);
  randomize(m.parameters(), 2, 0.1);
  auto b = pad_batch(random_sequences({3, 5, 2}, 4, 3));
  DiTInput<double> in{&b, {0.2, 0.5, 0.9}, {}};
  for (int n : {3, 7, 3}) in.conds.push_back({n, std::nullopt});
  m.parameters().zero_grad();
  nn::Tape<double> tape;
  tape.backward(nn::weighted_sum(m.forward(tape, in), random_matrix(b.layout.rows(), 4, 4)));
  const auto& g = m.parameters().at("dit.face_embed").grad;
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    if (r == 3 || r == 7)
      EXPECT_GT(g.row(r).cwiseAbs().maxCoeff(), 0.0) << r;
    else
      EXPECT_EQ(g.row(r).cwiseAbs().maxCoeff(), 0.0) << r;
  }
}

TEST(Embedding, TimeEmbeddingDeterministicAndSmoothAtInit) {
  DiT<double> m(desk_config(6, false), 5);
  auto embed = [&](double t) {
    nn::Tape<double> tape(false);
    std::vector<double> ts{t};
    return Md(m.embed_time(tape, ts).value());
  };
  EXPECT_EQ(embed(0.3), embed(0.3));
  EXPECT_GT(std::abs(embed(0.0).norm() - embed(1.0).norm()), 0.0);
  for (double t = 0.0; t < 1.0; t += 0.05) EXPECT_LE((embed(t) - embed(t + 1e-4)).norm(), 1e-2) << t;
  nn::Tape<double> tape(false);
  std::vector<double> bad{1.5};
  EXPECT_THROW(m.embed_time(tape, bad), ValidationError);
}

// ---------------------------------------------------------------- forward

TEST(DiTForward, ZeroInitPredictsExactlyZero) {
  for (bool cross : {false, true}) {
    const auto cfg = small_config(3, cross);
    DiT<double> m(cfg, 9);
    auto b = pad_batch(random_sequences({4, 2, 7}, 4, 10));
    DiTInput<double> in{&b, {0.1, 0.6, 0.99}, conditions(cfg, {4, 2, 7}, 11)};
    nn::Tape<double> t(false);
    EXPECT_EQ(m.forward(t, in).value().cwiseAbs().maxCoeff(), 0.0);
  }
}

TEST(DiTForward, PaddingEquivalenceAtSeveralDepths) {
  for (int depth : {1, 2, 4})
    for (bool cross : {false, true}) {
      const auto cfg = small_config(depth, cross);
      DiT<double> m(cfg, 20 + depth);
      randomize(m.parameters(), 30 + depth, 0.2);
      const std::vector<int> lengths{5, 2, 8, 1};
      const auto xs = random_sequences(lengths, 4, 40);
      const auto conds = conditions(cfg, lengths, 50);
      const std::vector<double> ts{0.1, 0.4, 0.7, 0.95};
      auto b = pad_batch(xs);
      nn::Tape<double> t(false);
      const auto out = unpad(Md(m.forward(t, {&b, ts, conds}).value()), b.layout);
      for (std::size_t i = 0; i < xs.size(); ++i) {
        auto single = pad_batch(std::vector<Md>{xs[i]});
        nn::Tape<double> t1(false);
        Md ref = m.forward(t1, {&single, {ts[i]}, {conds[i]}}).value();
        EXPECT_LT((out[i] - ref).cwiseAbs().maxCoeff(), 1e-5) << "depth " << depth << " sample " << i;
      }
    }
}

TEST(DiTForward, ContextShapeValidated) {
  const auto cfg = small_config(1, true);
  DiT<double> m(cfg, 1);
  auto b = pad_batch(random_sequences({2}, 4, 1));
  ConditionBundle c{2, Md::Zero(2, cfg.context_dim)};
  nn::Tape<double> t(false);
  EXPECT_THROW(m.forward(t, {&b, {0.5}, {c}}), ValidationError);
}

TEST(DiTForward, DeskProfileGradientCheck) {
  const auto cfg = desk_config(2, true);
  DiT<double> m(cfg, 61);
  randomize(m.parameters(), 62, 0.05);
  const std::vector<int> lengths{3, 5};
  auto b = pad_batch(random_sequences(lengths, cfg.latent_dim, 63));
  const auto conds = conditions(cfg, lengths, 64);
  const Md target = random_matrix(b.layout.rows(), cfg.latent_dim, 65);
  const auto valid = b.layout.row_valid();
  DiTInput<double> in{&b, {0.3, 0.8}, conds};
  // Many entries are near 1e-5, where central differences at the default
  // step are dominated by round-off; the error shrinks as the step grows.
  nn::GradCheckOptions opt;
  opt.epsilon = 1e-4;
  opt.max_coords = 8;
  auto rep = nn::grad_check(
      "dit",
      [&](nn::Tape<double>&, const std::vector<nn::Var<double>>& x) {
        return flow::flow_loss(m.forward(x[0], in), target, valid);
      },
      {{"tokens", b.tokens}}, &m.parameters(), opt);
  for (const auto& e : rep.entries) EXPECT_LE(e.max_rel_error, 1e-4) << e.tensor;
  EXPECT_TRUE(rep.finite) << rep.diagnostic;
}

// ---------------------------------------------------------------- training

namespace {

autoencoder::LatentDataset toy_latents(int count, int width, std::uint64_t seed) {
  autoencoder::LatentDataset ds;
  ds.latent_dim = width;
  for (int i = 0; i < count; ++i) {
    const int n = 3 + (i * 2) % 5;
    ds.records.push_back({std::to_string(i), random_matrix(n, width, seed + static_cast<std::uint64_t>(i)),
                          Md::Constant(n, width, -20.0), std::nullopt});
  }
  return ds;
}

DiTTrainConfig quick(std::size_t steps, double lr = 1e-3) {
  DiTTrainConfig c;
  c.steps = steps;
  c.batch_size = 4;
  c.log_every = 0;
  c.optim.lr = lr;
  c.optim.warmup = 100;
  c.optim.total_steps = steps;
  c.optim.min_lr_ratio = 0.05;
  return c;
}

}  // namespace

TEST(TrainDiT, ConditionDropoutRate) {
  std::size_t face = 0, ctx = 0, both = 0, total = 0;
  for (std::size_t step = 0; step < 1000; ++step)
    for (const auto& d : dropout_draws(17, step, 10, 0.1)) {
      face += d.face_count;
      ctx += d.context;
      both += d.face_count && d.context;
      ++total;
    }
  EXPECT_NEAR(static_cast<double>(face) / total, 0.1, 0.01);
  EXPECT_NEAR(static_cast<double>(ctx) / total, 0.1, 0.01);
  EXPECT_NEAR(static_cast<double>(both) / total, 0.01, 0.004);
}

TEST(TrainDiT, OverfitsFourLatentSequences) {
  const auto ds = toy_latents(4, 4, 70);
  auto cfg = small_config(2);
  cfg.hidden = 64;
  DiT<float> m(cfg, 71);
  auto tc = quick(5000, 2e-3);
  tc.condition_dropout = 0.0;
  nn::AdamW<float> opt(tc.optim);
  const auto res = train_dit(m, opt, ds, tc, 72);
  double tail = 0.0;
  for (std::size_t i = res.losses.size() - 200; i < res.losses.size(); ++i) tail += res.losses[i];
  EXPECT_LT(tail / 200, 0.05);
}

TEST(TrainDiT, SameSeedBitwiseIdenticalLosses) {
  const auto ds = toy_latents(5, 4, 80);
  auto run = [&] {
    DiT<float> m(small_config(2, false), 81);
    nn::AdamW<float> opt(quick(25).optim);
    return train_dit(m, opt, ds, quick(25), 82).losses;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 25u);
  EXPECT_EQ(a, b);
}

TEST(TrainDiT, RejectsMismatchedData) {
  DiT<float> m(small_config(), 1);
  nn::AdamW<float> opt(quick(1).optim);
  EXPECT_THROW(train_dit(m, opt, toy_latents(2, 5, 1), quick(1), 1), ValidationError);
  auto too_long = toy_latents(1, 4, 1);
  too_long.records[0].mu = Md::Zero(20, 4);
  too_long.records[0].logvar = Md::Zero(20, 4);
  EXPECT_THROW(train_dit(m, opt, too_long, quick(1), 1), ValidationError);
  DiT<float> cross(small_config(1, true), 1);
  EXPECT_THROW(train_dit(cross, opt, toy_latents(2, 4, 1), quick(1), 1), ValidationError);
}

// ---------------------------------------------------------------- generation

TEST(Generate, TokenCountFollowsRequestAndCostDoesNot) {
  DiT<double> m(small_config(2), 90);
  randomize(m.parameters(), 91, 0.1);
  autoencoder::VAE<double> vae(tiny_vae(), 92);
  flow::CFGWeights cfg;
  for (int n : {1, 4, 12}) {
    ConditionBundle c{n, std::nullopt};
    auto g = generate(m, vae, c, cfg, 7, 93);
    EXPECT_EQ(g.tokens.rows(), n);
    EXPECT_EQ(g.decoded.face_bins.size(), static_cast<std::size_t>(n));
    EXPECT_EQ(g.evaluations, 14u);
  }
}

TEST(Generate, BatchedMatchesUnbatched) {
  DiT<double> m(small_config(2), 100);
  randomize(m.parameters(), 101, 0.1);
  autoencoder::VAE<double> vae(tiny_vae(), 102);
  flow::CFGWeights cfg;
  std::vector<GenerationRequest> rq{{{3, std::nullopt}, 1}, {{9, std::nullopt}, 2}, {{5, std::nullopt}, 3}};
  const auto batch = generate_batch(m, vae, rq, cfg, 10);
  for (std::size_t i = 0; i < rq.size(); ++i) {
    const auto one = generate(m, vae, rq[i].cond, cfg, 10, rq[i].seed);
    EXPECT_LT((batch[i].tokens - one.tokens).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Generate, GuidanceWeightChangesResult) {
  DiT<double> m(small_config(2), 110);
  randomize(m.parameters(), 111, 0.1);
  autoencoder::VAE<double> vae(tiny_vae(), 112);
  flow::CFGWeights w0, w8;
  w0.w = 0.0;
  w8.w = 8.0;
  const ConditionBundle c{6, std::nullopt};
  EXPECT_GT((generate(m, vae, c, w0, 10, 5).tokens - generate(m, vae, c, w8, 10, 5).tokens).norm(), 0.0);
}

TEST(Generate, ValidatesRequests) {
  DiT<double> m(small_config(2), 120);
  autoencoder::VAE<double> vae(tiny_vae(), 121);
  flow::CFGWeights cfg;
  EXPECT_THROW(generate(m, vae, {17, std::nullopt}, cfg, 5, 1), ValidationError);
  EXPECT_THROW(generate(m, vae, {}, cfg, 5, 1), ValidationError);
  flow::CFGWeights dual;
  dual.mode = flow::GuidanceMode::Dual;
  EXPECT_THROW(generate(m, vae, {4, std::nullopt}, dual, 5, 1), ValidationError);
}

TEST(Generate, DualGuidanceUsesThreeBranches) {
  const auto cfg = small_config(1, true);
  DiT<double> m(cfg, 130);
  randomize(m.parameters(), 131, 0.1);
  autoencoder::VAE<double> vae(tiny_vae(), 132);
  flow::CFGWeights dual;
  dual.mode = flow::GuidanceMode::Dual;
  auto g = generate(m, vae, {5, random_matrix(cfg.context_tokens, cfg.context_dim, 133)}, dual, 4, 1);
  EXPECT_EQ(g.evaluations, 12u);
}

// ---------------------------------------------------------------- completion

namespace {

geometry::CanonicalMesh partial_mesh(int R) {
  geometry::ShapeParams p;
  p.kind = geometry::ShapeKind::Box;
  auto full = geometry::canonicalize(geometry::normalize(geometry::generate_synthetic(p, 1)), R);
  full.faces.resize(6);
  return geometry::canonicalize(geometry::dequantize(full), R);
}

}  // namespace

TEST(Complete, KnownTokensPreservedAndSeedsDiffer) {
  DiT<double> m(small_config(2), 140);
  randomize(m.parameters(), 141, 0.1);
  autoencoder::VAE<double> vae(tiny_vae(), 142);
  const auto part = partial_mesh(32);
  ASSERT_EQ(part.faces.size(), 6u);
  flow::CFGWeights cfg;
  const auto a = complete(m, vae, part, 12, {}, cfg, 10, 1);
  const auto b = complete(m, vae, part, 12, {}, cfg, 10, 2);
  EXPECT_EQ(a.flow_tokens.rows(), 12);
  EXPECT_EQ(Md(a.flow_tokens.topRows(6)), Md(a.known_tokens.topRows(6)));
  EXPECT_EQ(Md(b.flow_tokens.topRows(6)), Md(b.known_tokens.topRows(6)));
  EXPECT_GT((a.tokens.bottomRows(6) - b.tokens.bottomRows(6)).norm(), 0.0);
  EXPECT_EQ(a.decoded.face_bins.size(), 12u);
}

TEST(Complete, RejectsNothingToComplete) {
  DiT<double> m(small_config(2), 150);
  autoencoder::VAE<double> vae(tiny_vae(), 151);
  const auto part = partial_mesh(32);
  flow::CFGWeights cfg;
  EXPECT_THROW(complete(m, vae, part, 6, {}, cfg, 5, 1), ValidationError);
  EXPECT_THROW(complete(m, vae, part, 3, {}, cfg, 5, 1), ValidationError);
}

// ---------------------------------------------------------------- condition encoder

TEST(ConditionEncoder, ShapeAndDeterminism) {
  ToyConditionEncoder enc;
  geometry::ShapeParams p;
  const auto mesh = geometry::normalize(geometry::generate_synthetic(p, 3));
  const Md a = enc(mesh, 4), b = enc(mesh, 4);
  EXPECT_EQ(a.rows(), enc.tokens);
  EXPECT_EQ(a.cols(), enc.dim());
  EXPECT_EQ(a, b);
  EXPECT_EQ(enc.dim(), DiTConfig{}.context_dim);
  // slabs are ordered by height
  for (int k = 1; k < enc.tokens; ++k) EXPECT_LE(a(k - 1, 2), a(k, 2));
}

TEST(DiTConfig, KeyValueRoundTrip) {
  DiTConfig c = small_config(3, true);
  c.latent_scale = 1.2345678901234567;
  KeyValues kv;
  c.write(kv);
  const auto back = DiTConfig::read(KeyValues::parse(kv.str()));
  EXPECT_EQ(back.layers, 3);
  EXPECT_EQ(back.use_cross_attention, true);
  EXPECT_EQ(back.latent_scale, c.latent_scale);
  EXPECT_EQ(back.context_tokens, c.context_tokens);
}
