#include <algorithm>
#include <cmath>
#include <numbers>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "meshflow/flow/flow.hpp"
#include "meshflow/nn/layers.hpp"
#include "meshflow/nn/optim.hpp"

using namespace meshflow;
using namespace meshflow::flow;
using Md = nn::Matrix<double>;

namespace {

Md random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  return standard_normal_matrix<double>(r, c, seed, "test");
}

double logit_normal_cdf(double t, double m, double s) {
  return 0.5 * std::erfc(-(std::log(t / (1 - t)) - m) / (s * std::sqrt(2.0)));
}

}  // namespace

TEST(Interpolant, EndpointsAndMidpoint) {
  Md a = random_matrix(3, 4, 1), b = random_matrix(3, 4, 2);
  EXPECT_EQ(interpolant(a, b, 0.0), a);
  EXPECT_EQ(interpolant(a, b, 1.0), b);
  EXPECT_LE((interpolant(a, b, 0.5) - (a + b) / 2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(interpolant(a, b, 1.5), ValidationError);
  EXPECT_THROW(interpolant(a, b, -1e-9), ValidationError);
}

TEST(Interpolant, VelocityIdentity) {
  Md a = random_matrix(3, 4, 3), b = random_matrix(3, 4, 4);
  EXPECT_TRUE(velocity_target(a, a).isZero(0.0));
  EXPECT_EQ(velocity_target(Md(Md::Zero(2, 2)), Md(Md::Ones(2, 2))), Md::Ones(2, 2));
  for (double t : {0.0, 0.1, 0.37, 0.5, 0.93, 1.0})
    EXPECT_LE((interpolant(a, b, t) + (1 - t) * velocity_target(a, b) - b).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(LogitNormal, DensityValuesAndSymmetry) {
  EXPECT_NEAR(logit_normal_density(0.5, 0, 1), 4 / std::sqrt(2 * std::numbers::pi), 1e-12);
  for (double t : {0.01, 0.2, 0.4, 0.77}) EXPECT_NEAR(logit_normal_density(t, 0, 1), logit_normal_density(1 - t, 0, 1), 1e-12);
  EXPECT_THROW(logit_normal_density(0.0, 0, 1), ValidationError);
  EXPECT_THROW(logit_normal_density(1.0, 0, 1), ValidationError);
}

TEST(LogitNormal, ScalarOracle) {
  for (double t : {0.03, 0.25, 0.5, 0.8, 0.999}) {
    const double m = 0.5, s = 1.0;
    const double lg = std::log(t) - std::log1p(-t);
    const double oracle = 1.0 / (s * std::sqrt(2 * std::numbers::pi) * t * (1 - t)) * std::exp(-(lg - m) * (lg - m) / (2 * s * s));
    EXPECT_NEAR(logit_normal_density(t, m, s), oracle, 1e-7 * oracle);
  }
}

TEST(LogitNormal, IntegratesToOne) {
  boost::math::quadrature::tanh_sinh<double> q;
  for (auto [m, s] : {std::pair{0.5, 1.0}, std::pair{0.0, 1.0}, std::pair{-1.0, 0.5}}) {
    const double v = q.integrate([&](double t) { return logit_normal_density(t, m, s); }, 0.0, 1.0);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(TimeSampler, MatchesDistributionKS) {
  TimeSampler ts{0.5, 1.0};
  auto rng = make_rng(1, "time");
  std::vector<double> xs(100000);
  for (auto& x : xs) x = sample_time(ts, rng);
  std::sort(xs.begin(), xs.end());
  double ks = 0;
  const double n = static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = logit_normal_cdf(xs[i], 0.5, 1.0);
    ks = std::max({ks, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  EXPECT_LT(ks, 0.01);
}

TEST(TimeSampler, SmallScaleAndDeterminism) {
  EXPECT_NEAR(sample_time({0.5, 1e-9}, 3), 1 / (1 + std::exp(-0.5)), 1e-9);
  EXPECT_EQ(sample_time({0.5, 1.0}, 7), sample_time({0.5, 1.0}, 7));
}

TEST(FlowLoss, MaskingMatchesTruncation) {
  Md pred = Md::Zero(4, 3), target = Md::Ones(4, 3);
  std::vector<unsigned char> half = {1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(flow_loss_value(pred, target, half), 1.0);
  EXPECT_DOUBLE_EQ(flow_loss_value(target, target, half), 0.0);
  Md a = random_matrix(6, 3, 5), b = random_matrix(6, 3, 6);
  std::vector<unsigned char> mask = {1, 1, 1, 1, 0, 0};
  Md ta = a.topRows(4), tb = b.topRows(4);
  const double truncated = (ta - tb).squaredNorm() / 12.0;
  EXPECT_NEAR(flow_loss_value(a, b, mask), truncated, 1e-7);
  std::vector<unsigned char> none(6, 0);
  EXPECT_THROW(flow_loss_value(a, b, none), ValidationError);
}

TEST(CFG, SingleIdentities) {
  Md a = random_matrix(3, 2, 7), b = random_matrix(3, 2, 8);
  EXPECT_EQ(cfg_single(a, b, 0.0), a);
  EXPECT_LE((cfg_single(a, b, 1.0) - b).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((cfg_single(a, b, 2.0) + cfg_single(a, b, 5.0) - 2 * cfg_single(a, b, 3.5)).cwiseAbs().maxCoeff(), 1e-7);
  for (double w : {-3.0, 0.0, 8.0}) EXPECT_LE((cfg_single(a, a, w) - a).cwiseAbs().maxCoeff(), 1e-15);
  // Scalar oracle on each element.
  Md g = cfg_single(a, b, 8.0);
  for (Eigen::Index i = 0; i < a.size(); ++i) EXPECT_NEAR(g.data()[i], a.data()[i] + 8.0 * (b.data()[i] - a.data()[i]), 1e-7);
}

TEST(CFG, DualReductions) {
  Md nn = random_matrix(3, 2, 9), fn = random_matrix(3, 2, 10), fi = random_matrix(3, 2, 11);
  EXPECT_LE((cfg_dual(nn, fn, fi, 1.0, 1.0) - fi).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LE((cfg_dual(nn, fn, fi, 3.0, 0.0) - cfg_single(nn, fn, 3.0)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(cfg_dual(nn, fn, fi, 0.0, 0.0), nn);
  Md g = cfg_dual(nn, fn, fi, 1.0, 5.0);
  for (Eigen::Index i = 0; i < g.size(); ++i)
    EXPECT_NEAR(g.data()[i], nn.data()[i] + (fn.data()[i] - nn.data()[i]) + 5.0 * (fi.data()[i] - fn.data()[i]), 1e-7);
}

TEST(Euler, ExactOnConstantField) {
  Md c = random_matrix(4, 3, 12);
  VelocityFn<double> f = [&](const Md&, double, Branch) { return c; };
  CFGWeights none{GuidanceMode::None};
  Md z0 = random_matrix(4, 3, 13);
  for (int steps : {1, 7, 50}) {
    auto r = euler_integrate(f, z0, steps, none);
    EXPECT_LE((r.z - (z0 + c)).cwiseAbs().maxCoeff(), 1e-12);
  }
  // Guided constant fields are also exact: cfg of identical branches is inert.
  CFGWeights dual{GuidanceMode::Dual};
  EXPECT_LE((euler_integrate(f, z0, 50, dual).z - (z0 + c)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Euler, LinearFieldClosedFormAndFirstOrder) {
  VelocityFn<double> f = [](const Md& z, double, Branch) { return Md(-z); };
  CFGWeights none{GuidanceMode::None};
  Md z0 = random_matrix(5, 2, 14);
  auto r50 = euler_integrate(f, z0, 50, none);
  EXPECT_LE((r50.z - z0 * std::pow(1 - 1.0 / 50, 50)).cwiseAbs().maxCoeff(), 1e-6);
  auto r25 = euler_integrate(f, z0, 25, none);
  const Md exact = z0 * std::exp(-1.0);
  const double ratio = (r25.z - exact).norm() / (r50.z - exact).norm();
  EXPECT_GE(ratio, 1.8);
  EXPECT_LE(ratio, 2.2);
}

TEST(Euler, EvaluationCountIndependentOfLength) {
  VelocityFn<double> f = [](const Md& z, double, Branch) { return Md(-z); };
  for (auto mode : {GuidanceMode::None, GuidanceMode::Single, GuidanceMode::Dual}) {
    CFGWeights cfg{mode};
    std::size_t expected = 0;
    for (Eigen::Index n : {12, 800}) {
      auto r = euler_sample(f, n, 8, 50, cfg, 1);
      if (expected == 0) expected = r.evaluations;
      EXPECT_EQ(r.evaluations, expected);
      EXPECT_EQ(r.evaluations, 50u * cfg.evaluations_per_step());
    }
  }
}

TEST(Euler, TraceAndNonFiniteAbort) {
  VelocityFn<double> f = [](const Md& z, double, Branch) { return Md(-z); };
  auto r = euler_sample(f, 3, 2, 10, CFGWeights{GuidanceMode::None}, 2, true);
  ASSERT_EQ(r.trace.size(), 10u);
  EXPECT_DOUBLE_EQ(r.trace[3].t, 0.3);
  VelocityFn<double> bad = [](const Md& z, double t, Branch) { return t > 0.5 ? Md(z * NAN) : z; };
  try {
    euler_sample(bad, 3, 2, 10, CFGWeights{GuidanceMode::None}, 2);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 6"), std::string::npos);
  }
  EXPECT_THROW(euler_sample(f, 3, 2, 0, CFGWeights{}, 2), ValidationError);
}

TEST(Repaint, KnownRowsPreservedBitwise) {
  VelocityFn<double> f = [](const Md& z, double t, Branch) { return Md(std::sin(3 * t) - 0.5 * z.array()); };
  for (std::uint64_t s = 0; s < 20; ++s) {
    Md known = random_matrix(9, 4, 100 + s);
    std::vector<unsigned char> mask(9);
    auto rng = make_rng(s, "test.mask");
    for (auto& m : mask) m = rng() % 2;
    mask[0] = 0;
    auto r = repaint_complete(f, known, mask, 1 + static_cast<int>(s), CFGWeights{GuidanceMode::Single}, s);
    for (int i = 0; i < 9; ++i)
      if (mask[i]) EXPECT_EQ(Md(r.z.row(i)), Md(known.row(i)));
  }
}

TEST(Repaint, AllKnownAndNoneKnown) {
  VelocityFn<double> f = [](const Md& z, double, Branch) { return Md(-z); };
  Md known = random_matrix(5, 3, 200);
  std::vector<unsigned char> all(5, 1), none(5, 0);
  EXPECT_EQ(repaint_complete(f, known, all, 10, CFGWeights{}, 1).z, known);
  EXPECT_EQ(repaint_complete(f, known, none, 10, CFGWeights{}, 1).z, euler_sample(f, 5, 3, 10, CFGWeights{}, 1).z);
}

// A small velocity network learns a two-mode mixture in the plane.
TEST(ToyFlow, TwoModeMixture) {
  using Mf = nn::Matrix<float>;
  nn::ParameterStore<float> store(5);
  nn::Linear<float> l1(store, "l1", 2 + 16, 128), l2(store, "l2", 128, 128), l3(store, "l3", 128, 2);
  const double sigma = 0.15, center = 1.5;
  auto features = [](const Mf& z, const std::vector<double>& t) {
    Mf x(z.rows(), 18);
    x.leftCols(2) = z;
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (int k = 0; k < 8; ++k) {
        x(r, 2 + 2 * k) = static_cast<float>(std::sin(t[r] * (k + 1) * 1.5));
        x(r, 3 + 2 * k) = static_cast<float>(std::cos(t[r] * (k + 1) * 1.5));
      }
    return x;
  };
  auto net = [&](nn::Tape<float>& tape, const Mf& x) { return l3(nn::silu(l2(nn::silu(l1(tape.constant(x)))))); };

  nn::AdamWConfig oc;
  oc.lr = 2e-3;
  oc.total_steps = 6000;
  oc.warmup = 100;
  nn::AdamW<float> opt(oc);
  TimeSampler ts;
  const int batch = 256;
  for (std::size_t step = 0; step < oc.total_steps; ++step) {
    auto rng = make_rng(11, "toy.batch", step);
    Mf x0(batch, 2), x1(batch, 2);
    std::vector<double> t(batch);
    Mf xt(batch, 2);
    for (int i = 0; i < batch; ++i) {
      const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
      x1(i, 0) = static_cast<float>(sign * center + sigma * standard_normal(rng));
      x1(i, 1) = static_cast<float>(sigma * standard_normal(rng));
      x0(i, 0) = static_cast<float>(standard_normal(rng));
      x0(i, 1) = static_cast<float>(standard_normal(rng));
      t[i] = sample_time(ts, rng);
      xt.row(i) = static_cast<float>(t[i]) * x1.row(i) + static_cast<float>(1 - t[i]) * x0.row(i);
    }
    store.zero_grad();
    nn::Tape<float> tape;
    std::vector<unsigned char> valid(batch, 1);
    auto loss = flow_loss(net(tape, features(xt, t)), Mf(x1 - x0), valid);
    tape.backward(loss);
    opt.step(store, step);
  }

  VelocityFn<float> vf = [&](const Mf& z, double t, Branch) {
    nn::Tape<float> tape(false);
    return Mf(net(tape, features(z, std::vector<double>(z.rows(), t))).value());
  };
  auto r = euler_sample(vf, 1000, 2, 50, CFGWeights{GuidanceMode::None}, 99);
  int inside = 0, left = 0;
  for (Eigen::Index i = 0; i < r.z.rows(); ++i) {
    const double dx = std::min(std::abs(r.z(i, 0) - center), std::abs(r.z(i, 0) + center));
    if (std::hypot(dx, static_cast<double>(r.z(i, 1))) <= 3 * sigma) ++inside;
    left += r.z(i, 0) < 0;
  }
  EXPECT_GE(inside, 950) << "left " << left;
  EXPECT_GT(left, 350);
  EXPECT_LT(left, 650);
}
