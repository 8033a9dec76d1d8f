#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "meshflow/nn/params.hpp"

namespace meshflow::nn {

struct GradCheckEntry {
  std::string tensor;
  double max_rel_error = 0.0;
  std::size_t coords = 0;
};

struct GradCheckReport {
  std::string op;
  std::vector<GradCheckEntry> entries;
  bool finite = true;
  std::string diagnostic;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return finite && max_rel_error() <= tolerance; }
};

struct GradCheckOptions {
  double epsilon = 1e-6;
  std::size_t max_coords = 24;  // per tensor; larger tensors are subsampled
  double floor = 1e-7;          // denominators below this count as this
  std::uint64_t seed = 0;
};

/// Relative error used by the harness: |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using ScalarFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences, for every input tensor and every parameter in
/// `params` (may be null).
inline GradCheckReport grad_check(std::string op, const ScalarFn& fn,
                                  const std::vector<std::pair<std::string, Matrix<double>>>& inputs,
                                  ParameterStore<double>* params, const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.op = std::move(op);

  auto evaluate = [&](const std::vector<Matrix<double>>& values) {
    Tape<double> t(false);
    std::vector<Var<double>> leaves;
    for (const auto& v : values) leaves.push_back(t.constant(v));
    return fn(t, leaves).scalar();
  };

  std::vector<Matrix<double>> values;
  for (const auto& [name, m] : inputs) values.push_back(m);

  Tape<double> tape(true);
  std::vector<Var<double>> leaves;
  for (const auto& v : values) leaves.push_back(tape.variable(v));
  if (params) params->zero_grad();
  Var<double> out = fn(tape, leaves);
  if (out.rows() != 1 || out.cols() != 1) throw ValidationError("grad_check: function must return a scalar");
  if (!std::isfinite(out.scalar())) {
    report.finite = false;
    report.diagnostic = "non-finite function value";
    return report;
  }
  tape.backward(out);

  auto rng = make_rng(opt.seed, "gradcheck");
  auto pick = [&](Eigen::Index size) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > opt.max_coords) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_coords);
      std::sort(idx.begin(), idx.end());
    }
    return idx;
  };
  auto check_nonfinite = [&](double x, const std::string& what) {
    if (!std::isfinite(x) && report.finite) {
      report.finite = false;
      report.diagnostic = "non-finite value in " + what;
    }
  };

  for (std::size_t i = 0; i < values.size(); ++i) {
    const Matrix<double> analytic = tape.grad(leaves[i]);
    GradCheckEntry e{inputs[i].first, 0.0, 0};
    for (Eigen::Index c : pick(values[i].size())) {
      const double x0 = values[i].data()[c];
      values[i].data()[c] = x0 + opt.epsilon;
      const double fp = evaluate(values);
      values[i].data()[c] = x0 - opt.epsilon;
      const double fm = evaluate(values);
      values[i].data()[c] = x0;
      const double numeric = (fp - fm) / (2.0 * opt.epsilon);
      check_nonfinite(numeric, e.tensor);
      check_nonfinite(analytic.data()[c], e.tensor);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic.data()[c], numeric, opt.floor));
      ++e.coords;
    }
    report.entries.push_back(e);
  }

  if (params) {
    for (auto& p : *params) {
      GradCheckEntry e{p.name, 0.0, 0};
      const Matrix<double> analytic = p.grad;
      for (Eigen::Index c : pick(p.value.size())) {
        const double x0 = p.value.data()[c];
        p.value.data()[c] = x0 + opt.epsilon;
        const double fp = evaluate(values);
        p.value.data()[c] = x0 - opt.epsilon;
        const double fm = evaluate(values);
        p.value.data()[c] = x0;
        const double numeric = (fp - fm) / (2.0 * opt.epsilon);
        check_nonfinite(numeric, e.tensor);
        e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic.data()[c], numeric, opt.floor));
        ++e.coords;
      }
      report.entries.push_back(e);
    }
  }
  return report;
}

/// Identity in the forward pass whose backward scales the gradient by
/// `factor`. Used as a negative control for the harness.
template <typename T>
Var<T> corrupt_backward(const Var<T>& x, double factor) {
  Tape<T>& t = x.tape();
  return t.record(x.value(), {x}, [&t, x, factor](const Matrix<T>& g) { t.accumulate(x, g * static_cast<T>(factor)); });
}

/// Random fixed weights for turning a tensor output into a scalar.
inline Matrix<double> projection_weights(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  auto rng = make_rng(seed, "gradcheck.projection");
  Matrix<double> w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = standard_normal(rng);
  return w;
}

}  // namespace meshflow::nn
