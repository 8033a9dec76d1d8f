#pragma once

#include <cmath>
#include <cstdio>
#include <iostream>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "meshflow/config.hpp"
#include "meshflow/geometry/nearest.hpp"
#include "meshflow/geometry/sampling.hpp"
#include "meshflow/parallel.hpp"

namespace meshflow::metrics {

using geometry::PointCloud;
using geometry::Vec3;
using DistanceMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

inline void require_nonempty(const PointCloud& c, const char* what) {
  if (c.points.empty()) throw ValidationError(std::string(what) + ": empty point cloud");
}

/// Mean over `from` of the squared distance to the nearest point of `to`.
inline double directed_mean(const PointCloud& from, const geometry::PointGrid& to) {
  double s = 0.0;
  for (const auto& p : from.points) s += to.nearest_squared(p);
  return s / static_cast<double>(from.size());
}

}  // namespace detail

/// Sum of the two directed means of squared nearest-neighbour distances.
inline double chamfer(const PointCloud& a, const PointCloud& b) {
  detail::require_nonempty(a, "chamfer");
  detail::require_nonempty(b, "chamfer");
  const geometry::PointGrid ga(a.points), gb(b.points);
  return detail::directed_mean(a, gb) + detail::directed_mean(b, ga);
}

/// O(|a||b|) reference with the same summation order as chamfer().
inline double chamfer_brute_force(const PointCloud& a, const PointCloud& b) {
  detail::require_nonempty(a, "chamfer");
  detail::require_nonempty(b, "chamfer");
  auto directed = [](const PointCloud& x, const PointCloud& y) {
    double s = 0.0;
    for (const auto& p : x.points) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : y.points) best = std::min(best, geometry::squared_distance(p, q));
      s += best;
    }
    return s / static_cast<double>(x.size());
  };
  return directed(a, b) + directed(b, a);
}

/// D(i, j) = chamfer(rows[i], cols[j]); grids are built once per cloud.
inline DistanceMatrix chamfer_matrix(const std::vector<PointCloud>& rows, const std::vector<PointCloud>& cols) {
  for (const auto& c : rows) detail::require_nonempty(c, "chamfer_matrix");
  for (const auto& c : cols) detail::require_nonempty(c, "chamfer_matrix");
  std::vector<geometry::PointGrid> grow, gcol;
  for (const auto& c : rows) grow.emplace_back(c.points);
  for (const auto& c : cols) gcol.emplace_back(c.points);
  DistanceMatrix d(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  parallel_for(rows.size(), [&](std::size_t i) {
    for (std::size_t j = 0; j < cols.size(); ++j)
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          detail::directed_mean(rows[i], gcol[j]) + detail::directed_mean(cols[j], grow[i]);
  });
  return d;
}

/// Mean over reference clouds (columns) of the minimum distance to any generated cloud (rows).
inline double mmd_from(const DistanceMatrix& gen_ref) {
  if (gen_ref.rows() == 0 || gen_ref.cols() == 0) throw ValidationError("mmd: empty set");
  double s = 0.0;
  for (Eigen::Index j = 0; j < gen_ref.cols(); ++j) s += gen_ref.col(j).minCoeff();
  return s / static_cast<double>(gen_ref.cols());
}

/// Fraction of reference clouds that are the nearest reference of some
/// generated cloud; ties go to the smaller reference index.
inline double coverage_from(const DistanceMatrix& gen_ref) {
  if (gen_ref.rows() == 0 || gen_ref.cols() == 0) throw ValidationError("coverage: empty set");
  std::vector<bool> hit(static_cast<std::size_t>(gen_ref.cols()), false);
  for (Eigen::Index i = 0; i < gen_ref.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < gen_ref.cols(); ++j)
      if (gen_ref(i, j) < gen_ref(i, best)) best = j;
    hit[static_cast<std::size_t>(best)] = true;
  }
  return static_cast<double>(std::count(hit.begin(), hit.end(), true)) / static_cast<double>(gen_ref.cols());
}

/// Leave-one-out 1-NN accuracy over the pooled set (generated first, then
/// reference). Ties go to the smaller pooled index.
inline double one_nna_from(const DistanceMatrix& gen_gen, const DistanceMatrix& gen_ref,
                           const DistanceMatrix& ref_ref) {
  const Eigen::Index G = gen_gen.rows(), R = ref_ref.rows();
  if (G < 2 || R < 2) throw ValidationError("1-NNA: both sets need at least 2 clouds");
  if (gen_ref.rows() != G || gen_ref.cols() != R) throw ValidationError("1-NNA: distance matrix shapes disagree");
  auto dist = [&](Eigen::Index a, Eigen::Index b) {
    if (a < G && b < G) return gen_gen(a, b);
    if (a < G) return gen_ref(a, b - G);
    if (b < G) return gen_ref(b, a - G);
    return ref_ref(a - G, b - G);
  };
  std::size_t correct = 0;
  for (Eigen::Index a = 0; a < G + R; ++a) {
    Eigen::Index best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index b = 0; b < G + R; ++b) {
      if (b == a) continue;
      const double d = dist(a, b);
      if (d < bd) {
        bd = d;
        best = b;
      }
    }
    correct += (best < G) == (a < G);
  }
  return static_cast<double>(correct) / static_cast<double>(G + R);
}

inline double mmd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref) {
  if (gen.empty() || ref.empty()) throw ValidationError("mmd: empty set");
  return mmd_from(chamfer_matrix(gen, ref));
}

inline double coverage(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref) {
  if (gen.empty() || ref.empty()) throw ValidationError("coverage: empty set");
  return coverage_from(chamfer_matrix(gen, ref));
}

inline double one_nna(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref) {
  if (gen.size() < 2 || ref.size() < 2) throw ValidationError("1-NNA: both sets need at least 2 clouds");
  return one_nna_from(chamfer_matrix(gen, gen), chamfer_matrix(gen, ref), chamfer_matrix(ref, ref));
}

/// Occupancy distribution of every point of a set over a res^3 grid on
/// [-1, 1]^3. Points outside the cube are clamped; the count is returned
/// through `clamped`.
inline std::vector<double> occupancy(const std::vector<PointCloud>& set, int res, std::size_t* clamped = nullptr) {
  if (res < 1) throw ValidationError("jsd: grid resolution must be >= 1");
  std::vector<double> h(static_cast<std::size_t>(res) * res * res, 0.0);
  std::size_t total = 0, outside = 0;
  for (const auto& c : set)
    for (const auto& p : c.points) {
      std::size_t flat = 0;
      for (int a = 2; a >= 0; --a) {
        if (p[a] < -1.0 || p[a] > 1.0) ++outside;
        const int k = std::clamp(static_cast<int>(std::floor((p[a] + 1.0) * 0.5 * res)), 0, res - 1);
        flat = flat * static_cast<std::size_t>(res) + static_cast<std::size_t>(k);
      }
      h[flat] += 1.0;
      ++total;
    }
  if (total == 0) throw ValidationError("jsd: no points");
  for (auto& v : h) v /= static_cast<double>(total);
  if (clamped) *clamped = outside;
  return h;
}

/// Jensen-Shannon divergence (natural log) of two discrete distributions.
inline double jsd_of(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ValidationError("jsd: distribution sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) s += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) s += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(0.0, s);
}

inline double jsd(const std::vector<PointCloud>& gen, const std::vector<PointCloud>& ref, int grid_resolution = 28) {
  std::size_t cg = 0, cr = 0;
  const auto p = occupancy(gen, grid_resolution, &cg);
  const auto q = occupancy(ref, grid_resolution, &cr);
  if (cg + cr > 0)
    std::cerr << "warning: jsd clamped " << (cg + cr) << " coordinate(s) outside [-1, 1]\n";
  return jsd_of(p, q);
}

struct MetricReport {
  double mmd = 0.0;
  double cov = 0.0;
  double one_nna = 0.0;
  double jsd = 0.0;
  std::size_t n_gen = 0, n_ref = 0, points = 0;
  std::uint64_t seed = 0;

  /// Human-readable table; MMD is shown x1e3, COV and 1-NNA as percentages.
  std::string table() const {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "metric       value\n"
                  "MMD (x1e3)   %.4f\n"
                  "COV (%%)      %.2f\n"
                  "1-NNA (%%)    %.2f\n"
                  "JSD          %.6f\n"
                  "generated %zu, reference %zu, %zu points per cloud, seed %llu\n",
                  mmd * 1e3, cov * 1e2, one_nna * 1e2, jsd, n_gen, n_ref, points,
                  static_cast<unsigned long long>(seed));
    return buf;
  }

  /// Unscaled values as `key = value` lines.
  std::string records() const {
    KeyValues kv;
    kv.set("mmd", mmd);
    kv.set("cov", cov);
    kv.set("one_nna", one_nna);
    kv.set("jsd", jsd);
    kv.set("n_gen", n_gen);
    kv.set("n_ref", n_ref);
    kv.set("points", points);
    kv.set("seed", static_cast<std::int64_t>(seed));
    return kv.str();
  }
};

struct EvaluateOptions {
  std::size_t points_per_mesh = geometry::kDefaultCloudSize;
  int jsd_resolution = 28;
  std::uint64_t seed = 0;
};

inline std::vector<PointCloud> sample_clouds(const std::vector<geometry::Mesh>& meshes, std::size_t points,
                                             std::uint64_t seed, std::string_view stream) {
  std::vector<PointCloud> out(meshes.size());
  parallel_for(meshes.size(), [&](std::size_t i) {
    out[i] = geometry::sample_surface_points(meshes[i], points, derive_seed(seed, stream, i));
  });
  return out;
}

/// Samples clouds from both mesh sets and computes every metric. Cloud i of
/// either set uses the same seed, so identical sets give identical clouds. 1-NNA needs at least two meshes per set and
/// is reported as NaN otherwise.
inline MetricReport evaluate(const std::vector<geometry::Mesh>& gen, const std::vector<geometry::Mesh>& ref,
                             const EvaluateOptions& opt = {}) {
  if (gen.empty() || ref.empty()) throw ValidationError("evaluate: empty mesh set");
  if (opt.points_per_mesh == 0) throw ValidationError("evaluate: points_per_mesh must be >= 1");
  const auto g = sample_clouds(gen, opt.points_per_mesh, opt.seed, "eval.cloud");
  const auto r = sample_clouds(ref, opt.points_per_mesh, opt.seed, "eval.cloud");
  MetricReport rep;
  const auto gr = chamfer_matrix(g, r);
  rep.mmd = mmd_from(gr);
  rep.cov = coverage_from(gr);
  rep.one_nna = (g.size() >= 2 && r.size() >= 2)
                    ? one_nna_from(chamfer_matrix(g, g), gr, chamfer_matrix(r, r))
                    : std::numeric_limits<double>::quiet_NaN();
  rep.jsd = jsd(g, r, opt.jsd_resolution);
  rep.n_gen = gen.size();
  rep.n_ref = ref.size();
  rep.points = opt.points_per_mesh;
  rep.seed = opt.seed;
  return rep;
}

}  // namespace meshflow::metrics
