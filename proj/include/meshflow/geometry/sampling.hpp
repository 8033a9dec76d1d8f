#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "meshflow/geometry/nearest.hpp"
#include "meshflow/rng.hpp"

namespace meshflow::geometry {

struct PointCloud {
  std::vector<Vec3> points;
  std::size_t size() const { return points.size(); }
  bool operator==(const PointCloud& o) const { return points == o.points; }
};

inline constexpr std::size_t kDefaultCloudSize = 1024;

/// Area-weighted face choice, then a uniform barycentric point (the (u, v)
/// square folded onto the triangle).
inline PointCloud sample_surface_points(const Mesh& mesh, std::size_t count, std::uint64_t seed) {
  validate(mesh);
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw DegenerateInputError("sample_surface_points: zero total area");
  auto rng = make_rng(seed, "surface");
  PointCloud out;
  out.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double pick = uniform01(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    // pick < total, so upper_bound never lands on a zero-area face.
    const auto fi = static_cast<std::size_t>(it - cumulative.begin());
    double u = uniform01(rng), v = uniform01(rng);
    if (u + v > 1.0) {
      u = 1.0 - u;
      v = 1.0 - v;
    }
    const auto& f = mesh.faces[fi];
    const Vec3& a = mesh.vertices[f[0]];
    out.points.push_back(a + u * (mesh.vertices[f[1]] - a) + v * (mesh.vertices[f[2]] - a));
  }
  return out;
}

/// Largest nearest-neighbour distance from any point of `from` to `to`.
inline double directed_hausdorff(const PointCloud& from, const PointCloud& to) {
  PointGrid grid(to.points);
  double worst = 0.0;
  for (const auto& p : from.points) worst = std::max(worst, grid.nearest_squared(p));
  return std::sqrt(worst);
}

/// Symmetric Hausdorff distance approximated on `samples` surface points per
/// mesh. Both meshes are sampled with the same seed.
inline double hausdorff_distance(const Mesh& a, const Mesh& b, std::size_t samples,
                                 std::uint64_t seed) {
  if (a.faces.empty() || b.faces.empty())
    throw ValidationError("hausdorff_distance: meshes must be non-empty");
  const auto pa = sample_surface_points(a, samples, derive_seed(seed, "hausdorff"));
  const auto pb = sample_surface_points(b, samples, derive_seed(seed, "hausdorff"));
  return std::max(directed_hausdorff(pa, pb), directed_hausdorff(pb, pa));
}

}  // namespace meshflow::geometry
