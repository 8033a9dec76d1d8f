#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "meshflow/geometry/sampling.hpp"
#include "meshflow/nn/tape.hpp"

namespace meshflow::dit {

/// Stand-in for an image/point encoder: surface points of a reference mesh,
/// sorted by height and split into `tokens` slabs; each slab contributes the
/// mean of [x, y, z, sin(2^k pi p), cos(2^k pi p) for k < frequencies].
struct ToyConditionEncoder {
  int tokens = 4;
  int frequencies = 4;
  std::size_t points = 256;

  int dim() const { return 3 + 6 * frequencies; }

  nn::Matrix<double> operator()(const geometry::Mesh& mesh, std::uint64_t seed) const {
    if (tokens < 1 || frequencies < 0 || points < static_cast<std::size_t>(tokens))
      throw ValidationError("condition encoder: bad settings");
    auto cloud = geometry::sample_surface_points(mesh, points, derive_seed(seed, "condition"));
    auto& pts = cloud.points;
    std::stable_sort(pts.begin(), pts.end(), [](const geometry::Vec3& a, const geometry::Vec3& b) { return a.z() < b.z(); });
    nn::Matrix<double> out = nn::Matrix<double>::Zero(tokens, dim());
    for (int k = 0; k < tokens; ++k) {
      const std::size_t lo = pts.size() * static_cast<std::size_t>(k) / static_cast<std::size_t>(tokens);
      const std::size_t hi = pts.size() * static_cast<std::size_t>(k + 1) / static_cast<std::size_t>(tokens);
      for (std::size_t i = lo; i < hi; ++i) {
        const geometry::Vec3& p = pts[i];
        for (int a = 0; a < 3; ++a) {
          out(k, a) += p[a];
          for (int f = 0; f < frequencies; ++f) {
            const double w = std::ldexp(std::numbers::pi, f) * p[a];
            out(k, 3 + 6 * f + a) += std::sin(w);
            out(k, 3 + 6 * f + 3 + a) += std::cos(w);
          }
        }
      }
      out.row(k) /= static_cast<double>(hi - lo);
    }
    return out;
  }
};

}  // namespace meshflow::dit
