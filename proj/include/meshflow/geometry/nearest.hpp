#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "meshflow/geometry/mesh.hpp"

namespace meshflow::geometry {

/// Squared Euclidean distance with a fixed summation order; every nearest
/// neighbour query in the library goes through this so accelerated and
/// brute-force paths agree bit for bit.
inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Uniform bucket grid over a static point set; exact nearest-neighbour
/// distance queries by ring expansion.
class PointGrid {
 public:
  explicit PointGrid(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    if (points_.empty()) return;
    lo_ = hi_ = points_.front();
    for (const auto& p : points_) {
      lo_ = lo_.cwiseMin(p);
      hi_ = hi_.cwiseMax(p);
    }
    const int per_axis =
        std::clamp(static_cast<int>(std::cbrt(static_cast<double>(points_.size()) / 2.0)), 1, 64);
    for (int a = 0; a < 3; ++a) {
      dims_[a] = per_axis;
      double extent = hi_[a] - lo_[a];
      cell_[a] = extent > 0.0 ? extent / per_axis : 1.0;
    }
    std::vector<std::size_t> count(static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]) + 1, 0);
    std::vector<std::size_t> cell_of(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) {
      cell_of[i] = flat(cell_index(points_[i]));
      ++count[cell_of[i] + 1];
    }
    for (std::size_t c = 1; c < count.size(); ++c) count[c] += count[c - 1];
    start_ = count;
    order_.resize(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i) order_[count[cell_of[i]]++] = i;
  }

  bool empty() const { return points_.empty(); }

  double nearest_squared(const Vec3& q) const {
    double best = std::numeric_limits<double>::infinity();
    if (points_.empty()) return best;
    const auto c = cell_index(q);
    const int max_ring = std::max({dims_[0], dims_[1], dims_[2]});
    for (int r = 0; r <= max_ring; ++r) {
      visit_ring(c, r, q, best);
      // Any unvisited point lies beyond one face of the ring-r box.
      double bound = std::numeric_limits<double>::infinity();
      for (int a = 0; a < 3; ++a) {
        if (c[a] - r > 0) bound = std::min(bound, q[a] - (lo_[a] + (c[a] - r) * cell_[a]));
        if (c[a] + r < dims_[a] - 1)
          bound = std::min(bound, (lo_[a] + (c[a] + r + 1) * cell_[a]) - q[a]);
      }
      if (bound == std::numeric_limits<double>::infinity()) break;
      if (bound > 0.0 && best <= bound * bound) break;
    }
    return best;
  }

 private:
  std::array<int, 3> cell_index(const Vec3& p) const {
    std::array<int, 3> c{};
    for (int a = 0; a < 3; ++a)
      c[a] = std::clamp(static_cast<int>(std::floor((p[a] - lo_[a]) / cell_[a])), 0, dims_[a] - 1);
    return c;
  }
  std::size_t flat(const std::array<int, 3>& c) const {
    return static_cast<std::size_t>((c[2] * dims_[1] + c[1]) * dims_[0] + c[0]);
  }
  void visit_cell(const std::array<int, 3>& c, const Vec3& q, double& best) const {
    const std::size_t f = flat(c);
    for (std::size_t k = start_[f]; k < start_[f + 1]; ++k)
      best = std::min(best, squared_distance(q, points_[order_[k]]));
  }
  void visit_ring(const std::array<int, 3>& c, int r, const Vec3& q, double& best) const {
    for (int z = c[2] - r; z <= c[2] + r; ++z) {
      if (z < 0 || z >= dims_[2]) continue;
      for (int y = c[1] - r; y <= c[1] + r; ++y) {
        if (y < 0 || y >= dims_[1]) continue;
        const bool yz_shell = std::abs(z - c[2]) == r || std::abs(y - c[1]) == r;
        for (int x = c[0] - r; x <= c[0] + r; ++x) {
          if (x < 0 || x >= dims_[0]) continue;
          if (!yz_shell && std::abs(x - c[0]) != r) continue;
          visit_cell({x, y, z}, q, best);
        }
      }
    }
  }

  std::vector<Vec3> points_;
  Vec3 lo_ = Vec3::Zero(), hi_ = Vec3::Zero();
  Vec3 cell_ = Vec3::Ones();
  std::array<int, 3> dims_{1, 1, 1};
  std::vector<std::size_t> start_;
  std::vector<std::size_t> order_;
};

}  // namespace meshflow::geometry
