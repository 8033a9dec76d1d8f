#pragma once

#include <cmath>
#include <numbers>
#include <utility>

#include "meshflow/geometry/canonical.hpp"
#include "meshflow/rng.hpp"

namespace meshflow::geometry {

struct AugmentOptions {
  std::pair<double, double> scale_range{0.95, 1.05};
  bool rotate = true;
  /// Uniform angle about z instead of one of four quarter turns.
  bool arbitrary_angle = false;
};

/// Per-axis random scaling followed by a random yaw, then re-normalization.
inline Mesh augment(const Mesh& mesh, std::uint64_t seed, const AugmentOptions& opt = {}) {
  auto rng = make_rng(seed, "augment");
  auto [lo, hi] = opt.scale_range;
  if (!(lo > 0.0) || hi < lo) throw ValidationError("augment: invalid scale range");
  Vec3 scale;
  for (int a = 0; a < 3; ++a) scale[a] = lo + (hi - lo) * uniform01(rng);

  double c = 1.0, s = 0.0;
  if (opt.rotate) {
    if (opt.arbitrary_angle) {
      double theta = 2.0 * std::numbers::pi * uniform01(rng);
      c = std::cos(theta);
      s = std::sin(theta);
    } else {
      // Exact quarter-turn cosines/sines avoid rounding drift.
      static constexpr double kCos[4] = {1, 0, -1, 0};
      static constexpr double kSin[4] = {0, 1, 0, -1};
      int k = static_cast<int>(std::uniform_int_distribution<int>(0, 3)(rng));
      c = kCos[k];
      s = kSin[k];
    }
  }
  Mesh out = mesh;
  for (auto& v : out.vertices) {
    Vec3 p = v.cwiseProduct(scale);
    v = Vec3(c * p.x() - s * p.y(), s * p.x() + c * p.y(), p.z());
  }
  return normalize(out);
}

}  // namespace meshflow::geometry
