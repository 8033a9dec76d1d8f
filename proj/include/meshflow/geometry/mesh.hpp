#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "meshflow/errors.hpp"

namespace meshflow::geometry {

using Vec3 = Eigen::Vector3d;
using Face = std::array<std::uint32_t, 3>;

/// Triangle soup with 0-based indices, in model units.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  std::size_t face_count() const { return faces.size(); }
  bool operator==(const Mesh& other) const {
    if (vertices.size() != other.vertices.size() || faces != other.faces) return false;
    for (std::size_t i = 0; i < vertices.size(); ++i)
      if (vertices[i] != other.vertices[i]) return false;
    return true;
  }
};

/// Quantized bin coordinates, stored (x, y, z).
using BinVec = std::array<int, 3>;

/// Deduplicated, quantized mesh in canonical order: vertices strictly
/// ascending by (z, y, x), each face rotated so its lowest index comes first,
/// faces strictly ascending lexicographically.
struct CanonicalMesh {
  int resolution = 128;
  std::vector<BinVec> vertices;
  std::vector<Face> faces;

  std::size_t face_count() const { return faces.size(); }
  bool operator==(const CanonicalMesh&) const = default;

  /// The 9 bins of face i, vertex-major (x0 y0 z0 x1 ...).
  std::array<int, 9> face_bins(std::size_t i) const {
    std::array<int, 9> out{};
    for (int j = 0; j < 3; ++j)
      for (int a = 0; a < 3; ++a) out[3 * j + a] = vertices[faces[i][j]][a];
    return out;
  }
};

inline void validate(const Mesh& mesh) {
  for (std::size_t f = 0; f < mesh.faces.size(); ++f)
    for (auto idx : mesh.faces[f])
      if (idx >= mesh.vertices.size())
        throw ValidationError("face " + std::to_string(f) + " references vertex " +
                              std::to_string(idx) + " but mesh has " +
                              std::to_string(mesh.vertices.size()) + " vertices");
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

inline double surface_area(const Mesh& mesh) {
  double total = 0.0;
  for (const auto& f : mesh.faces)
    total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
  return total;
}

}  // namespace meshflow::geometry
