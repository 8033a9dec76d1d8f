#pragma once

#include <array>
#include <cmath>
#include <iostream>
#include <vector>

#include "meshflow/geometry/canonical.hpp"

namespace meshflow::geometry {

struct FaceAttributes {
  std::size_t face = 0;        // index into CanonicalMesh::faces
  std::array<double, 9> coords{};
  Vec3 normal = Vec3::Zero();
  std::array<double, 3> angles{};
  double area = 0.0;
};

struct FaceAttributeSet {
  std::vector<FaceAttributes> faces;
  std::vector<std::size_t> excluded;  // faces with area below the threshold
};

inline constexpr double kZeroAreaThreshold = 1e-12;

namespace detail {

inline double angle_between(const Vec3& u, const Vec3& v) {
  return std::atan2(u.cross(v).norm(), u.dot(v));
}

inline FaceAttributes triangle_attributes(const Vec3& a, const Vec3& b, const Vec3& c) {
  FaceAttributes fa;
  const Vec3 p[3] = {a, b, c};
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) fa.coords[3 * j + k] = p[j][k];
  const Vec3 cr = (b - a).cross(c - a);
  const double n = cr.norm();
  fa.area = 0.5 * n;
  if (n > 0.0) fa.normal = cr / n;
  for (int j = 0; j < 3; ++j)
    fa.angles[j] = angle_between(p[(j + 1) % 3] - p[j], p[(j + 2) % 3] - p[j]);
  return fa;
}

}  // namespace detail

/// Coordinates (dequantized), unit normal, interior angles and area per face.
/// Faces whose area is numerically zero are listed in `excluded` instead.
inline FaceAttributeSet face_attributes(const CanonicalMesh& cm, bool warn = true) {
  const Mesh m = dequantize(cm);
  FaceAttributeSet out;
  for (std::size_t i = 0; i < m.faces.size(); ++i) {
    const auto& f = m.faces[i];
    auto fa = detail::triangle_attributes(m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
    fa.face = i;
    if (fa.area < kZeroAreaThreshold) {
      out.excluded.push_back(i);
      if (warn) std::cerr << "warning: face " << i << " has zero area; excluded\n";
      continue;
    }
    out.faces.push_back(fa);
  }
  return out;
}

inline constexpr int kFaceFeatureDim = 16;

/// Encoder input per face: 9 coords, 3 normal, 3 angles, 1 area. Unlike
/// face_attributes this keeps every face (a zero-area face gets a zero
/// normal) so the token count always equals the face count.
inline std::vector<std::array<double, kFaceFeatureDim>> face_features(const CanonicalMesh& cm) {
  const Mesh m = dequantize(cm);
  std::vector<std::array<double, kFaceFeatureDim>> out;
  out.reserve(m.faces.size());
  for (const auto& f : m.faces) {
    auto fa = detail::triangle_attributes(m.vertices[f[0]], m.vertices[f[1]], m.vertices[f[2]]);
    std::array<double, kFaceFeatureDim> row{};
    for (int k = 0; k < 9; ++k) row[k] = fa.coords[k];
    if (fa.area >= kZeroAreaThreshold)
      for (int k = 0; k < 3; ++k) row[9 + k] = fa.normal[k];
    for (int k = 0; k < 3; ++k) row[12 + k] = fa.angles[k];
    row[15] = fa.area;
    out.push_back(row);
  }
  return out;
}

}  // namespace meshflow::geometry
