#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "meshflow/geometry/mesh.hpp"

namespace meshflow::geometry {

/// Centers the bounding box at the origin and scales uniformly so the longest
/// axis spans exactly [-1, 1].
inline Mesh normalize(const Mesh& mesh) {
  if (mesh.vertices.empty()) throw DegenerateInputError("normalize: mesh has no vertices");
  Vec3 lo = mesh.vertices.front(), hi = mesh.vertices.front();
  for (const auto& v : mesh.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0.0)) throw DegenerateInputError("normalize: zero bounding-box extent");
  const Vec3 center = 0.5 * (lo + hi);
  const double scale = 2.0 / extent;
  Mesh out;
  out.faces = mesh.faces;
  out.vertices.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) {
    Vec3 p = (v - center) * scale;
    // Pin the longest axis to exactly +-1 despite rounding.
    for (int a = 0; a < 3; ++a)
      if (hi[a] - lo[a] == extent) {
        if (v[a] == lo[a]) p[a] = -1.0;
        if (v[a] == hi[a]) p[a] = 1.0;
      }
    out.vertices.push_back(p);
  }
  return out;
}

inline int quantize_coord(double c, int resolution) {
  double b = std::floor((c + 1.0) * 0.5 * resolution);
  if (!(b >= 0.0)) return 0;  // also catches NaN
  if (b > resolution - 1) return resolution - 1;
  return static_cast<int>(b);
}

inline double dequantize_coord(int bin, int resolution) {
  return (bin + 0.5) / resolution * 2.0 - 1.0;
}

struct CanonicalizeReport {
  std::size_t merged_vertices = 0;
  std::size_t degenerate_faces = 0;
  std::size_t duplicate_faces = 0;
  std::size_t unreferenced_vertices = 0;
};

/// Less-than in (z, y, x) order.
inline bool zyx_less(const BinVec& a, const BinVec& b) {
  if (a[2] != b[2]) return a[2] < b[2];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[0] < b[0];
}

/// Canonical form of a quantized triangle soup. `faces` index into `bins`.
inline CanonicalMesh canonicalize_bins(std::span<const BinVec> bins, std::span<const Face> faces,
                                       int resolution, CanonicalizeReport* report = nullptr) {
  if (resolution <= 0) throw ValidationError("canonicalize: resolution must be positive");
  CanonicalizeReport rep;

  // Merge identical bins. std::map keyed in zyx order yields sorted unique ids.
  auto cmp = [](const BinVec& a, const BinVec& b) { return zyx_less(a, b); };
  std::map<BinVec, std::uint32_t, decltype(cmp)> unique(cmp);
  for (const auto& b : bins) unique.emplace(b, 0);
  rep.merged_vertices = bins.size() - unique.size();

  std::vector<BinVec> sorted;
  sorted.reserve(unique.size());
  for (auto& [b, id] : unique) {
    id = static_cast<std::uint32_t>(sorted.size());
    sorted.push_back(b);
  }

  std::vector<Face> remapped;
  remapped.reserve(faces.size());
  for (const auto& f : faces) {
    Face g{unique.at(bins[f[0]]), unique.at(bins[f[1]]), unique.at(bins[f[2]])};
    if (g[0] == g[1] || g[1] == g[2] || g[0] == g[2]) {
      ++rep.degenerate_faces;
      continue;
    }
    // Rotate (never mirror) so the lowest index leads.
    auto lead = std::min_element(g.begin(), g.end()) - g.begin();
    std::rotate(g.begin(), g.begin() + lead, g.end());
    remapped.push_back(g);
  }

  // Drop vertices no surviving face references, preserving sort order.
  std::vector<std::uint32_t> new_id(sorted.size(), std::numeric_limits<std::uint32_t>::max());
  for (const auto& f : remapped)
    for (auto i : f) new_id[i] = 0;
  CanonicalMesh cm;
  cm.resolution = resolution;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (new_id[i] == std::numeric_limits<std::uint32_t>::max()) {
      ++rep.unreferenced_vertices;
      continue;
    }
    new_id[i] = static_cast<std::uint32_t>(cm.vertices.size());
    cm.vertices.push_back(sorted[i]);
  }
  // Relabeling is monotone, so the lowest-first rotation is preserved.
  for (auto& f : remapped)
    for (auto& i : f) i = new_id[i];

  std::sort(remapped.begin(), remapped.end());
  auto last = std::unique(remapped.begin(), remapped.end());
  rep.duplicate_faces = static_cast<std::size_t>(remapped.end() - last);
  remapped.erase(last, remapped.end());
  cm.faces = std::move(remapped);

  if (report) *report = rep;
  if (cm.faces.empty()) throw DegenerateInputError("canonicalize: no faces left after cleanup");
  return cm;
}

/// Quantizes a normalized mesh onto a resolution^3 grid and puts it in
/// canonical order.
inline CanonicalMesh canonicalize(const Mesh& mesh, int resolution,
                                  CanonicalizeReport* report = nullptr) {
  validate(mesh);
  if (resolution <= 0) throw ValidationError("canonicalize: resolution must be positive");
  std::vector<BinVec> bins;
  bins.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices)
    bins.push_back({quantize_coord(v.x(), resolution), quantize_coord(v.y(), resolution),
                    quantize_coord(v.z(), resolution)});
  return canonicalize_bins(bins, mesh.faces, resolution, report);
}

/// Builds a canonical mesh from per-face bin triples (9 bins per face), as
/// produced by the decoder.
inline CanonicalMesh canonicalize_face_bins(std::span<const std::array<int, 9>> face_bins,
                                            int resolution, CanonicalizeReport* report = nullptr) {
  std::vector<BinVec> bins;
  std::vector<Face> faces;
  bins.reserve(face_bins.size() * 3);
  for (const auto& fb : face_bins) {
    const auto base = static_cast<std::uint32_t>(bins.size());
    for (int j = 0; j < 3; ++j) {
      BinVec b{};
      for (int a = 0; a < 3; ++a) b[a] = std::clamp(fb[3 * j + a], 0, resolution - 1);
      bins.push_back(b);
    }
    faces.push_back({base, base + 1, base + 2});
  }
  return canonicalize_bins(bins, faces, resolution, report);
}

/// Bin midpoints back in [-1, 1].
inline Mesh dequantize(const CanonicalMesh& cm) {
  Mesh out;
  out.faces = cm.faces;
  out.vertices.reserve(cm.vertices.size());
  for (const auto& b : cm.vertices)
    out.vertices.emplace_back(dequantize_coord(b[0], cm.resolution),
                              dequantize_coord(b[1], cm.resolution),
                              dequantize_coord(b[2], cm.resolution));
  return out;
}

/// Checks every CanonicalMesh invariant; returns an empty string when valid.
inline std::string canonical_violation(const CanonicalMesh& cm) {
  for (std::size_t i = 0; i < cm.vertices.size(); ++i) {
    for (int a = 0; a < 3; ++a)
      if (cm.vertices[i][a] < 0 || cm.vertices[i][a] >= cm.resolution)
        return "vertex " + std::to_string(i) + " out of range";
    if (i > 0 && !zyx_less(cm.vertices[i - 1], cm.vertices[i]))
      return "vertices not strictly zyx-sorted at " + std::to_string(i);
  }
  for (std::size_t i = 0; i < cm.faces.size(); ++i) {
    const auto& f = cm.faces[i];
    for (auto idx : f)
      if (idx >= cm.vertices.size()) return "face index out of range";
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) return "degenerate face";
    if (f[0] > f[1] || f[0] > f[2]) return "face not rotated lowest-first";
    if (i > 0 && !(cm.faces[i - 1] < f)) return "faces not strictly sorted at " + std::to_string(i);
  }
  return {};
}

}  // namespace meshflow::geometry
