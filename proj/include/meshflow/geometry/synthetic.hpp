#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "meshflow/geometry/mesh.hpp"
#include "meshflow/rng.hpp"

namespace meshflow::geometry {

enum class ShapeKind { Box, Pyramid, Prism, Grid };

inline std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::Box: return "box";
    case ShapeKind::Pyramid: return "pyramid";
    case ShapeKind::Prism: return "prism";
    case ShapeKind::Grid: return "grid";
  }
  return "?";
}

inline ShapeKind parse_shape_kind(std::string_view s) {
  if (s == "box") return ShapeKind::Box;
  if (s == "pyramid") return ShapeKind::Pyramid;
  if (s == "prism") return ShapeKind::Prism;
  if (s == "grid") return ShapeKind::Grid;
  throw ValidationError("unknown shape kind '" + std::string(s) + "'");
}

struct ShapeParams {
  ShapeKind kind = ShapeKind::Box;
  Vec3 size{1.0, 1.0, 1.0};  // extents along x, y, z
  int sides = 6;             // prism polygon
  int grid = 4;              // cells per side
  double amplitude = 0.15;   // grid height-field amplitude, relative to size.z
  double phase = 0.0;        // grid/prism phase
  double frequency = 1.0;    // grid height-field frequency
};

/// Face count of the primitive described by `p`.
inline std::size_t expected_face_count(const ShapeParams& p) {
  switch (p.kind) {
    case ShapeKind::Box: return 12;
    case ShapeKind::Pyramid: return 6;
    case ShapeKind::Prism: return static_cast<std::size_t>(4 * p.sides - 4);
    case ShapeKind::Grid: return static_cast<std::size_t>(2 * p.grid * p.grid);
  }
  return 0;
}

namespace detail {

inline void add_quad(Mesh& m, std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d) {
  m.faces.push_back({a, b, c});
  m.faces.push_back({a, c, d});
}

inline Mesh make_box(const Vec3& s) {
  Mesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back((i & 1 ? 0.5 : -0.5) * s.x(), (i & 2 ? 0.5 : -0.5) * s.y(),
                            (i & 4 ? 0.5 : -0.5) * s.z());
  add_quad(m, 0, 2, 3, 1);  // -z
  add_quad(m, 4, 5, 7, 6);  // +z
  add_quad(m, 0, 1, 5, 4);  // -y
  add_quad(m, 2, 6, 7, 3);  // +y
  add_quad(m, 0, 4, 6, 2);  // -x
  add_quad(m, 1, 3, 7, 5);  // +x
  return m;
}

inline Mesh make_pyramid(const Vec3& s, double apex_shift) {
  Mesh m;
  m.vertices = {{-0.5 * s.x(), -0.5 * s.y(), 0.0}, {0.5 * s.x(), -0.5 * s.y(), 0.0},
                {0.5 * s.x(), 0.5 * s.y(), 0.0},   {-0.5 * s.x(), 0.5 * s.y(), 0.0},
                {apex_shift * s.x(), 0.0, s.z()}};
  add_quad(m, 0, 3, 2, 1);
  for (std::uint32_t i = 0; i < 4; ++i) m.faces.push_back({i, (i + 1) % 4, 4});
  return m;
}

inline Mesh make_prism(const Vec3& s, int sides, double phase) {
  Mesh m;
  const auto n = static_cast<std::uint32_t>(sides);
  for (int level = 0; level < 2; ++level)
    for (int i = 0; i < sides; ++i) {
      double th = phase + 2.0 * std::numbers::pi * i / sides;
      m.vertices.emplace_back(0.5 * s.x() * std::cos(th), 0.5 * s.y() * std::sin(th),
                              level ? s.z() : 0.0);
    }
  for (std::uint32_t i = 1; i + 1 < n; ++i) {
    m.faces.push_back({0, i + 1, i});          // bottom, facing -z
    m.faces.push_back({n, n + i, n + i + 1});  // top, facing +z
  }
  for (std::uint32_t i = 0; i < n; ++i) add_quad(m, i, (i + 1) % n, n + (i + 1) % n, n + i);
  return m;
}

inline Mesh make_grid(const ShapeParams& p) {
  Mesh m;
  const int g = p.grid;
  for (int j = 0; j <= g; ++j)
    for (int i = 0; i <= g; ++i) {
      double u = static_cast<double>(i) / g, v = static_cast<double>(j) / g;
      double h = p.amplitude * p.size.z() *
                 std::sin(p.frequency * std::numbers::pi * u + p.phase) *
                 std::cos(p.frequency * std::numbers::pi * v);
      m.vertices.emplace_back((u - 0.5) * p.size.x(), (v - 0.5) * p.size.y(), h);
    }
  auto id = [g](int i, int j) { return static_cast<std::uint32_t>(j * (g + 1) + i); };
  for (int j = 0; j < g; ++j)
    for (int i = 0; i < g; ++i) add_quad(m, id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
  return m;
}

}  // namespace detail

/// Parametric primitive: box (12 faces), pyramid (6), n-gon prism (4n-4) or
/// g x g height-field sheet (2g^2). `seed` only perturbs the pyramid apex.
inline Mesh generate_synthetic(const ShapeParams& p, std::uint64_t seed = 0) {
  if (!(p.size.minCoeff() > 0.0) || !p.size.allFinite())
    throw ValidationError("synthetic: sizes must be positive");
  switch (p.kind) {
    case ShapeKind::Box: return detail::make_box(p.size);
    case ShapeKind::Pyramid: {
      auto rng = make_rng(seed, "synthetic.apex");
      return detail::make_pyramid(p.size, 0.3 * (uniform01(rng) - 0.5));
    }
    case ShapeKind::Prism:
      if (p.sides < 3 || p.sides > 32) throw ValidationError("synthetic: prism sides must be in [3, 32]");
      return detail::make_prism(p.size, p.sides, p.phase);
    case ShapeKind::Grid:
      if (p.grid < 1 || p.grid > 24) throw ValidationError("synthetic: grid must be in [1, 24]");
      return detail::make_grid(p);
  }
  throw ValidationError("synthetic: unknown kind");
}

/// Draws shape parameters for `kind` from `seed`. Structural parameters
/// (prism sides, grid cells) are taken from `base`.
inline ShapeParams random_shape_params(ShapeKind kind, std::uint64_t seed, ShapeParams base = {}) {
  auto rng = make_rng(seed, "synthetic.params");
  ShapeParams p = base;
  p.kind = kind;
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * uniform01(rng); };
  switch (kind) {
    case ShapeKind::Box:
    case ShapeKind::Pyramid:
    case ShapeKind::Prism:
      p.size = Vec3(uni(0.4, 1.0), uni(0.4, 1.0), uni(0.4, 1.0));
      p.phase = uni(0.0, 0.5);
      break;
    case ShapeKind::Grid:
      p.size = Vec3(uni(0.7, 1.0), uni(0.7, 1.0), 1.0);
      p.amplitude = uni(0.08, 0.25);
      p.frequency = uni(0.5, 1.5);
      p.phase = uni(0.0, std::numbers::pi);
      break;
  }
  return p;
}

}  // namespace meshflow::geometry
