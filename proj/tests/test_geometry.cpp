#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "meshflow/geometry/adjacency.hpp"
#include "meshflow/geometry/attributes.hpp"
#include "meshflow/geometry/augment.hpp"
#include "meshflow/geometry/canonical.hpp"
#include "meshflow/geometry/manifest.hpp"
#include "meshflow/geometry/obj.hpp"
#include "meshflow/geometry/sampling.hpp"
#include "meshflow/geometry/synthetic.hpp"

using namespace meshflow;
using namespace meshflow::geometry;

namespace {

/// Random soup of `n_faces` triangles over `n_verts` random points in [-1,1]^3.
Mesh random_mesh(std::uint64_t seed, int n_verts = 20, int n_faces = 30) {
  auto rng = make_rng(seed, "test.mesh");
  Mesh m;
  for (int i = 0; i < n_verts; ++i)
    m.vertices.emplace_back(2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1);
  std::uniform_int_distribution<std::uint32_t> pick(0, n_verts - 1);
  while (static_cast<int>(m.faces.size()) < n_faces) {
    Face f{pick(rng), pick(rng), pick(rng)};
    if (f[0] != f[1] && f[1] != f[2] && f[0] != f[2]) m.faces.push_back(f);
  }
  return m;
}

Mesh shuffled(const Mesh& m, std::uint64_t seed) {
  auto rng = make_rng(seed, "test.shuffle");
  std::vector<std::uint32_t> perm(m.vertices.size());
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mesh out;
  out.vertices.resize(m.vertices.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out.vertices[perm[i]] = m.vertices[i];
  for (auto f : m.faces) {
    Face g{perm[f[0]], perm[f[1]], perm[f[2]]};
    std::rotate(g.begin(), g.begin() + std::uniform_int_distribution<int>(0, 2)(rng), g.end());
    out.faces.push_back(g);
  }
  std::shuffle(out.faces.begin(), out.faces.end(), rng);
  return out;
}

}  // namespace

TEST(Obj, ParsesMinimalFile) {
  auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3");
  EXPECT_EQ(m.vertices.size(), 3u);
  ASSERT_EQ(m.faces.size(), 1u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
}

TEST(Obj, FanTriangulatesQuads) {
  auto m = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n");
  ASSERT_EQ(m.faces.size(), 2u);
  EXPECT_EQ(m.faces[0], (Face{0, 1, 2}));
  EXPECT_EQ(m.faces[1], (Face{0, 2, 3}));
}

TEST(Obj, RejectsOutOfRangeIndex) {
  EXPECT_THROW(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"), ValidationError);
}

TEST(Obj, MalformedNumberCarriesLine) {
  try {
    parse_obj("v 0 0 0\nv 1 x 0\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Obj, WriteProducesVertexAndFaceLines) {
  Mesh m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3");
  auto text = write_obj(m);
  EXPECT_EQ(std::count(text.begin(), text.end(), 'v'), 3);
  EXPECT_NE(text.find("f 1 2 3\n"), std::string::npos);
  EXPECT_EQ(write_obj(Mesh{}).find('f'), std::string::npos);
}

TEST(Obj, RoundTripsRandomMeshes) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Mesh m = random_mesh(s, 10, 12);
    // Values representable in 9 significant digits round-trip exactly.
    for (auto& v : m.vertices)
      for (int a = 0; a < 3; ++a) v[a] = std::stod(std::to_string(std::round(v[a] * 1e6) / 1e6));
    EXPECT_EQ(parse_obj(write_obj(m)), m) << "seed " << s;
  }
}

TEST(Normalize, CubeAndAspect) {
  Mesh m;
  m.vertices = {{0, 0, 0}, {2, 2, 2}, {2, 0, 0}};
  auto n = normalize(m);
  EXPECT_DOUBLE_EQ(n.vertices[0].x(), -1.0);
  EXPECT_DOUBLE_EQ(n.vertices[1].z(), 1.0);

  m.vertices = {{0, 0, 0}, {4, 2, 2}};
  n = normalize(m);
  EXPECT_DOUBLE_EQ(n.vertices[0].x(), -1.0);
  EXPECT_DOUBLE_EQ(n.vertices[1].x(), 1.0);
  EXPECT_DOUBLE_EQ(n.vertices[0].y(), -0.5);
  EXPECT_DOUBLE_EQ(n.vertices[1].z(), 0.5);
}

TEST(Normalize, SinglePointIsDegenerate) {
  Mesh m;
  m.vertices = {{1, 2, 3}, {1, 2, 3}};
  EXPECT_THROW(normalize(m), DegenerateInputError);
}

TEST(Canonicalize, QuantizationEndpoints) {
  EXPECT_EQ(quantize_coord(-1.0, 128), 0);
  EXPECT_EQ(quantize_coord(1.0, 128), 127);
  EXPECT_DOUBLE_EQ(dequantize_coord(0, 128), -0.9921875);
  EXPECT_DOUBLE_EQ(dequantize_coord(63, 128), -0.0078125);
  EXPECT_DOUBLE_EQ(dequantize_coord(64, 128), 0.0078125);
}

// Oracle: enumerate every vertex permutation, keep those whose vertex list is
// zyx-sorted, then apply the lowest-first rotation and sort faces.
TEST(Canonicalize, TetrahedronOrderMatchesBruteForce) {
  Mesh m;
  const double lo = dequantize_coord(0, 128), hi = dequantize_coord(127, 128);
  m.vertices = {{lo, hi, lo}, {lo, lo, hi}, {lo, lo, lo}, {hi, lo, lo}};  // (0,1,0),(0,0,1),(0,0,0),(1,0,0)
  m.faces = {{0, 2, 3}, {2, 1, 3}};
  auto cm = canonicalize(m, 128);
  std::vector<BinVec> expect_v = {{0, 0, 0}, {127, 0, 0}, {0, 127, 0}, {0, 0, 127}};
  EXPECT_EQ(cm.vertices, expect_v);

  std::vector<int> perm = {0, 1, 2, 3};
  std::vector<Face> oracle;
  do {
    std::vector<BinVec> pv(4);
    std::vector<BinVec> src = {{0, 127, 0}, {0, 0, 127}, {0, 0, 0}, {127, 0, 0}};
    for (int i = 0; i < 4; ++i) pv[perm[i]] = src[i];
    if (!std::is_sorted(pv.begin(), pv.end(), zyx_less)) continue;
    for (auto f : m.faces) {
      Face g{static_cast<std::uint32_t>(perm[f[0]]), static_cast<std::uint32_t>(perm[f[1]]),
             static_cast<std::uint32_t>(perm[f[2]])};
      Face best = g;
      for (int r = 0; r < 3; ++r) {
        std::rotate(g.begin(), g.begin() + 1, g.end());
        if (g[0] < best[0]) best = g;
      }
      oracle.push_back(best);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::sort(oracle.begin(), oracle.end());
  EXPECT_EQ(cm.faces, oracle);
  for (const auto& f : cm.faces) EXPECT_LT(f[0], std::min(f[1], f[2]));
}

TEST(Canonicalize, FaceRotatedLowestFirst) {
  Mesh m;
  m.vertices = {{-1, -1, -1}, {1, -1, -1}, {-1, 1, -1}};
  m.faces = {{2, 0, 1}};
  auto cm = canonicalize(m, 128);
  EXPECT_EQ(cm.faces[0], (Face{0, 1, 2}));
}

TEST(Canonicalize, PermutationInvarianceIdempotenceAndOrder) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Mesh m = normalize(random_mesh(s));
    auto cm = canonicalize(m, 128);
    EXPECT_EQ(canonical_violation(cm), "");
    EXPECT_EQ(canonicalize(shuffled(m, s + 1000), 128), cm) << "seed " << s;
    EXPECT_EQ(canonicalize(dequantize(cm), 128), cm) << "seed " << s;
  }
}

TEST(Canonicalize, DropsDegenerateAndDuplicateFaces) {
  Mesh m;
  m.vertices = {{-1, -1, -1}, {1, -1, -1}, {-1, 1, -1}, {-1, 1.0001, -1}};
  m.faces = {{0, 1, 2}, {1, 2, 0}, {2, 3, 0}};
  CanonicalizeReport rep;
  auto cm = canonicalize(m, 128, &rep);
  EXPECT_EQ(cm.faces.size(), 1u);
  EXPECT_EQ(rep.duplicate_faces, 1u);
  EXPECT_EQ(rep.degenerate_faces, 1u);
  EXPECT_EQ(rep.merged_vertices, 1u);
}

TEST(Canonicalize, EmptyAfterCleanupThrows) {
  Mesh m;
  m.vertices = {{-1, -1, -1}, {-1, -1, -0.9999}, {1, 1, 1}};
  m.faces = {{0, 1, 2}};
  EXPECT_THROW(canonicalize(m, 128), DegenerateInputError);
}

TEST(Attributes, RightAndEquilateralTriangles) {
  using detail::triangle_attributes;
  auto r = triangle_attributes({0, 0, 0}, {1, 0, 0}, {0, 1, 0});
  EXPECT_NEAR(r.area, 0.5, 1e-15);
  EXPECT_NEAR((r.normal - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
  EXPECT_NEAR(r.angles[0], std::numbers::pi / 2, 1e-12);
  EXPECT_NEAR(r.angles[1], std::numbers::pi / 4, 1e-12);
  EXPECT_NEAR(r.angles[2], std::numbers::pi / 4, 1e-12);
  auto e = triangle_attributes({0, 0, 0}, {1, 0, 0}, {0.5, std::sqrt(3.0) / 2, 0});
  for (double a : e.angles) EXPECT_NEAR(a, std::numbers::pi / 3, 1e-12);
}

TEST(Attributes, AngleSumAndUnitNormalOnRandomFaces) {
  auto rng = make_rng(7, "test.faces");
  for (int i = 0; i < 1000; ++i) {
    Vec3 p[3];
    for (auto& v : p) v = Vec3(uniform01(rng), uniform01(rng), uniform01(rng));
    auto fa = detail::triangle_attributes(p[0], p[1], p[2]);
    if (fa.area < kZeroAreaThreshold) continue;
    EXPECT_NEAR(fa.angles[0] + fa.angles[1] + fa.angles[2], std::numbers::pi, 1e-5);
    EXPECT_NEAR(fa.normal.norm(), 1.0, 1e-6);
  }
}

TEST(Attributes, ZeroAreaFacesExcluded) {
  CanonicalMesh cm;
  cm.resolution = 128;
  cm.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {0, 1, 0}};
  cm.faces = {{0, 1, 2}, {0, 1, 3}};
  auto set = face_attributes(cm, false);
  EXPECT_EQ(set.faces.size(), 1u);
  ASSERT_EQ(set.excluded.size(), 1u);
  EXPECT_EQ(set.excluded[0], 0u);
  EXPECT_EQ(face_features(cm).size(), 2u);
}

TEST(Adjacency, SharedEdgeAndSharedVertex) {
  std::vector<Face> edge = {{0, 1, 2}, {1, 3, 2}};
  EXPECT_EQ(build_adjacency(edge).edges.size(), 1u);
  std::vector<Face> vert = {{0, 1, 2}, {2, 3, 4}};
  EXPECT_EQ(build_adjacency(vert).edges.size(), 0u);
}

TEST(Adjacency, MatchesPairwiseScan) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Mesh m = random_mesh(s, 12, 10 + static_cast<int>(s * 9));
    auto g = build_adjacency(m.faces);
    std::vector<std::pair<std::uint32_t, std::uint32_t>> brute;
    for (std::uint32_t i = 0; i < m.faces.size(); ++i)
      for (std::uint32_t j = i + 1; j < m.faces.size(); ++j)
        if (shared_vertex_count(m.faces[i], m.faces[j]) == 2) brute.emplace_back(i, j);
    EXPECT_EQ(g.edges, brute);
    for (std::size_t i = 0; i < g.n; ++i)
      for (auto j : g.neighbors[i]) EXPECT_NE(i, j);
  }
}

TEST(Augment, IdentityWithoutScaleOrRotation) {
  Mesh m = normalize(random_mesh(3));
  AugmentOptions opt{{1.0, 1.0}, false, false};
  auto a = augment(m, 11, opt);
  for (std::size_t i = 0; i < m.vertices.size(); ++i) EXPECT_NEAR((a.vertices[i] - m.vertices[i]).norm(), 0.0, 1e-12);
}

TEST(Augment, DeterministicAndStructurePreserving) {
  Mesh m = normalize(random_mesh(4));
  EXPECT_EQ(augment(m, 5), augment(m, 5));
  for (std::uint64_t s = 0; s < 100; ++s) {
    auto a = augment(m, s);
    EXPECT_EQ(a.vertices.size(), m.vertices.size());
    EXPECT_EQ(a.faces, m.faces);
  }
}

TEST(Sampling, PointsInsideSingleTriangle) {
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}};
  auto pc = sample_surface_points(m, 2000, 1);
  for (const auto& p : pc.points) {
    EXPECT_GE(p.x(), 0.0);
    EXPECT_GE(p.y(), 0.0);
    EXPECT_LE(p.x() + p.y(), 1.0 + 1e-12);
    EXPECT_EQ(p.z(), 0.0);
  }
}

TEST(Sampling, FaceFrequenciesFollowArea) {
  // Face 0 has area 1 (z = 0 plane), face 1 has area 3 (z = 5 plane).
  Mesh m;
  m.vertices = {{0, 0, 0}, {2, 0, 0}, {0, 1, 0}, {0, 0, 5}, {6, 0, 5}, {0, 1, 5}};
  m.faces = {{0, 1, 2}, {3, 4, 5}};
  auto pc = sample_surface_points(m, 10000, 2);
  const double frac = static_cast<double>(std::count_if(pc.points.begin(), pc.points.end(),
                                                        [](const Vec3& p) { return p.z() > 2.5; })) /
                      10000.0;
  EXPECT_NEAR(frac, 0.75, 0.02);
  // Chi-square with 1 dof: statistic below the 0.1% critical value 10.83.
  const double n1 = frac * 10000, n0 = 10000 - n1;
  const double chi2 = (n0 - 2500) * (n0 - 2500) / 2500 + (n1 - 7500) * (n1 - 7500) / 7500;
  EXPECT_LT(chi2, 10.83);
}

TEST(Sampling, UnitSquareMeanAtCentroid) {
  Mesh m;
  m.vertices = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}};
  m.faces = {{0, 1, 2}, {0, 2, 3}};
  auto pc = sample_surface_points(m, 10000, 3);
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pc.points) mean += p;
  mean /= 10000.0;
  EXPECT_NEAR(mean.x(), 0.5, 0.02);
  EXPECT_NEAR(mean.y(), 0.5, 0.02);
}

TEST(Sampling, ZeroAreaThrowsAndSeedIsDeterministic) {
  Mesh flat;
  flat.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  flat.faces = {{0, 1, 2}};
  EXPECT_THROW(sample_surface_points(flat, 10, 0), DegenerateInputError);
  Mesh box = generate_synthetic({ShapeKind::Box});
  EXPECT_EQ(sample_surface_points(box, 100, 9), sample_surface_points(box, 100, 9));
}

TEST(PointGrid, MatchesBruteForce) {
  auto rng = make_rng(1, "test.grid");
  std::vector<Vec3> pts;
  for (int i = 0; i < 700; ++i) pts.emplace_back(uniform01(rng), 3 * uniform01(rng), uniform01(rng) * 0.1);
  PointGrid grid(pts);
  for (int q = 0; q < 300; ++q) {
    Vec3 p(4 * uniform01(rng) - 1.5, 4 * uniform01(rng) - 0.5, uniform01(rng));
    double best = std::numeric_limits<double>::infinity();
    for (const auto& x : pts) best = std::min(best, squared_distance(p, x));
    EXPECT_EQ(grid.nearest_squared(p), best);
  }
}

TEST(Hausdorff, IdenticalIsZeroAndTranslatedCubeIsTwo) {
  Mesh cube = generate_synthetic({ShapeKind::Box, Vec3(1, 1, 1)});
  EXPECT_LE(hausdorff_distance(cube, cube, 2000, 4), 1e-6);
  Mesh moved = cube;
  for (auto& v : moved.vertices) v.x() += 2.0;
  const double h = hausdorff_distance(cube, moved, 10000, 5);
  EXPECT_NEAR(h, 2.0, 0.05);
  EXPECT_EQ(h, hausdorff_distance(moved, cube, 10000, 5));
}

TEST(Synthetic, FaceCountsAndValidation) {
  EXPECT_EQ(generate_synthetic({ShapeKind::Box}).faces.size(), 12u);
  EXPECT_EQ(generate_synthetic({ShapeKind::Box}).vertices.size(), 8u);
  EXPECT_EQ(generate_synthetic({ShapeKind::Pyramid}).faces.size(), 6u);
  ShapeParams prism{ShapeKind::Prism};
  prism.sides = 7;
  EXPECT_EQ(generate_synthetic(prism).faces.size(), 24u);
  ShapeParams grid{ShapeKind::Grid};
  grid.grid = 4;
  EXPECT_EQ(generate_synthetic(grid).faces.size(), 32u);
  grid.grid = 0;
  EXPECT_THROW(generate_synthetic(grid), ValidationError);
  ShapeParams bad{ShapeKind::Box, Vec3(1, 0, 1)};
  EXPECT_THROW(generate_synthetic(bad), ValidationError);
}

TEST(Synthetic, AllKindsCanonicalizeWithoutDrops) {
  for (auto kind : {ShapeKind::Box, ShapeKind::Pyramid, ShapeKind::Prism, ShapeKind::Grid})
    for (std::uint64_t s = 0; s < 25; ++s) {
      ShapeParams base;
      base.sides = 3 + static_cast<int>(s % 10);
      base.grid = 1 + static_cast<int>(s % 6);
      auto p = random_shape_params(kind, s, base);
      Mesh m = generate_synthetic(p, s);
      CanonicalizeReport rep;
      auto cm = canonicalize(normalize(m), 128, &rep);
      EXPECT_EQ(cm.faces.size(), expected_face_count(p)) << to_string(kind) << " seed " << s;
      EXPECT_EQ(rep.degenerate_faces + rep.duplicate_faces, 0u);
    }
}

TEST(Manifest, RoundTrip) {
  std::vector<ManifestRecord> recs = {{"a.obj", 12, "train"}, {"b.obj", 32, "val"}};
  EXPECT_EQ(parse_manifest(write_manifest(recs)), recs);
  EXPECT_THROW(parse_manifest("a.obj\t12\n"), ParseError);
}
