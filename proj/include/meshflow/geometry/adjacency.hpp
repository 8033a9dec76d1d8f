#pragma once

#include <algorithm>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "meshflow/geometry/mesh.hpp"

namespace meshflow::geometry {

/// Undirected face graph; faces are adjacent iff they share exactly two
/// vertex indices.
struct AdjacencyGraph {
  std::size_t n = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;  // i < j, sorted
  std::vector<std::vector<std::uint32_t>> neighbors;           // sorted

  std::size_t degree(std::size_t i) const { return neighbors[i].size(); }
  bool operator==(const AdjacencyGraph& o) const { return n == o.n && edges == o.edges; }

  static AdjacencyGraph from_edges(std::size_t n,
                                   std::vector<std::pair<std::uint32_t, std::uint32_t>> edges) {
    AdjacencyGraph g;
    g.n = n;
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    g.edges = std::move(edges);
    g.neighbors.assign(n, {});
    for (auto [a, b] : g.edges) {
      g.neighbors[a].push_back(b);
      g.neighbors[b].push_back(a);
    }
    for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
    return g;
  }
};

inline int shared_vertex_count(const Face& a, const Face& b) {
  int c = 0;
  for (auto x : a)
    if (x == b[0] || x == b[1] || x == b[2]) ++c;
  return c;
}

/// Edge-hash construction: faces are bucketed by their undirected edges.
inline AdjacencyGraph build_adjacency(std::span<const Face> faces) {
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> by_edge;
  by_edge.reserve(faces.size() * 3);
  for (std::uint32_t f = 0; f < faces.size(); ++f)
    for (int e = 0; e < 3; ++e) {
      std::uint64_t a = faces[f][e], b = faces[f][(e + 1) % 3];
      if (a > b) std::swap(a, b);
      by_edge[(a << 32) | b].push_back(f);
    }
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& [key, fs] : by_edge)
    for (std::size_t i = 0; i < fs.size(); ++i)
      for (std::size_t j = i + 1; j < fs.size(); ++j) {
        auto a = fs[i], b = fs[j];
        if (a == b || shared_vertex_count(faces[a], faces[b]) != 2) continue;
        edges.emplace_back(std::min(a, b), std::max(a, b));
      }
  return AdjacencyGraph::from_edges(faces.size(), std::move(edges));
}

inline AdjacencyGraph build_adjacency(const CanonicalMesh& cm) { return build_adjacency(cm.faces); }

}  // namespace meshflow::geometry
