#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "meshflow/geometry/mesh.hpp"

namespace meshflow::geometry {

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_real(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const char* first = tok.data();
  if (!tok.empty() && tok.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("malformed number '" + std::string(tok) + "'", line);
  return v;
}

inline long parse_index(std::string_view tok, std::size_t line) {
  tok = tok.substr(0, tok.find('/'));  // "v/vt/vn" keeps only v
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (tok.empty() || ec != std::errc() || ptr != tok.data() + tok.size())
    throw ParseError("malformed face index '" + std::string(tok) + "'", line);
  return v;
}

}  // namespace detail

/// Reads the `v`/`f` subset of Wavefront OBJ. Polygons are fan-triangulated
/// from their first vertex; negative indices are relative to the vertices
/// read so far. Other record types are ignored.
inline Mesh parse_obj(std::string_view text) {
  Mesh mesh;
  struct PendingFace {
    std::vector<long> idx;
    std::size_t line;
  };
  std::vector<PendingFace> pending;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto tok = detail::split_ws(line);
    if (tok.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (tok[0] == "v") {
      if (tok.size() < 4) throw ParseError("vertex needs 3 coordinates", line_no);
      mesh.vertices.emplace_back(detail::parse_real(tok[1], line_no),
                                 detail::parse_real(tok[2], line_no),
                                 detail::parse_real(tok[3], line_no));
    } else if (tok[0] == "f") {
      if (tok.size() < 4) throw ParseError("face needs at least 3 indices", line_no);
      PendingFace f{{}, line_no};
      for (std::size_t i = 1; i < tok.size(); ++i) {
        long idx = detail::parse_index(tok[i], line_no);
        if (idx < 0) idx = static_cast<long>(mesh.vertices.size()) + idx + 1;
        f.idx.push_back(idx);
      }
      pending.push_back(std::move(f));
    }
    if (end == text.size()) break;
  }
  const long nv = static_cast<long>(mesh.vertices.size());
  for (const auto& f : pending) {
    for (long idx : f.idx)
      if (idx < 1 || idx > nv)
        throw ValidationError("line " + std::to_string(f.line) + ": face index " +
                              std::to_string(idx) + " out of range [1, " + std::to_string(nv) +
                              "]");
    for (std::size_t k = 1; k + 1 < f.idx.size(); ++k)
      mesh.faces.push_back({static_cast<std::uint32_t>(f.idx[0] - 1),
                            static_cast<std::uint32_t>(f.idx[k] - 1),
                            static_cast<std::uint32_t>(f.idx[k + 1] - 1)});
  }
  return mesh;
}

/// Writes vertices at 9 significant digits followed by 1-based faces.
inline std::string write_obj(const Mesh& mesh, std::string_view header = {}) {
  std::string out;
  if (!header.empty()) {
    out += "# ";
    out += header;
    out += '\n';
  }
  char buf[128];
  for (const auto& v : mesh.vertices) {
    int n = std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x(), v.y(), v.z());
    out.append(buf, static_cast<std::size_t>(n));
  }
  for (const auto& f : mesh.faces) {
    int n = std::snprintf(buf, sizeof buf, "f %u %u %u\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline Mesh load_obj(const std::string& path) { return parse_obj(read_text_file(path)); }

inline void save_obj(const std::string& path, const Mesh& mesh, std::string_view header = {}) {
  write_text_file(path, write_obj(mesh, header));
}

}  // namespace meshflow::geometry
