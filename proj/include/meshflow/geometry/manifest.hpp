#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "meshflow/geometry/obj.hpp"

namespace meshflow::geometry {

/// One dataset record: canonical mesh file, its face count, split tag.
struct ManifestRecord {
  std::string path;
  std::size_t faces = 0;
  std::string split;  // "train" or "val"
  bool operator==(const ManifestRecord&) const = default;
};

/// Tab-separated, one record per line, '#' comments.
inline std::string write_manifest(const std::vector<ManifestRecord>& records) {
  std::string out = "# path\tfaces\tsplit\n";
  for (const auto& r : records)
    out += r.path + '\t' + std::to_string(r.faces) + '\t' + r.split + '\n';
  return out;
}

inline std::vector<ManifestRecord> parse_manifest(std::string_view text) {
  std::vector<ManifestRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    auto t1 = line.find('\t');
    auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ParseError("manifest record needs 3 fields", line_no);
    ManifestRecord r;
    r.path = line.substr(0, t1);
    try {
      r.faces = std::stoul(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw ParseError("bad face count", line_no);
    }
    r.split = line.substr(t2 + 1);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ManifestRecord> load_manifest(const std::string& path) {
  return parse_manifest(read_text_file(path));
}

}  // namespace meshflow::geometry
