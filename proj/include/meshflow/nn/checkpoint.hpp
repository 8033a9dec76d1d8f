#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "meshflow/nn/optim.hpp"

namespace meshflow::nn {

/// One named tensor in a checkpoint.
struct Segment {
  std::string name;
  std::uint32_t rows = 0, cols = 0;
  std::vector<float> data;
  bool operator==(const Segment&) const = default;
};

/// On-disk layout (all integers and floats little-endian):
///   "MFCK" | u32 version | u64 step | u32 len | config text |
///   u32 segment count | per segment:
///     u32 len | name | u32 rows | u32 cols | f32 data[rows*cols] | u32 crc32
/// The CRC covers the segment bytes from the name length through the data.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::uint64_t step = 0;
  std::string config;
  std::vector<Segment> segments;

  const Segment* find(const std::string& name) const {
    for (const auto& s : segments)
      if (s.name == name) return &s;
    return nullptr;
  }
};

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.append(s);
  }
  std::string bytes;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string_view raw(std::size_t n) {
    need(n);
    auto v = b_.substr(pos_, n);
    pos_ += n;
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::string_view span(std::size_t from, std::size_t to) const { return b_.substr(from, to - from); }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw ValidationError("checkpoint: truncated data");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.bytes.append("MFCK");
  w.u32(Checkpoint::kVersion);
  w.u64(ck.step);
  w.str(ck.config);
  w.u32(static_cast<std::uint32_t>(ck.segments.size()));
  for (const auto& s : ck.segments) {
    if (s.data.size() != static_cast<std::size_t>(s.rows) * s.cols)
      throw ValidationError("checkpoint: segment '" + s.name + "' size mismatch");
    const std::size_t start = w.bytes.size();
    w.str(s.name);
    w.u32(s.rows);
    w.u32(s.cols);
    for (float f : s.data) w.f32(f);
    const auto crc = detail::crc32_of(std::string_view(w.bytes).substr(start));
    w.u32(crc);
  }
  return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader r(bytes);
  if (r.raw(4) != "MFCK") throw ValidationError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != Checkpoint::kVersion)
    throw ValidationError("checkpoint: version " + std::to_string(version) + " not supported (expected " +
                          std::to_string(Checkpoint::kVersion) + ")");
  Checkpoint ck;
  ck.step = r.u64();
  ck.config = r.str();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    Segment s;
    s.name = r.str();
    s.rows = r.u32();
    s.cols = r.u32();
    s.data.resize(static_cast<std::size_t>(s.rows) * s.cols);
    for (auto& f : s.data) f = r.f32();
    const auto expected = detail::crc32_of(r.span(start, r.pos()));
    if (r.u32() != expected) throw ValidationError("checkpoint: CRC mismatch in segment '" + s.name + "'");
    ck.segments.push_back(std::move(s));
  }
  if (!r.done()) throw ValidationError("checkpoint: trailing bytes");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::string bytes = encode_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

template <typename T>
Segment to_segment(const std::string& name, const Matrix<T>& m) {
  Segment s{name, static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
  s.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) s.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return s;
}

template <typename T>
void from_segment(const Segment& s, Matrix<T>& m) {
  if (static_cast<Eigen::Index>(s.rows) != m.rows() || static_cast<Eigen::Index>(s.cols) != m.cols())
    throw ValidationError("checkpoint: shape mismatch for '" + s.name + "'");
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(s.data[static_cast<std::size_t>(i)]);
}

/// Appends every parameter as "<prefix><name>".
template <typename T>
void store_parameters(Checkpoint& ck, const ParameterStore<T>& store, const std::string& prefix = "") {
  for (const auto& p : store) ck.segments.push_back(to_segment(prefix + p.name, p.value));
}

template <typename T>
void restore_parameters(const Checkpoint& ck, ParameterStore<T>& store, const std::string& prefix = "") {
  for (auto& p : store) {
    const Segment* s = ck.find(prefix + p.name);
    if (!s) throw ValidationError("checkpoint: missing parameter '" + prefix + p.name + "'");
    from_segment(*s, p.value);
  }
}

/// Optimizer moments are stored as "adam.m/<name>" and "adam.v/<name>".
template <typename T>
void store_optimizer(Checkpoint& ck, AdamW<T>& opt, const ParameterStore<T>& store) {
  opt.ensure_state(store);
  std::size_t i = 0;
  for (const auto& p : store) {
    ck.segments.push_back(to_segment("adam.m/" + p.name, opt.first_moments()[i]));
    ck.segments.push_back(to_segment("adam.v/" + p.name, opt.second_moments()[i]));
    ++i;
  }
}

template <typename T>
void restore_optimizer(const Checkpoint& ck, AdamW<T>& opt, const ParameterStore<T>& store) {
  opt.ensure_state(store);
  std::size_t i = 0;
  for (const auto& p : store) {
    const Segment* m = ck.find("adam.m/" + p.name);
    const Segment* v = ck.find("adam.v/" + p.name);
    if (!m || !v) throw ValidationError("checkpoint: missing optimizer state for '" + p.name + "'");
    from_segment(*m, opt.first_moments()[i]);
    from_segment(*v, opt.second_moments()[i]);
    ++i;
  }
}

}  // namespace meshflow::nn
