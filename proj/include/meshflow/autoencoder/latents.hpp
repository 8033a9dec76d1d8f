#pragma once

#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "meshflow/nn/checkpoint.hpp"

namespace meshflow::autoencoder {

using nn::Matrix;

/// Encoder output for one mesh: per-face mean and log-variance, plus an
/// optional condition context (K x D) used by cross-attention models.
struct LatentRecord {
  std::string id;
  Matrix<double> mu;
  Matrix<double> logvar;
  std::optional<Matrix<double>> context;

  int faces() const { return static_cast<int>(mu.rows()); }
  bool operator==(const LatentRecord& o) const {
    return id == o.id && mu == o.mu && logvar == o.logvar && context.has_value() == o.context.has_value() &&
           (!context || *context == *o.context);
  }
};

struct LatentDataset {
  static constexpr std::uint32_t kVersion = 1;
  int latent_dim = 0;
  std::vector<LatentRecord> records;

  /// 1 / std of every mu entry; maps tokens to roughly unit variance for the flow model.
  double scale_factor() const {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto& r : records)
      for (Eigen::Index i = 0; i < r.mu.size(); ++i) {
        s += r.mu.data()[i];
        s2 += r.mu.data()[i] * r.mu.data()[i];
        ++n;
      }
    if (n < 2) return 1.0;
    const double mean = s / static_cast<double>(n);
    const double var = s2 / static_cast<double>(n) - mean * mean;
    return var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
};

namespace detail {

inline void write_matrix(nn::detail::ByteWriter& w, const Matrix<double>& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f64(m.data()[i]);
}

inline Matrix<double> read_matrix(nn::detail::ByteReader& r) {
  const auto rows = r.u32(), cols = r.u32();
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  return m;
}

}  // namespace detail

/// "MFLT" | u32 version | u32 latent_dim | u32 count | per record:
///   id | mu | logvar | u32 has_context [| context] | u32 crc32 of the record bytes.
/// Matrices are u32 rows, u32 cols, f64 row-major data.
inline std::string encode_latents(const LatentDataset& ds) {
  nn::detail::ByteWriter w;
  w.bytes.append("MFLT");
  w.u32(LatentDataset::kVersion);
  w.u32(static_cast<std::uint32_t>(ds.latent_dim));
  w.u32(static_cast<std::uint32_t>(ds.records.size()));
  for (const auto& rec : ds.records) {
    if (rec.mu.cols() != ds.latent_dim || rec.logvar.rows() != rec.mu.rows() || rec.logvar.cols() != rec.mu.cols())
      throw ValidationError("latents: record '" + rec.id + "' has inconsistent shape");
    const std::size_t start = w.bytes.size();
    w.str(rec.id);
    detail::write_matrix(w, rec.mu);
    detail::write_matrix(w, rec.logvar);
    w.u32(rec.context ? 1u : 0u);
    if (rec.context) detail::write_matrix(w, *rec.context);
    w.u32(nn::detail::crc32_of(std::string_view(w.bytes).substr(start)));
  }
  return std::move(w.bytes);
}

inline LatentDataset decode_latents(std::string_view bytes) {
  nn::detail::ByteReader r(bytes);
  if (r.raw(4) != "MFLT") throw ValidationError("latents: bad magic");
  if (const auto v = r.u32(); v != LatentDataset::kVersion)
    throw ValidationError("latents: version " + std::to_string(v) + " not supported");
  LatentDataset ds;
  ds.latent_dim = static_cast<int>(r.u32());
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    LatentRecord rec;
    rec.id = r.str();
    rec.mu = detail::read_matrix(r);
    rec.logvar = detail::read_matrix(r);
    if (r.u32()) rec.context = detail::read_matrix(r);
    const auto expected = nn::detail::crc32_of(r.span(start, r.pos()));
    if (r.u32() != expected) throw ValidationError("latents: CRC mismatch in record '" + rec.id + "'");
    if (rec.mu.cols() != ds.latent_dim || rec.mu.rows() == 0)
      throw ValidationError("latents: record '" + rec.id + "' has bad shape");
    ds.records.push_back(std::move(rec));
  }
  if (!r.done()) throw ValidationError("latents: trailing bytes");
  return ds;
}

inline void save_latents(const std::string& path, const LatentDataset& ds) {
  const std::string bytes = encode_latents(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write latents " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline LatentDataset load_latents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open latents " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_latents(ss.str());
}

}  // namespace meshflow::autoencoder
