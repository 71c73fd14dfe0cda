#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "saelab/common.hpp"

namespace saelab {

// A batch of dense vectors, one per row. Toy data keeps its generating coefficients
// around for later dictionary evaluation; captured activations keep token ids.
struct ActivationDataset {
  Mat rows;                         // n_samples x n_dense
  std::vector<uint32_t> token_ids;  // empty or size n_samples
  Mat coefficients;                 // 0x0 or n_samples x n_sparse

  Eigen::Index n_samples() const { return rows.rows(); }
  Eigen::Index n_dense() const { return rows.cols(); }
  bool has_token_ids() const { return !token_ids.empty(); }
  bool has_coefficients() const { return coefficients.size() > 0; }

  void validate() const {
    require(rows.allFinite(), "dataset rows contain NaN/Inf");
    if (has_coefficients()) {
      require(coefficients.rows() == rows.rows(), "coefficient row count mismatch");
      require(coefficients.allFinite(), "dataset coefficients contain NaN/Inf");
    }
    if (has_token_ids())
      require(token_ids.size() == static_cast<size_t>(rows.rows()),
              "token_ids length must equal n_samples");
  }
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_f32_row_major(std::ostream& os, const Mat& m) {
  std::vector<float> buf(static_cast<size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) buf[static_cast<size_t>(c)] = m(r, c);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

inline void get_f32_row_major(std::istream& is, Mat& m) {
  std::vector<float> buf(static_cast<size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = buf[static_cast<size_t>(c)];
  }
}

}  // namespace detail

// SLAB1 container: "SLAB1", u32 n_samples, u32 n_dense, u32 flags
// (bit0 coefficients, bit1 token_ids), u32 n_sparse, then little-endian f32
// payload row-major; token ids as u32.
inline void save_slab(const ActivationDataset& ds, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParseError("cannot open for write: " + path, 0);
  os.write("SLAB1", 5);
  detail::put_u32(os, static_cast<uint32_t>(ds.n_samples()));
  detail::put_u32(os, static_cast<uint32_t>(ds.n_dense()));
  uint32_t flags = 0;
  if (ds.has_coefficients()) flags |= 1u;
  if (ds.has_token_ids()) flags |= 2u;
  detail::put_u32(os, flags);
  detail::put_u32(os, ds.has_coefficients() ? static_cast<uint32_t>(ds.coefficients.cols()) : 0u);
  detail::put_f32_row_major(os, ds.rows);
  if (ds.has_coefficients()) detail::put_f32_row_major(os, ds.coefficients);
  for (uint32_t id : ds.token_ids) detail::put_u32(os, id);
  if (!os) throw ParseError("write failed: " + path, 0);
}

inline ActivationDataset load_slab(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open: " + path, 0);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "SLAB1", 5) != 0) throw ParseError("bad SLAB1 magic: " + path, 0);
  const uint32_t n_samples = detail::get_u32(is);
  const uint32_t n_dense = detail::get_u32(is);
  const uint32_t flags = detail::get_u32(is);
  const uint32_t n_sparse = detail::get_u32(is);
  ActivationDataset ds;
  ds.rows.resize(n_samples, n_dense);
  detail::get_f32_row_major(is, ds.rows);
  if (flags & 1u) {
    ds.coefficients.resize(n_samples, n_sparse);
    detail::get_f32_row_major(is, ds.coefficients);
  }
  if (flags & 2u) {
    ds.token_ids.resize(n_samples);
    for (auto& id : ds.token_ids) id = detail::get_u32(is);
  }
  if (!is) throw ParseError("truncated SLAB1 file: " + path, 0);
  ds.validate();
  return ds;
}

// CSV is for eyeballing small instances; one row per sample, token_id first when present.
inline void save_csv(const ActivationDataset& ds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParseError("cannot open for write: " + path, 0);
  if (ds.has_token_ids()) os << "token_id,";
  for (Eigen::Index c = 0; c < ds.n_dense(); ++c) os << "d" << c << (c + 1 < ds.n_dense() ? "," : "\n");
  char num[48];
  for (Eigen::Index r = 0; r < ds.n_samples(); ++r) {
    if (ds.has_token_ids()) os << ds.token_ids[static_cast<size_t>(r)] << ",";
    for (Eigen::Index c = 0; c < ds.n_dense(); ++c) {
      snprintf(num, sizeof num, "%.9g", static_cast<double>(ds.rows(r, c)));
      os << num << (c + 1 < ds.n_dense() ? "," : "\n");
    }
  }
}

}  // namespace saelab
