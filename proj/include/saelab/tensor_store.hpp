#pragma once

#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "saelab/common.hpp"
#include "saelab/dataset.hpp"

namespace saelab {

// Rank-1 tensors are stored as n x 1 matrices; dims carries the declared shape.
struct NamedTensor {
  std::vector<uint32_t> dims;
  Mat value;
};

// Insertion-ordered so serialization and stats listings are deterministic.
class TensorStore {
 public:
  Mat& add(const std::string& name, std::vector<uint32_t> dims) {
    require(dims.size() == 1 || dims.size() == 2, "only rank-1/2 tensors supported");
    require(!map_.count(name), "duplicate tensor name: " + name);
    const uint32_t rows = dims[0];
    const uint32_t cols = dims.size() == 2 ? dims[1] : 1;
    order_.push_back(name);
    auto& t = map_[name];
    t.dims = std::move(dims);
    t.value = Mat::Zero(rows, cols);
    return t.value;
  }

  bool has(const std::string& name) const { return map_.count(name) != 0; }

  Mat& at(const std::string& name) {
    auto it = map_.find(name);
    require(it != map_.end(), "missing tensor: " + name);
    return it->second.value;
  }
  const Mat& at(const std::string& name) const {
    auto it = map_.find(name);
    require(it != map_.end(), "missing tensor: " + name);
    return it->second.value;
  }
  const std::vector<uint32_t>& dims(const std::string& name) const {
    auto it = map_.find(name);
    require(it != map_.end(), "missing tensor: " + name);
    return it->second.dims;
  }

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, NamedTensor> map_;
};

// Checkpoint container: magic "SLCK1", u32 tensor count, then per tensor a
// length-prefixed UTF-8 name, u8 rank, u32 dims, and little-endian f32 data
// in row-major order.
inline void save_slck(const TensorStore& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot open " + path + " for writing");
  out.write("SLCK1", 5);
  detail::put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& name : store.names()) {
    detail::put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const auto& dims = store.dims(name);
    out.put(static_cast<char>(dims.size()));
    for (uint32_t d : dims) detail::put_u32(out, d);
    detail::put_f32_row_major(out, store.at(name));
  }
  require(out.good(), "write failed: " + path);
}

inline TensorStore load_slck(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ParseError("cannot open " + path);
  char magic[5];
  in.read(magic, 5);
  if (!in.good() || std::string_view(magic, 5) != "SLCK1")
    throw ParseError("bad checkpoint magic in " + path);
  const uint32_t count = detail::get_u32(in);
  TensorStore store;
  for (uint32_t t = 0; t < count; ++t) {
    const uint32_t name_len = detail::get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const int rank = in.get();
    if (!in.good()) throw ParseError("truncated checkpoint: " + path);
    if (rank < 1 || rank > 2) throw ParseError("unsupported tensor rank in " + path);
    std::vector<uint32_t> dims(static_cast<size_t>(rank));
    for (auto& d : dims) d = detail::get_u32(in);
    Mat& value = store.add(name, dims);
    detail::get_f32_row_major(in, value);
    if (!in.good()) throw ParseError("truncated checkpoint: " + path);
  }
  return store;
}

struct TensorStats {
  double mean;
  double stddev;  // population
};

inline TensorStats tensor_stats(const Mat& t) {
  const double n = static_cast<double>(t.size());
  const double mean = t.cast<double>().sum() / n;
  const double var = (t.cast<double>().array() - mean).square().sum() / n;
  return {mean, std::sqrt(var)};
}

}  // namespace saelab
