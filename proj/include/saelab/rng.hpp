#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string_view>

#include "saelab/common.hpp"

namespace saelab {

// Philox4x32-10 block cipher. Counter-based: output depends only on (counter, key),
// so independent streams are cheap and reproducible across platforms and thread counts.
struct Philox4x32 {
  static constexpr uint32_t kMul0 = 0xD2511F53u;
  static constexpr uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<uint32_t, 4> block(std::array<uint32_t, 4> ctr, std::array<uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const uint64_t p0 = static_cast<uint64_t>(kMul0) * ctr[0];
      const uint64_t p1 = static_cast<uint64_t>(kMul1) * ctr[2];
      const uint32_t hi0 = static_cast<uint32_t>(p0 >> 32), lo0 = static_cast<uint32_t>(p0);
      const uint32_t hi1 = static_cast<uint32_t>(p1 >> 32), lo1 = static_cast<uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

// One RNG stream: key = seed, high counter words = stream id, low words = position.
// Same (seed, stream) always reproduces the same sequence.
class Rng {
 public:
  Rng(uint64_t seed, uint64_t stream)
      : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
        stream_lo_(static_cast<uint32_t>(stream)),
        stream_hi_(static_cast<uint32_t>(stream >> 32)) {}

  uint32_t next_u32() {
    if (idx_ == 4) refill();
    return buf_[idx_++];
  }

  uint64_t next_u64() {
    const uint64_t lo = next_u32();
    const uint64_t hi = next_u32();
    return lo | (hi << 32);
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform_f32() { return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f; }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log1p(-u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  float normal_f32() { return static_cast<float>(normal()); }

 private:
  void refill() {
    buf_ = Philox4x32::block(
        {static_cast<uint32_t>(pos_), static_cast<uint32_t>(pos_ >> 32), stream_lo_, stream_hi_},
        key_);
    ++pos_;
    idx_ = 0;
  }

  std::array<uint32_t, 2> key_;
  uint32_t stream_lo_, stream_hi_;
  uint64_t pos_ = 0;
  std::array<uint32_t, 4> buf_{};
  int idx_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic stream id from a purpose tag plus indices, so every (experiment, seed)
// pair gets non-overlapping Philox counter ranges.
inline uint64_t stream_id(std::string_view tag) { return fnv1a64(tag); }

inline uint64_t stream_id(std::string_view tag, uint64_t a) {
  uint64_t h = fnv1a64(tag);
  h = fnv1a64(&a, sizeof a, h);
  return h;
}

inline uint64_t stream_id(std::string_view tag, uint64_t a, uint64_t b) {
  uint64_t h = fnv1a64(tag);
  h = fnv1a64(&a, sizeof a, h);
  h = fnv1a64(&b, sizeof b, h);
  return h;
}

inline uint64_t stream_id(std::string_view tag, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t h = fnv1a64(tag);
  h = fnv1a64(&a, sizeof a, h);
  h = fnv1a64(&b, sizeof b, h);
  h = fnv1a64(&c, sizeof c, h);
  return h;
}

inline void fill_normal(Rng& rng, Mat& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.normal_f32();
}

inline void fill_normal(Rng& rng, Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal_f32();
}

// Fisher-Yates over [0, n); deterministic given the stream.
inline std::vector<uint32_t> shuffled_indices(uint32_t n, Rng& rng) {
  std::vector<uint32_t> idx(n);
  for (uint32_t i = 0; i < n; ++i) idx[i] = i;
  for (uint32_t i = n; i > 1; --i) {
    const uint32_t j = static_cast<uint32_t>(rng.uniform() * i);
    std::swap(idx[i - 1], idx[j < i ? j : i - 1]);
  }
  return idx;
}

}  // namespace saelab
