#include <catch2/catch_amalgamated.hpp>

#include "saelab/rng.hpp"

using namespace saelab;

TEST_CASE("philox4x32-10 known-answer vectors") {
  // Reference vectors from the Random123 known-answer tests.
  auto out = Philox4x32::block({0u, 0u, 0u, 0u}, {0u, 0u});
  CHECK(out[0] == 0x6627e8d5u);
  CHECK(out[1] == 0xe169c58du);
  CHECK(out[2] == 0xbc57ac4cu);
  CHECK(out[3] == 0x9b00dbd8u);

  out = Philox4x32::block({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                          {0xffffffffu, 0xffffffffu});
  CHECK(out[0] == 0x408f276du);
  CHECK(out[1] == 0x41c83b0eu);
  CHECK(out[2] == 0xa20bc7c6u);
  CHECK(out[3] == 0x6d5451fdu);

  out = Philox4x32::block({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                          {0xa4093822u, 0x299f31d0u});
  CHECK(out[0] == 0xd16cfe09u);
  CHECK(out[1] == 0x94fdccebu);
  CHECK(out[2] == 0x5001e420u);
  CHECK(out[3] == 0x24126ea1u);
}

TEST_CASE("streams are reproducible and distinct") {
  Rng a(42, 7), b(42, 7), c(42, 8), d(43, 7);
  bool same_ab = true, same_ac = true, same_ad = true;
  std::vector<uint64_t> seq;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next_u64();
    seq.push_back(va);
    same_ab &= (va == b.next_u64());
    same_ac &= (va == c.next_u64());
    same_ad &= (va == d.next_u64());
  }
  CHECK(same_ab);
  CHECK_FALSE(same_ac);
  CHECK_FALSE(same_ad);

  Rng a2(42, 7);
  bool replay = true;
  for (int i = 0; i < 64; ++i) replay &= (a2.next_u64() == seq[static_cast<size_t>(i)]);
  CHECK(replay);
}

TEST_CASE("uniform is in [0,1) with correct first moments") {
  Rng rng(1, stream_id("uniform-test"));
  const int n = 200000;
  double sum = 0, sum2 = 0;
  double mn = 1, mx = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sum2 += u * u;
    mn = std::min(mn, u);
    mx = std::max(mx, u);
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  // mean 1/2 +- 3*sigma/sqrt(n), var 1/12
  CHECK(std::abs(mean - 0.5) < 3.0 * std::sqrt(1.0 / 12.0 / n));
  CHECK(std::abs(var - 1.0 / 12.0) < 0.002);
  CHECK(mn < 0.001);
  CHECK(mx > 0.999);
}

TEST_CASE("normal has mean 0, var 1, near-zero skew") {
  Rng rng(9, stream_id("normal-test"));
  const int n = 400000;
  double s1 = 0, s2 = 0, s3 = 0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    s1 += z;
    s2 += z * z;
    s3 += z * z * z;
  }
  CHECK(std::abs(s1 / n) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(s2 / n - 1.0) < 0.01);
  CHECK(std::abs(s3 / n) < 0.02);
}

TEST_CASE("shuffled_indices is a permutation, deterministic per stream") {
  Rng rng(5, stream_id("shuffle"));
  auto p = shuffled_indices(1000, rng);
  std::vector<bool> seen(1000, false);
  for (auto i : p) {
    REQUIRE(i < 1000);
    REQUIRE_FALSE(seen[i]);
    seen[i] = true;
  }
  Rng rng2(5, stream_id("shuffle"));
  CHECK(p == shuffled_indices(1000, rng2));
  Rng rng3(5, stream_id("shuffle", 1));
  CHECK(p != shuffled_indices(1000, rng3));
}
