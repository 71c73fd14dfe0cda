#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <fstream>

#include "saelab/dataset.hpp"
#include "saelab/rng.hpp"

using namespace saelab;

namespace {
std::string tmp_path(const char* name) {
  return std::string("saelab_test_") + name;
}
}  // namespace

TEST_CASE("slab roundtrip preserves all fields bit-exactly") {
  Rng rng(3, stream_id("slab"));
  ActivationDataset ds;
  ds.rows.resize(17, 5);
  fill_normal(rng, ds.rows);
  ds.coefficients.resize(17, 9);
  fill_normal(rng, ds.coefficients);
  for (uint32_t i = 0; i < 17; ++i) ds.token_ids.push_back(i * 3 + 1);

  const auto path = tmp_path("roundtrip.slab");
  save_slab(ds, path);
  const auto back = load_slab(path);
  std::remove(path.c_str());

  REQUIRE(back.rows.rows() == 17);
  REQUIRE(back.rows.cols() == 5);
  CHECK(back.rows == ds.rows);
  CHECK(back.coefficients == ds.coefficients);
  CHECK(back.token_ids == ds.token_ids);
}

TEST_CASE("slab without optional payloads") {
  ActivationDataset ds;
  ds.rows = Mat::Constant(3, 2, 1.5f);
  const auto path = tmp_path("plain.slab");
  save_slab(ds, path);
  const auto back = load_slab(path);
  std::remove(path.c_str());
  CHECK(back.rows == ds.rows);
  CHECK_FALSE(back.has_coefficients());
  CHECK_FALSE(back.has_token_ids());
}

TEST_CASE("slab header is little-endian with the documented layout") {
  ActivationDataset ds;
  ds.rows = Mat::Zero(2, 3);
  const auto path = tmp_path("header.slab");
  save_slab(ds, path);
  std::ifstream is(path, std::ios::binary);
  std::string magic(5, '\0');
  is.read(magic.data(), 5);
  CHECK(magic == "SLAB1");
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  CHECK(b[0] == 2);  // n_samples = 2, little-endian
  CHECK(b[1] == 0);
  is.read(reinterpret_cast<char*>(b), 4);
  CHECK(b[0] == 3);  // n_dense = 3
  is.close();
  std::remove(path.c_str());
}

TEST_CASE("corrupt magic rejected") {
  const auto path = tmp_path("bad.slab");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTIT00000000000";
  }
  CHECK_THROWS_AS(load_slab(path), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("validate rejects NaN and token id length mismatch") {
  ActivationDataset ds;
  ds.rows = Mat::Zero(2, 2);
  ds.rows(0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(ds.validate(), InvalidArgument);

  ActivationDataset ds2;
  ds2.rows = Mat::Zero(2, 2);
  ds2.token_ids = {1};
  CHECK_THROWS_AS(ds2.validate(), InvalidArgument);
}

TEST_CASE("csv emits one line per sample") {
  ActivationDataset ds;
  ds.rows.resize(2, 2);
  ds.rows << 1.0f, 2.0f, 3.0f, 4.5f;
  ds.token_ids = {7, 9};
  const auto path = tmp_path("out.csv");
  save_csv(ds, path);
  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line == "token_id,d0,d1");
  std::getline(is, line);
  CHECK(line == "7,1,2");
  std::getline(is, line);
  CHECK(line == "9,3,4.5");
  is.close();
  std::remove(path.c_str());
}
