// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>

#include "sanst/geocode.hpp"
#include "support/oracles.hpp"

using namespace sanst::geo;
using sanst::testing::halving_index;
using sanst::testing::reference_geohash;

namespace {

// Bit i of x lands at 2i+1 and bit i of y at 2i, counting from the LSB, so the
// top bit is the top longitude bit.
std::uint64_t deposit_bits(std::uint32_t x, std::uint32_t y, int width) {
  std::uint64_t z = 0;
  for (int i = 0; i < width; ++i) {
    z |= static_cast<std::uint64_t>((x >> i) & 1u) << (2 * i + 1);
    z |= static_cast<std::uint64_t>((y >> i) & 1u) << (2 * i);
  }
  return z;
}

GeoPoint random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lat(-90.0, 90.0), lon(-180.0, 180.0);
  return {lat(rng), lon(rng)};
}

}  // namespace

TEST_CASE("quantize maps corners and midpoints") {
  const auto lo = quantize({-90.0, -180.0});
  CHECK(lo.x == 0);
  CHECK(lo.y == 0);
  const auto mid = quantize({0.0, 0.0});
  CHECK(mid.x == (1u << 29));
  CHECK(mid.y == (1u << 29));
  const auto hi = quantize({90.0, 180.0});
  CHECK(hi.x == (1u << 30) - 1);
  CHECK(hi.y == (1u << 30) - 1);
}

TEST_CASE("quantize agrees with 30-step interval halving") {
  const GeoPoint p{57.64911, 10.40744};
  const auto q = quantize(p);
  CHECK(q.x == halving_index(p.lon, -180, 180, 30));
  CHECK(q.y == halving_index(p.lat, -90, 90, 30));
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const auto r = random_point(rng);
    const auto g = quantize(r);
    REQUIRE(g.x == halving_index(r.lon, -180, 180, 30));
    REQUIRE(g.y == halving_index(r.lat, -90, 90, 30));
  }
}

TEST_CASE("quantize rejects out-of-range coordinates naming the field") {
  CHECK_THROWS_WITH_AS(quantize({91.0, 0.0}), doctest::Contains("lat"), RangeError);
  CHECK_THROWS_WITH_AS(quantize({0.0, -180.5}), doctest::Contains("lon"), RangeError);
  CHECK_THROWS_AS(quantize({std::nan(""), 0.0}), RangeError);
}

TEST_CASE("interleave") {
  CHECK(interleave_bits(1, 0, 1) == 2);
  CHECK(interleave({0, 0}).bits == 0);
  CHECK(interleave({(1u << 30) - 1, (1u << 30) - 1}).bits == (std::uint64_t{1} << 60) - 1);
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::uint32_t> bits30(0, (1u << 30) - 1);
  for (int i = 0; i < 1000; ++i) {
    const auto x = bits30(rng), y = bits30(rng);
    REQUIRE(interleave({x, y}).bits == deposit_bits(x, y, 30));
  }
}

TEST_CASE("encode_cell extremes and the canonical point") {
  CHECK(encode_cell({0}).str() == "000000000000");
  CHECK(encode_cell({(std::uint64_t{1} << 60) - 1}).str() == "zzzzzzzzzzzz");
  const auto code = cell_of({57.64911, 10.40744}).str();
  CHECK(code.substr(0, 11) == "u4pruydqqvj");
  CHECK(code == reference_geohash(57.64911, 10.40744));
  CHECK(cell_of({-90.0, -180.0}).str() == "000000000000");
}

TEST_CASE("cell_of matches a reference geohash on random points") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto p = random_point(rng);
    REQUIRE(cell_of(p).str() == reference_geohash(p.lat, p.lon));
  }
}

TEST_CASE("decode_cell inverts encode_cell") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint64_t> z60(0, (std::uint64_t{1} << 60) - 1);
  for (int i = 0; i < 500; ++i) {
    const ZValue z{z60(rng)};
    REQUIRE(decode_cell(encode_cell(z)) == z);
  }
}

TEST_CASE("common_prefix_len") {
  CHECK(common_prefix_len("baca", "baca") == 4);
  CHECK(common_prefix_len("baca", "bacb") == 3);
  CHECK(common_prefix_len("cdb", "dca") == 0);
  const auto a = cell_of({10.0, 10.0});
  CHECK(common_prefix_len(a, a) == 12);
}

TEST_CASE("shared prefixes imply a shared subdivision rectangle") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<int> scale_exp(0, 30);
  int deep = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto p = random_point(rng);
    // nearby partners at many scales so that long prefixes actually occur
    const double s = std::ldexp(1.0, -scale_exp(rng)) * 10.0;
    GeoPoint q{std::clamp(p.lat + unit(rng) * s, -90.0, 90.0), std::clamp(p.lon + unit(rng) * s, -180.0, 180.0)};
    const auto m = static_cast<int>(common_prefix_len(cell_of(p), cell_of(q)));
    if (m >= 4) ++deep;
    const int bits = 5 * m;
    const int lon_bits = (bits + 1) / 2, lat_bits = bits / 2;
    REQUIRE(halving_index(p.lon, -180, 180, lon_bits) == halving_index(q.lon, -180, 180, lon_bits));
    REQUIRE(halving_index(p.lat, -90, 90, lat_bits) == halving_index(q.lat, -90, 90, lat_bits));
  }
  CHECK(deep > 1000);
}

TEST_CASE("cell codes validate their alphabet") {
  CHECK(CellCode::parse("u4pruydqqvj0").str() == "u4pruydqqvj0");
  CHECK_THROWS_AS(CellCode::parse("u4pruydqqvja"), std::invalid_argument);  // 'a' is not in the alphabet
  CHECK_THROWS_AS(CellCode::parse("short"), std::invalid_argument);
}

TEST_CASE("cell_of is deterministic") {
  const GeoPoint p{30.2672, -97.7431};
  CHECK(cell_of(p) == cell_of(p));
}
