#include <cmath>
#include <cstdint>
#include <string>

#include "doctest.h"
#include "ltm/error.hpp"
#include "ltm/geocell.hpp"
#include "ltm/rng.hpp"
#include "oracles.hpp"

using namespace ltm;
using namespace ltm::geo;


TEST_CASE("oracle agrees with hand-derived codes") {
  CHECK(oracle::geohash(0.0, 0.0, 6) == "s00000");
  CHECK(oracle::geohash(57.64911, 10.40744, 11) == "u4pruydqqvj");
}

TEST_CASE("encode matches worked examples") {
  CHECK(encode_cell(GeoPoint(0.0, 0.0), 6).code() == "s00000");
  CHECK(encode_cell(GeoPoint(57.64911, 10.40744), 11).code() == "u4pruydqqvj");
}

TEST_CASE("encode matches the reference oracle on random points") {
  Rng rng(20240601);
  for (int i = 0; i < 1000; ++i) {
    const double lat = rng.uniform(-90.0, 90.0);
    const double lon = rng.uniform(-180.0, 180.0);
    for (int p = 1; p <= kMaxPrecision; ++p) {
      const auto code = encode_cell(GeoPoint(lat, lon), p).code();
      REQUIRE(code == oracle::geohash(lat, lon, p));
    }
  }
}

TEST_CASE("decode of a single character") {
  const BBox b = decode_cell(CellId("s"));
  CHECK(b.lat_min == 0.0);
  CHECK(b.lat_max == 45.0);
  CHECK(b.lon_min == 0.0);
  CHECK(b.lon_max == 45.0);
}

TEST_CASE("decode then re-encode the center reproduces the code") {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const int p = 1 + static_cast<int>(rng.below(kMaxPrecision));
    std::string code;
    for (int k = 0; k < p; ++k) code += kAlphabet[rng.below(32)];
    const CellId cell(code);
    CHECK(encode_cell(decode_cell(cell).center(), p) == cell);
  }
}

TEST_CASE("precision-1 cells tile the globe") {
  double area = 0.0;
  for (char c : kAlphabet) {
    const BBox a = decode_cell(CellId(std::string(1, c)));
    area += (a.lat_max - a.lat_min) * (a.lon_max - a.lon_min);
    for (char d : kAlphabet) {
      if (d == c) continue;
      const BBox b = decode_cell(CellId(std::string(1, d)));
      const bool overlap = a.lat_min < b.lat_max && b.lat_min < a.lat_max && a.lon_min < b.lon_max &&
                           b.lon_min < a.lon_max;
      CHECK_FALSE(overlap);
    }
  }
  CHECK(area == doctest::Approx(180.0 * 360.0));
}

TEST_CASE("prefix law and parent containment") {
  Rng rng(99);
  for (int i = 0; i < 500; ++i) {
    const GeoPoint pt(rng.uniform(-90.0, 90.0), rng.uniform(-180.0, 180.0));
    const auto c4 = encode_cell(pt, 4).code();
    const auto c8 = encode_cell(pt, 8).code();
    CHECK(c8.starts_with(c4));
    const CellId c = encode_cell(pt, 8);
    const CellId up = parent(c, 5);
    CHECK(decode_cell(up).contains(pt));
    CHECK(decode_cell(up).contains(decode_cell(c)));
  }
}

TEST_CASE("parent") {
  CHECK(parent(CellId("xn76k5"), 3).code() == "xn7");
  CHECK(parent(CellId("xn76k5"), 6).code() == "xn76k5");
  CHECK_THROWS_AS(parent(CellId("xn7"), 4), InputError);
  CHECK_THROWS_AS(parent(CellId("xn7"), 0), InputError);
}

TEST_CASE("boundary points encode and decode to boxes containing them") {
  for (double lat : {-90.0, 90.0}) {
    for (double lon : {-180.0, 180.0, 0.0}) {
      const GeoPoint pt(lat, lon);
      for (int p = 1; p <= kMaxPrecision; ++p) {
        const CellId c = encode_cell(pt, p);
        const BBox b = decode_cell(c);
        // +180 is folded onto -180
        CHECK(b.contains(GeoPoint(lat, lon == 180.0 ? -180.0 : lon)));
      }
    }
  }
  CHECK(encode_cell(GeoPoint(0.0, 180.0), 5) == encode_cell(GeoPoint(0.0, -180.0), 5));
}

TEST_CASE("midpoint ties go to the upper half") {
  // lon 0 and lat 0 are the first midpoints: both bits are 1
  CHECK(encode_cell(GeoPoint(0.0, 0.0), 1).code() == "s");
  CHECK(encode_cell(GeoPoint(-1e-9, -1e-9), 1).code() == "7");
}

TEST_CASE("invalid input") {
  CHECK_THROWS_AS(GeoPoint(91.0, 0.0), InputError);
  CHECK_THROWS_AS(GeoPoint(0.0, -180.5), InputError);
  CHECK_THROWS_AS(GeoPoint(std::nan(""), 0.0), InputError);
  CHECK_THROWS_AS(encode_cell(GeoPoint(0.0, 0.0), 0), InputError);
  CHECK_THROWS_AS(encode_cell(GeoPoint(0.0, 0.0), 13), InputError);
  CHECK_THROWS_AS(CellId("abc"), InputError);  // 'a' is not in the alphabet
  CHECK_THROWS_AS(CellId(""), InputError);
  CHECK_THROWS_AS(CellId("0123456789bcd"), InputError);
}

TEST_CASE("codec factory") {
  CHECK(make_codec("geohash")->encode(GeoPoint(0, 0), 3).code() == "s00");
  CHECK_THROWS_AS(make_codec("h3"), InputError);
}
