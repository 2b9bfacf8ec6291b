#include "ltm/geocell.hpp"

#include <cmath>

#include "ltm/error.hpp"

namespace ltm::geo {

int alphabet_index(char c) noexcept {
  const auto pos = kAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

bool GeoPoint::valid(double lat, double lon) noexcept {
  return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 && lon >= -180.0 &&
         lon <= 180.0;
}

GeoPoint::GeoPoint(double lat, double lon) : lat_(lat), lon_(lon) {
  if (!valid(lat, lon)) {
    throw InputError("coordinates out of range: lat=" + std::to_string(lat) + " lon=" + std::to_string(lon));
  }
}

CellId::CellId(std::string code) : code_(std::move(code)) {
  if (code_.empty() || static_cast<int>(code_.size()) > kMaxPrecision) {
    throw InputError("cell code length must be in [1, 12]: '" + code_ + "'");
  }
  for (char c : code_) {
    if (alphabet_index(c) < 0) throw InputError("character outside cell alphabet in '" + code_ + "'");
  }
}

GeoPoint BBox::center() const { return GeoPoint((lat_min + lat_max) / 2.0, (lon_min + lon_max) / 2.0); }

bool BBox::contains(const GeoPoint& p) const noexcept {
  return p.lat() >= lat_min && p.lat() <= lat_max && p.lon() >= lon_min && p.lon() <= lon_max;
}

bool BBox::contains(const BBox& o) const noexcept {
  return o.lat_min >= lat_min && o.lat_max <= lat_max && o.lon_min >= lon_min && o.lon_max <= lon_max;
}

CellId encode_cell(const GeoPoint& p, int precision) {
  if (precision < 1 || precision > kMaxPrecision) {
    throw InputError("precision must be in [1, 12], got " + std::to_string(precision));
  }
  // One code per meridian: +180 and -180 are the same line.
  const double lon = p.lon() == 180.0 ? -180.0 : p.lon();
  const double lat = p.lat();

  double lat_lo = -90.0, lat_hi = 90.0;
  double lon_lo = -180.0, lon_hi = 180.0;
  std::string code;
  code.reserve(static_cast<std::size_t>(precision));
  bool lon_bit = true;
  for (int ch = 0; ch < precision; ++ch) {
    int value = 0;
    for (int b = 0; b < 5; ++b) {
      int bit;
      if (lon_bit) {
        const double mid = (lon_lo + lon_hi) / 2.0;
        bit = lon >= mid ? 1 : 0;
        (bit ? lon_lo : lon_hi) = mid;
      } else {
        const double mid = (lat_lo + lat_hi) / 2.0;
        bit = lat >= mid ? 1 : 0;
        (bit ? lat_lo : lat_hi) = mid;
      }
      value = (value << 1) | bit;
      lon_bit = !lon_bit;
    }
    code.push_back(kAlphabet[static_cast<std::size_t>(value)]);
  }
  return CellId(std::move(code));
}

BBox decode_cell(const CellId& cell) {
  BBox box{-90.0, 90.0, -180.0, 180.0};
  bool lon_bit = true;
  for (char c : cell.code()) {
    const int value = alphabet_index(c);
    for (int b = 4; b >= 0; --b) {
      const int bit = (value >> b) & 1;
      if (lon_bit) {
        const double mid = (box.lon_min + box.lon_max) / 2.0;
        (bit ? box.lon_min : box.lon_max) = mid;
      } else {
        const double mid = (box.lat_min + box.lat_max) / 2.0;
        (bit ? box.lat_min : box.lat_max) = mid;
      }
      lon_bit = !lon_bit;
    }
  }
  return box;
}

CellId parent(const CellId& cell, int precision) {
  if (precision < 1 || precision > cell.precision()) {
    throw InputError("parent precision " + std::to_string(precision) + " not in [1, " +
                     std::to_string(cell.precision()) + "]");
  }
  return CellId(cell.code().substr(0, static_cast<std::size_t>(precision)));
}

std::unique_ptr<CellCodec> make_codec(std::string_view name) {
  if (name == "interleaved-base32" || name == "geohash") return std::make_unique<InterleavedBase32Codec>();
  throw InputError("unknown cell codec '" + std::string(name) + "'");
}

}  // namespace ltm::geo
