#pragma once

#include <memory>
#include <string>
#include <string_view>

namespace ltm::geo {

/// Base-32 alphabet of cell codes; index = 5-bit value.
inline constexpr std::string_view kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";
inline constexpr int kMaxPrecision = 12;
inline constexpr int kDefaultPrecision = 6;

/// Index of `c` in kAlphabet, or -1.
int alphabet_index(char c) noexcept;

class GeoPoint {
 public:
  /// Throws InputError on non-finite or out-of-range coordinates.
  GeoPoint(double lat, double lon);

  double lat() const noexcept { return lat_; }
  double lon() const noexcept { return lon_; }

  static bool valid(double lat, double lon) noexcept;

 private:
  double lat_;
  double lon_;
};

/// Hierarchical cell code. The length-k prefix of a code is its ancestor at
/// precision k.
class CellId {
 public:
  /// Validates alphabet and length; throws InputError.
  explicit CellId(std::string code);

  const std::string& code() const noexcept { return code_; }
  int precision() const noexcept { return static_cast<int>(code_.size()); }

  friend bool operator==(const CellId&, const CellId&) = default;
  friend auto operator<=>(const CellId&, const CellId&) = default;

 private:
  std::string code_;
};

struct BBox {
  double lat_min;
  double lat_max;
  double lon_min;
  double lon_max;

  GeoPoint center() const;
  /// Closed-interval containment.
  bool contains(const GeoPoint& p) const noexcept;
  bool contains(const BBox& other) const noexcept;
};

CellId encode_cell(const GeoPoint& p, int precision = kDefaultPrecision);
BBox decode_cell(const CellId& cell);
CellId parent(const CellId& cell, int precision);

/// Pluggable location encoder. Implementations must keep the prefix = ancestor
/// law, which sub-hash tokenization depends on.
class CellCodec {
 public:
  virtual ~CellCodec() = default;
  virtual CellId encode(const GeoPoint& p, int precision) const = 0;
  virtual BBox decode(const CellId& cell) const = 0;
  virtual std::string name() const = 0;
};

/// Interleaved-bit base-32 codec (longitude bit first).
class InterleavedBase32Codec final : public CellCodec {
 public:
  CellId encode(const GeoPoint& p, int precision) const override { return encode_cell(p, precision); }
  BBox decode(const CellId& cell) const override { return decode_cell(cell); }
  std::string name() const override { return "interleaved-base32"; }
};

std::unique_ptr<CellCodec> make_codec(std::string_view name);

}  // namespace ltm::geo
