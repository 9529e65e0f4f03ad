// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sanst::geo {

inline constexpr int kBitsPerAxis = 30;
inline constexpr int kBitsPerChar = 5;
inline constexpr int kCodeLength = (2 * kBitsPerAxis) / kBitsPerChar;  // 12
inline constexpr std::string_view kAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

/// Thrown when a coordinate is non-finite or outside its valid range.
class RangeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GridIndex {
  std::uint32_t x = 0;  // longitude
  std::uint32_t y = 0;  // latitude
};

/// 60-bit Z-order value; the top bit is the most significant longitude bit.
struct ZValue {
  std::uint64_t bits = 0;
  friend bool operator==(ZValue, ZValue) = default;
};

/// Twelve base-32 characters. Cells that share a k-character prefix lie in the
/// same rectangle after 5k binary subdivisions.
class CellCode {
 public:
  CellCode() { chars_.fill('0'); }

  /// Validates length and alphabet; throws std::invalid_argument otherwise.
  static CellCode parse(std::string_view text);

  std::string str() const { return {chars_.begin(), chars_.end()}; }
  char operator[](std::size_t i) const { return chars_[i]; }
  static constexpr std::size_t size() { return kCodeLength; }

  /// Position of character `i` in the alphabet, 0..31.
  int symbol(std::size_t i) const;

  friend bool operator==(const CellCode&, const CellCode&) = default;
  friend auto operator<=>(const CellCode&, const CellCode&) = default;

 private:
  friend CellCode encode_cell(ZValue z);
  std::array<char, kCodeLength> chars_{};
};

void validate(const GeoPoint& p);

GridIndex quantize(const GeoPoint& p);
ZValue interleave(GridIndex idx);
/// Interleaves the low `width` bits of each index (longitude bit first).
std::uint64_t interleave_bits(std::uint32_t x, std::uint32_t y, int width);
CellCode encode_cell(ZValue z);
ZValue decode_cell(const CellCode& code);
CellCode cell_of(const GeoPoint& p);

/// Longest shared prefix of two codes (or of any two strings).
std::size_t common_prefix_len(std::string_view a, std::string_view b);
inline std::size_t common_prefix_len(const CellCode& a, const CellCode& b) {
  return common_prefix_len(a.str(), b.str());
}

/// Alphabet position of `c`, or -1.
int alphabet_index(char c);

}  // namespace sanst::geo
