// SPDX-License-Identifier: Apache-2.0
#include "sanst/geocode.hpp"

#include <algorithm>
#include <cmath>

namespace sanst::geo {

namespace {

constexpr std::uint32_t kAxisCells = 1u << kBitsPerAxis;

// Lower edge of cell `idx`; exact in binary64 since span * idx < 2^40.
double cell_edge(std::uint32_t idx, double lo, double span) {
  return lo + span * static_cast<double>(idx) / static_cast<double>(kAxisCells);
}

std::uint32_t to_index(double value, double lo, double span) {
  const double scaled = std::floor((value - lo) / span * static_cast<double>(kAxisCells));
  std::uint32_t idx = 0;
  if (scaled >= static_cast<double>(kAxisCells - 1)) {
    idx = kAxisCells - 1;
  } else if (scaled > 0.0) {
    idx = static_cast<std::uint32_t>(scaled);
  }
  // The division above may round across a cell edge; settle against exact edges.
  while (idx > 0 && cell_edge(idx, lo, span) > value) --idx;
  while (idx < kAxisCells - 1 && cell_edge(idx + 1, lo, span) <= value) ++idx;
  return idx;
}

}  // namespace

int alphabet_index(char c) {
  const auto pos = kAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

CellCode CellCode::parse(std::string_view text) {
  if (text.size() != kCodeLength) {
    throw std::invalid_argument("cell code must have " + std::to_string(kCodeLength) +
                                " characters, got '" + std::string(text) + "'");
  }
  CellCode code;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (alphabet_index(text[i]) < 0) {
      throw std::invalid_argument("invalid cell code character '" + std::string(1, text[i]) +
                                  "' in '" + std::string(text) + "'");
    }
    code.chars_[i] = text[i];
  }
  return code;
}

int CellCode::symbol(std::size_t i) const { return alphabet_index(chars_[i]); }

void validate(const GeoPoint& p) {
  if (!std::isfinite(p.lat) || p.lat < -90.0 || p.lat > 90.0) {
    throw RangeError("lat out of range: " + std::to_string(p.lat));
  }
  if (!std::isfinite(p.lon) || p.lon < -180.0 || p.lon > 180.0) {
    throw RangeError("lon out of range: " + std::to_string(p.lon));
  }
}

GridIndex quantize(const GeoPoint& p) {
  validate(p);
  return {to_index(p.lon, -180.0, 360.0), to_index(p.lat, -90.0, 180.0)};
}

std::uint64_t interleave_bits(std::uint32_t x, std::uint32_t y, int width) {
  std::uint64_t z = 0;
  for (int b = width - 1; b >= 0; --b) {
    z = (z << 1) | ((x >> b) & 1u);
    z = (z << 1) | ((y >> b) & 1u);
  }
  return z;
}

ZValue interleave(GridIndex idx) { return {interleave_bits(idx.x, idx.y, kBitsPerAxis)}; }

CellCode encode_cell(ZValue z) {
  CellCode code;
  for (int i = 0; i < kCodeLength; ++i) {
    const int shift = (kCodeLength - 1 - i) * kBitsPerChar;
    code.chars_[static_cast<std::size_t>(i)] = kAlphabet[(z.bits >> shift) & 0x1f];
  }
  return code;
}

ZValue decode_cell(const CellCode& code) {
  std::uint64_t z = 0;
  for (std::size_t i = 0; i < CellCode::size(); ++i) {
    z = (z << kBitsPerChar) | static_cast<std::uint64_t>(code.symbol(i));
  }
  return {z};
}

CellCode cell_of(const GeoPoint& p) { return encode_cell(interleave(quantize(p))); }

std::size_t common_prefix_len(std::string_view a, std::string_view b) {
  const auto [ia, ib] = std::mismatch(a.begin(), a.end(), b.begin(), b.end());
  return static_cast<std::size_t>(ia - a.begin());
}

}  // namespace sanst::geo
