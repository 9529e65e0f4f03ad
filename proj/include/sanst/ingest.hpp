// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sanst/binary_io.hpp"
#include "sanst/geocode.hpp"

namespace sanst::data {

using PoiId = std::int32_t;
using UserId = std::int32_t;
using Day = std::int32_t;

inline constexpr PoiId kPadding = 0;
inline constexpr Day kPadDay = std::numeric_limits<Day>::min();

struct CheckIn {
  std::string user_id;
  std::string poi_id;
  std::int64_t timestamp = 0;  // UTC seconds since epoch
  geo::GeoPoint location;
};

/// Column positions inside a TAB-separated check-in line.
struct ColumnMap {
  int user = 0;
  int time = 1;
  int lat = 2;
  int lon = 3;
  int poi = 4;

  int width() const;
  /// Parses "user,time,lat,lon,poi" as five column indices.
  static ColumnMap parse(const std::string& spec);
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// POI and user dictionaries. Dense POI ids start at 1; 0 is padding.
class Catalog {
 public:
  PoiId add_poi(const std::string& name, const geo::GeoPoint& where);
  UserId add_user(const std::string& name);

  std::size_t num_pois() const { return poi_names_.size() - 1; }
  std::size_t num_users() const { return user_names_.size(); }

  const std::string& poi_name(PoiId id) const { return poi_names_.at(static_cast<std::size_t>(id)); }
  const geo::GeoPoint& poi_location(PoiId id) const { return poi_location_.at(static_cast<std::size_t>(id)); }
  const geo::CellCode& poi_cell(PoiId id) const { return poi_cell_.at(static_cast<std::size_t>(id)); }
  const std::string& user_name(UserId id) const { return user_names_.at(static_cast<std::size_t>(id)); }

  /// Returns -1 when absent.
  PoiId find_poi(const std::string& name) const;
  UserId find_user(const std::string& name) const;

  bool valid_poi(PoiId id) const { return id >= 1 && static_cast<std::size_t>(id) <= num_pois(); }

  void write(io::Writer& w) const;
  static Catalog read(io::Reader& r);

  friend bool operator==(const Catalog& a, const Catalog& b) {
    return a.poi_names_ == b.poi_names_ && a.user_names_ == b.user_names_ && a.poi_cell_ == b.poi_cell_;
  }

 private:
  std::vector<std::string> poi_names_{""};
  std::vector<geo::GeoPoint> poi_location_{geo::GeoPoint{}};
  std::vector<geo::CellCode> poi_cell_{geo::CellCode{}};
  std::unordered_map<std::string, PoiId> poi_index_;
  std::vector<std::string> user_names_;
  std::unordered_map<std::string, UserId> user_index_;
};

struct UserSequence {
  UserId user = 0;
  std::vector<PoiId> items;
  std::vector<Day> days;

  std::size_t size() const { return items.size(); }
  friend bool operator==(const UserSequence&, const UserSequence&) = default;
};

struct Corpus {
  Catalog catalog;
  std::vector<UserSequence> sequences;  // indexed by dense user id
  std::vector<std::string> warnings;
};

struct SplitDataset {
  std::vector<UserSequence> train;
  std::vector<PoiId> test_target;
  std::vector<Day> test_query_day;

  std::size_t num_users() const { return train.size(); }
};

struct Window {
  std::vector<PoiId> input;
  std::vector<PoiId> target;
  std::vector<Day> input_days;
  std::vector<bool> valid;
};

struct CorpusStats {
  std::size_t users = 0;
  std::size_t pois = 0;
  std::size_t checkins = 0;
  Day first_day = 0;
  Day last_day = 0;

  std::string to_string() const;
};

/// Parses "YYYY-MM-DDTHH:MM:SS[Z]" as UTC seconds since the epoch.
std::int64_t parse_iso8601(const std::string& text);

std::vector<CheckIn> parse_checkins(std::istream& in, const std::string& source_name,
                                    const ColumnMap& columns = {});
std::vector<CheckIn> parse_checkins(const std::filesystem::path& path, const ColumnMap& columns = {});

Day day_index(std::int64_t timestamp);

/// Orders every user's events by time (ties by input order). Dense ids follow
/// first appearance in that global time order, so input permutations that keep
/// timestamps distinct produce identical corpora.
Corpus build_sequences(const std::vector<CheckIn>& checkins);

/// Drops users with fewer than `min_len` check-ins before building ids.
Corpus prepare_corpus(const std::vector<CheckIn>& checkins, std::size_t min_len = 5);

SplitDataset filter_and_split(const std::vector<UserSequence>& seqs, std::size_t min_len = 5);

/// Shifted, left-padded training window of length `len`.
Window window(const UserSequence& seq, std::size_t len);

/// Query window: the last `len` items of `seq`, left-padded, no shift.
Window history_window(const UserSequence& seq, std::size_t len);

CorpusStats corpus_stats(const Corpus& corpus);

void write_bundle(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_bundle(const std::filesystem::path& path);

}  // namespace sanst::data
