// SPDX-License-Identifier: Apache-2.0
#include "sanst/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace sanst::data {

namespace {

constexpr char kBundleMagic[9] = "SANSTDS1";
constexpr std::uint32_t kBundleVersion = 1;
constexpr double kLocationTolerance = 1e-4;

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

double parse_double(const std::string& text, const char* field) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument(std::string("bad ") + field + " '" + text + "'");
  return value;
}

int parse_int(std::string_view text, const std::string& whole) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw std::invalid_argument("bad timestamp '" + whole + "'");
  }
  return value;
}

}  // namespace

int ColumnMap::width() const { return std::max({user, time, lat, lon, poi}) + 1; }

ColumnMap ColumnMap::parse(const std::string& spec) {
  std::vector<int> cols;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) cols.push_back(parse_int(part, spec));
  if (cols.size() != 5 || std::any_of(cols.begin(), cols.end(), [](int c) { return c < 0; })) {
    throw std::invalid_argument("column map must be five non-negative indices user,time,lat,lon,poi");
  }
  return {cols[0], cols[1], cols[2], cols[3], cols[4]};
}

PoiId Catalog::add_poi(const std::string& name, const geo::GeoPoint& where) {
  if (const auto it = poi_index_.find(name); it != poi_index_.end()) return it->second;
  const auto id = static_cast<PoiId>(poi_names_.size());
  poi_names_.push_back(name);
  poi_location_.push_back(where);
  poi_cell_.push_back(geo::cell_of(where));
  poi_index_.emplace(name, id);
  return id;
}

UserId Catalog::add_user(const std::string& name) {
  if (const auto it = user_index_.find(name); it != user_index_.end()) return it->second;
  const auto id = static_cast<UserId>(user_names_.size());
  user_names_.push_back(name);
  user_index_.emplace(name, id);
  return id;
}

PoiId Catalog::find_poi(const std::string& name) const {
  const auto it = poi_index_.find(name);
  return it == poi_index_.end() ? -1 : it->second;
}

UserId Catalog::find_user(const std::string& name) const {
  const auto it = user_index_.find(name);
  return it == user_index_.end() ? -1 : it->second;
}

void Catalog::write(io::Writer& w) const {
  w.put<std::uint64_t>(num_pois());
  for (std::size_t i = 1; i < poi_names_.size(); ++i) {
    w.put_string(poi_names_[i]);
    w.put(poi_location_[i].lat);
    w.put(poi_location_[i].lon);
  }
  w.put<std::uint64_t>(user_names_.size());
  for (const auto& u : user_names_) w.put_string(u);
}

Catalog Catalog::read(io::Reader& r) {
  Catalog c;
  const auto pois = r.get_count();
  for (std::uint64_t i = 0; i < pois; ++i) {
    auto name = r.get_string();
    geo::GeoPoint p;
    p.lat = r.get<double>();
    p.lon = r.get<double>();
    if (c.add_poi(name, p) != static_cast<PoiId>(i + 1)) throw io::FormatError("duplicate POI '" + name + "' in bundle");
  }
  const auto users = r.get_count();
  for (std::uint64_t i = 0; i < users; ++i) {
    auto name = r.get_string();
    if (c.add_user(name) != static_cast<UserId>(i)) throw io::FormatError("duplicate user '" + name + "' in bundle");
  }
  return c;
}

std::int64_t parse_iso8601(const std::string& text) {
  // YYYY-MM-DDTHH:MM:SS with optional trailing Z
  std::string_view s = text;
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  if (s.size() != 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
      s[16] != ':') {
    throw std::invalid_argument("bad timestamp '" + text + "'");
  }
  using namespace std::chrono;
  const year_month_day ymd{year{parse_int(s.substr(0, 4), text)},
                           month{static_cast<unsigned>(parse_int(s.substr(5, 2), text))},
                           day{static_cast<unsigned>(parse_int(s.substr(8, 2), text))}};
  const int hh = parse_int(s.substr(11, 2), text);
  const int mm = parse_int(s.substr(14, 2), text);
  const int ss = parse_int(s.substr(17, 2), text);
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) throw std::invalid_argument("bad timestamp '" + text + "'");
  const auto days_since_epoch = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days_since_epoch) * 86400 + hh * 3600 + mm * 60 + ss;
}

std::vector<CheckIn> parse_checkins(std::istream& in, const std::string& source_name, const ColumnMap& columns) {
  std::vector<CheckIn> out;
  std::string line;
  std::size_t line_no = 0;
  const auto width = static_cast<std::size_t>(columns.width());
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() < width) {
      throw ParseError(source_name, line_no,
                       "expected " + std::to_string(width) + " tab-separated fields, got " + std::to_string(fields.size()));
    }
    try {
      CheckIn c;
      c.user_id = fields[static_cast<std::size_t>(columns.user)];
      c.poi_id = fields[static_cast<std::size_t>(columns.poi)];
      c.timestamp = parse_iso8601(fields[static_cast<std::size_t>(columns.time)]);
      c.location.lat = parse_double(fields[static_cast<std::size_t>(columns.lat)], "latitude");
      c.location.lon = parse_double(fields[static_cast<std::size_t>(columns.lon)], "longitude");
      geo::validate(c.location);
      if (c.user_id.empty() || c.poi_id.empty()) throw std::invalid_argument("empty user or POI id");
      out.push_back(std::move(c));
    } catch (const std::invalid_argument& e) {
      throw ParseError(source_name, line_no, e.what());
    }
  }
  if (in.bad()) throw std::runtime_error(source_name + ": read error");
  return out;
}

std::vector<CheckIn> parse_checkins(const std::filesystem::path& path, const ColumnMap& columns) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return parse_checkins(in, path.string(), columns);
}

Day day_index(std::int64_t timestamp) {
  auto d = timestamp / 86400;
  if (timestamp % 86400 < 0) --d;
  return static_cast<Day>(d);
}

Corpus build_sequences(const std::vector<CheckIn>& checkins) {
  if (checkins.empty()) throw std::invalid_argument("no check-ins to build sequences from");
  std::vector<std::size_t> order(checkins.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return checkins[a].timestamp < checkins[b].timestamp; });

  Corpus corpus;
  for (const auto idx : order) {
    const auto& c = checkins[idx];
    const auto user = corpus.catalog.add_user(c.user_id);
    if (static_cast<std::size_t>(user) == corpus.sequences.size()) corpus.sequences.push_back({user, {}, {}});
    const auto known = corpus.catalog.find_poi(c.poi_id);
    const auto poi = known > 0 ? known : corpus.catalog.add_poi(c.poi_id, c.location);
    if (known > 0) {
      const auto& first = corpus.catalog.poi_location(poi);
      if (std::abs(first.lat - c.location.lat) > kLocationTolerance ||
          std::abs(first.lon - c.location.lon) > kLocationTolerance) {
        std::ostringstream msg;
        msg << "POI " << c.poi_id << " seen at (" << c.location.lat << "," << c.location.lon
            << "), keeping first location (" << first.lat << "," << first.lon << ")";
        corpus.warnings.push_back(msg.str());
      }
    }
    auto& seq = corpus.sequences[static_cast<std::size_t>(user)];
    seq.items.push_back(poi);
    seq.days.push_back(day_index(c.timestamp));
  }
  return corpus;
}

Corpus prepare_corpus(const std::vector<CheckIn>& checkins, std::size_t min_len) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& c : checkins) ++counts[c.user_id];
  std::vector<CheckIn> kept;
  kept.reserve(checkins.size());
  for (const auto& c : checkins) {
    if (counts[c.user_id] >= min_len) kept.push_back(c);
  }
  if (kept.empty()) throw std::runtime_error("no user has at least " + std::to_string(min_len) + " check-ins");
  return build_sequences(kept);
}

SplitDataset filter_and_split(const std::vector<UserSequence>& seqs, std::size_t min_len) {
  SplitDataset split;
  for (const auto& s : seqs) {
    if (s.size() < min_len || s.size() < 2) continue;
    UserSequence train{s.user, {s.items.begin(), s.items.end() - 1}, {s.days.begin(), s.days.end() - 1}};
    split.train.push_back(std::move(train));
    split.test_target.push_back(s.items.back());
    split.test_query_day.push_back(s.days.back());
  }
  if (split.train.empty()) throw std::runtime_error("no user has at least " + std::to_string(min_len) + " check-ins");
  return split;
}

namespace {

Window make_window(const UserSequence& seq, std::size_t len, std::size_t input_end, bool shifted) {
  Window w{std::vector<PoiId>(len, kPadding), std::vector<PoiId>(len, kPadding), std::vector<Day>(len, kPadDay),
           std::vector<bool>(len, false)};
  const std::size_t count = std::min(len, input_end);
  const std::size_t first = input_end - count;
  const std::size_t offset = len - count;
  for (std::size_t i = 0; i < count; ++i) {
    w.input[offset + i] = seq.items[first + i];
    w.input_days[offset + i] = seq.days[first + i];
    w.target[offset + i] = shifted ? seq.items[first + i + 1] : kPadding;
    w.valid[offset + i] = true;
  }
  return w;
}

}  // namespace

Window window(const UserSequence& seq, std::size_t len) {
  if (len == 0) throw std::invalid_argument("window length must be positive");
  return make_window(seq, len, seq.size() == 0 ? 0 : seq.size() - 1, true);
}

Window history_window(const UserSequence& seq, std::size_t len) {
  if (len == 0) throw std::invalid_argument("window length must be positive");
  return make_window(seq, len, seq.size(), false);
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats st;
  st.users = corpus.sequences.size();
  st.pois = corpus.catalog.num_pois();
  bool first = true;
  for (const auto& s : corpus.sequences) {
    st.checkins += s.size();
    for (const auto d : s.days) {
      st.first_day = first ? d : std::min(st.first_day, d);
      st.last_day = first ? d : std::max(st.last_day, d);
      first = false;
    }
  }
  return st;
}

std::string CorpusStats::to_string() const {
  using namespace std::chrono;
  const auto fmt_day = [](Day d) {
    const year_month_day ymd{sys_days{days{d}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return std::string(buf);
  };
  std::ostringstream os;
  os << "users=" << users << " pois=" << pois << " checkins=" << checkins << " time_range=" << fmt_day(first_day)
     << ".." << fmt_day(last_day);
  return os.str();
}

void write_bundle(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  io::Writer w(out);
  w.put_bytes(kBundleMagic, 8);
  w.put(kBundleVersion);
  corpus.catalog.write(w);
  w.put<std::uint64_t>(corpus.sequences.size());
  for (const auto& s : corpus.sequences) {
    w.put(s.user);
    w.put_vector(s.items);
    w.put_vector(s.days);
  }
  out.flush();
  if (!w.ok()) throw std::runtime_error("write failed: " + path.string());
}

Corpus read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  io::Reader r(in);
  r.expect_magic(kBundleMagic);
  if (const auto v = r.get<std::uint32_t>(); v != kBundleVersion) {
    throw io::FormatError("unsupported bundle version " + std::to_string(v));
  }
  Corpus corpus;
  corpus.catalog = Catalog::read(r);
  const auto n = r.get_count();
  for (std::uint64_t i = 0; i < n; ++i) {
    UserSequence s;
    s.user = r.get<UserId>();
    s.items = r.get_vector<PoiId>();
    s.days = r.get_vector<Day>();
    if (s.items.size() != s.days.size()) throw io::FormatError("sequence length mismatch in bundle");
    for (const auto id : s.items) {
      if (!corpus.catalog.valid_poi(id)) throw io::FormatError("POI id out of range in bundle");
    }
    corpus.sequences.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace sanst::data
