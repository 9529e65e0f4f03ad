// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "sanst/ingest.hpp"
#include "support/oracles.hpp"

using namespace sanst::data;

namespace {

std::vector<CheckIn> parse_text(const std::string& text) {
  std::istringstream in(text);
  return parse_checkins(in, "mem");
}

CheckIn make(const std::string& user, const std::string& poi, std::int64_t t, double lat = 1.0, double lon = 2.0) {
  return {user, poi, t, {lat, lon}};
}

std::vector<CheckIn> random_checkins(std::mt19937_64& rng, int users, int pois, int events) {
  std::uniform_int_distribution<int> u(0, users - 1), p(0, pois - 1);
  std::uniform_int_distribution<std::int64_t> t(1'200'000'000, 1'300'000'000);
  std::vector<CheckIn> out;
  for (int i = 0; i < events; ++i) {
    const int poi = p(rng);
    out.push_back(make("u" + std::to_string(u(rng)), "p" + std::to_string(poi), t(rng), poi * 0.01, -poi * 0.01));
  }
  return out;
}

}  // namespace

TEST_CASE("parse_checkins maps fields") {
  const auto rows = parse_text("u1\t2010-10-19T23:55:27Z\t30.23\t-97.79\tp9\n");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].user_id == "u1");
  CHECK(rows[0].poi_id == "p9");
  CHECK(rows[0].timestamp == 1287532527);
  CHECK(rows[0].location.lat == 30.23);
  CHECK(rows[0].location.lon == -97.79);
  CHECK(parse_text("").empty());
}

TEST_CASE("parse_checkins reports the failing line") {
  const std::string text = "u1\t2010-10-19T23:55:27Z\t30.23\t-97.79\tp9\nu2\t2010-10-19T23:55:27Z\t30.23\t-97.79\n";
  try {
    parse_text(text);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(std::string(e.what()).find("mem:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_text("u\tnot-a-time\t1\t2\tp\n"), ParseError);
  CHECK_THROWS_AS(parse_text("u\t2010-10-19T23:55:27Z\t95\t2\tp\n"), ParseError);
  CHECK_THROWS_AS(parse_checkins(std::filesystem::path("/nonexistent/checkins.tsv")), std::runtime_error);
}

TEST_CASE("custom column order") {
  std::istringstream in("p9\t30.23\t-97.79\tu1\t2010-10-19T23:55:27Z\n");
  const auto rows = parse_checkins(in, "mem", ColumnMap::parse("3,4,1,2,0"));
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].user_id == "u1");
  CHECK(rows[0].poi_id == "p9");
}

TEST_CASE("day_index") {
  CHECK(day_index(0) == 0);
  CHECK(day_index(86399) == 0);
  CHECK(day_index(86400) == 1);
  CHECK(day_index(-1) == -1);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::int64_t> t(-4'000'000'000, 4'000'000'000);
  for (int i = 0; i < 5000; ++i) {
    const auto ts = t(rng);
    REQUIRE(day_index(ts) == sanst::testing::civil_day_count(ts));
  }
}

TEST_CASE("build_sequences sorts per user and keeps duplicates") {
  const std::vector<CheckIn> in{make("a", "x", 30), make("b", "y", 10), make("a", "y", 20), make("b", "x", 40),
                                make("a", "y", 50), make("a", "y", 60)};
  const auto corpus = build_sequences(in);
  REQUIRE(corpus.sequences.size() == 2);
  // ids follow first appearance in time order: b@10 then a@20; y@10 then x@30
  CHECK(corpus.catalog.user_name(0) == "b");
  CHECK(corpus.catalog.poi_name(1) == "y");
  const auto& a = corpus.sequences[1];
  CHECK(a.items == std::vector<PoiId>{1, 2, 1, 1});
  CHECK(corpus.catalog.num_pois() == 2);
  CHECK(corpus.warnings.empty());
}

TEST_CASE("build_sequences is invariant to input order") {
  std::mt19937_64 rng(17);
  auto events = random_checkins(rng, 20, 30, 400);
  auto sorted = events;
  std::stable_sort(sorted.begin(), sorted.end(), [](auto& l, auto& r) { return l.timestamp < r.timestamp; });
  std::shuffle(events.begin(), events.end(), rng);
  const auto a = build_sequences(events);
  const auto b = build_sequences(sorted);
  CHECK(a.catalog == b.catalog);
  CHECK(a.sequences == b.sequences);
}

TEST_CASE("conflicting POI locations warn and keep the first") {
  const auto corpus = build_sequences({make("a", "x", 1, 10.0, 10.0), make("a", "x", 2, 10.5, 10.0)});
  CHECK(corpus.warnings.size() == 1);
  CHECK(corpus.catalog.poi_location(1).lat == 10.0);
  CHECK_THROWS_AS(build_sequences({}), std::invalid_argument);
}

TEST_CASE("filter_and_split") {
  std::vector<UserSequence> seqs{{0, {1, 2, 3, 4}, {0, 0, 0, 0}}, {1, {1, 2, 3, 4, 5}, {0, 1, 2, 3, 4}}};
  const auto split = filter_and_split(seqs);
  REQUIRE(split.num_users() == 1);
  CHECK(split.train[0].items == std::vector<PoiId>{1, 2, 3, 4});
  CHECK(split.test_target[0] == 5);
  CHECK(split.test_query_day[0] == 4);
  CHECK_THROWS_AS(filter_and_split({seqs[0]}), std::runtime_error);
}

TEST_CASE("filter_and_split counts match a brute-force filter") {
  std::mt19937_64 rng(23);
  const auto corpus = build_sequences(random_checkins(rng, 60, 40, 500));
  const auto split = filter_and_split(corpus.sequences);
  std::size_t users = 0, train_items = 0;
  for (const auto& s : corpus.sequences) {
    if (s.items.size() >= 5) {
      ++users;
      train_items += s.items.size() - 1;
    }
  }
  std::size_t got = 0;
  for (const auto& t : split.train) {
    got += t.size();
    CHECK(t.size() >= 4);
  }
  CHECK(split.num_users() == users);
  CHECK(got == train_items);
  // idempotent on already-filtered sequences (the train parts plus their targets)
  std::vector<UserSequence> rebuilt;
  for (std::size_t i = 0; i < split.num_users(); ++i) {
    auto s = split.train[i];
    s.items.push_back(split.test_target[i]);
    s.days.push_back(split.test_query_day[i]);
    rebuilt.push_back(s);
  }
  const auto again = filter_and_split(rebuilt);
  CHECK(again.train == split.train);
  CHECK(again.test_target == split.test_target);
}

TEST_CASE("window pads at the front and shifts targets") {
  const UserSequence s{0, {3, 7, 9}, {1, 2, 3}};
  const auto w = window(s, 5);
  CHECK(w.input == std::vector<PoiId>{0, 0, 0, 3, 7});
  CHECK(w.target == std::vector<PoiId>{0, 0, 0, 7, 9});
  CHECK(w.valid == std::vector<bool>{false, false, false, true, true});
  CHECK(w.input_days[0] == kPadDay);
  CHECK(w.input_days[4] == 2);

  const UserSequence longer{0, {1, 2, 3, 4, 5, 6, 7}, {0, 0, 0, 0, 0, 0, 0}};
  const auto cut = window(longer, 5);
  CHECK(cut.input == std::vector<PoiId>{2, 3, 4, 5, 6});
  CHECK(cut.target == std::vector<PoiId>{3, 4, 5, 6, 7});

  const auto hist = history_window(s, 5);
  CHECK(hist.input == std::vector<PoiId>{0, 0, 3, 7, 9});
  CHECK_THROWS_AS(window(s, 0), std::invalid_argument);
}

TEST_CASE("window agrees with a naive shift-and-pad routine") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(1, 30), id(1, 50), lenw(1, 20);
  for (int trial = 0; trial < 300; ++trial) {
    UserSequence s;
    const int n = len(rng);
    for (int i = 0; i < n; ++i) {
      s.items.push_back(id(rng));
      s.days.push_back(i / 3);
    }
    const auto l = static_cast<std::size_t>(lenw(rng));
    // naive: build full input/target lists then keep the tail, pad the head
    std::vector<PoiId> in, tg;
    for (int i = 0; i + 1 < n; ++i) {
      in.push_back(s.items[static_cast<std::size_t>(i)]);
      tg.push_back(s.items[static_cast<std::size_t>(i + 1)]);
    }
    while (in.size() > l) {
      in.erase(in.begin());
      tg.erase(tg.begin());
    }
    while (in.size() < l) {
      in.insert(in.begin(), 0);
      tg.insert(tg.begin(), 0);
    }
    const auto w = window(s, l);
    REQUIRE(w.input == in);
    REQUIRE(w.target == tg);
    for (std::size_t i = 0; i < l; ++i) {
      REQUIRE(w.valid[i] == (w.target[i] != kPadding));
      REQUIRE((w.input[i] != kPadding) == w.valid[i]);
      if (i + 1 < l && w.valid[i]) REQUIRE(w.target[i] == w.input[i + 1]);
    }
  }
}

TEST_CASE("bundle round trip is byte-identical") {
  std::mt19937_64 rng(41);
  const auto corpus = prepare_corpus(random_checkins(rng, 30, 20, 300));
  const auto dir = std::filesystem::temp_directory_path();
  const auto a = dir / "sanst_bundle_a.bin", b = dir / "sanst_bundle_b.bin";
  write_bundle(corpus, a);
  const auto back = read_bundle(a);
  CHECK(back.catalog == corpus.catalog);
  CHECK(back.sequences == corpus.sequences);
  write_bundle(back, b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("prepare_corpus drops short users and compacts the catalog") {
  std::vector<CheckIn> in;
  for (int i = 0; i < 5; ++i) in.push_back(make("keep", "p" + std::to_string(i % 2), i * 100));
  for (int i = 0; i < 4; ++i) in.push_back(make("drop", "q" + std::to_string(i), i * 100 + 1));
  const auto corpus = prepare_corpus(in);
  const auto st = corpus_stats(corpus);
  CHECK(st.users == 1);
  CHECK(st.pois == 2);
  CHECK(st.checkins == 5);
  CHECK(st.to_string().rfind("users=1 pois=2 checkins=5", 0) == 0);
}
