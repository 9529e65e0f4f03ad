// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "sanst/evaluation.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace sanst;
using namespace sanst::eval;

namespace {

data::SplitDataset random_split(std::size_t users, std::size_t pois, std::mt19937_64& rng) {
  std::vector<data::UserSequence> seqs;
  for (std::size_t u = 0; u < users; ++u)
    seqs.push_back(sanst::testing::random_sequence(static_cast<data::UserId>(u), 5 + u % 7, pois, rng));
  return data::filter_and_split(seqs);
}

double checksum(const model::Model& m) {
  double s = 0.0;
  for (const auto& t : m.params().all())
    for (std::size_t i = 0; i < t.size(); ++i) s += t.values()[i] * static_cast<double>(i % 7 + 1);
  return s;
}

}  // namespace

TEST_CASE("rank examples") {
  const std::vector<double> s{0, 0.5, 0.9, 0.1};
  const std::vector<PoiId> c{1, 2, 3};
  CHECK(rank_of_target(s, c, 2) == 1);
  CHECK(rank_of_target(s, c, 3) == 3);
  const std::vector<double> flat{0, 1, 1, 1};
  CHECK(rank_of_target(flat, c, 1) == 1);
  CHECK(rank_of_target(flat, c, 3) == 3);
  CHECK_THROWS_AS(rank_of_target(s, std::vector<PoiId>{1, 3}, 2), std::invalid_argument);
}

TEST_CASE("metric values") {
  CHECK(hit_at_k(1, 10) == 1.0);
  CHECK(ndcg_at_k(1, 10) == 1.0);
  CHECK(ndcg_at_k(3, 10) == 0.5);
  CHECK(hit_at_k(11, 10) == 0.0);
  CHECK(ndcg_at_k(11, 10) == 0.0);
  CHECK(hit_at_k(10, 10) == 1.0);
}

TEST_CASE("rank and metrics match sort oracles") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> coarse(0, 20);
  std::uniform_int_distribution<std::size_t> size(1, 60);
  for (int trial = 0; trial < 10000; ++trial) {
    const auto n = size(rng);
    std::vector<double> scores(n + 1);
    for (auto& v : scores) v = trial % 2 ? coarse(rng) / 4.0 : std::normal_distribution<double>()(rng);
    std::vector<PoiId> cands(n);
    std::iota(cands.begin(), cands.end(), 1);
    const auto target = static_cast<PoiId>(std::uniform_int_distribution<std::size_t>(1, n)(rng));
    const auto rank = rank_of_target(scores, cands, target);
    REQUIRE(rank == sanst::testing::sort_rank(scores, cands, target));
    CHECK(std::abs(ndcg_at_k(rank, 10) - sanst::testing::ndcg_by_list(rank, 10)) < 1e-15);
    CHECK(hit_at_k(rank, 10) == (rank <= 10 ? 1.0 : 0.0));
  }
}

TEST_CASE("aggregation") {
  const std::vector<std::size_t> ranks{1, 3, 12, 2, 7};
  const auto r = aggregate(ranks, 10, model::CandidatePolicy::kFullCatalog);
  double hit = 0.0, ndcg = 0.0;
  for (const auto k : ranks) {
    hit += k <= 10 ? 1.0 : 0.0;
    ndcg += k <= 10 ? 1.0 / std::log2(k + 1.0) : 0.0;
  }
  CHECK(r.users == 5);
  CHECK(r.hit == doctest::Approx(hit / 5).epsilon(1e-15));
  CHECK(r.ndcg == doctest::Approx(ndcg / 5).epsilon(1e-15));
  CHECK(r.hit_at(1) == 0.2);
  CHECK(r.hit_at(20) == 1.0);
  for (std::size_t k = 1; k < 15; ++k) {
    CHECK(r.hit_at(k) <= r.hit_at(k + 1));
    CHECK(r.ndcg_at(k) <= r.hit_at(k));
  }
  CHECK(r.summary() == "hit10=0.800000 ndcg10=" + std::to_string(ndcg / 5) + " users=5 policy=full");
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j["users"] == 5);
  CHECK(j["ranks"].size() == 5);
  CHECK(aggregate({}, 10, model::CandidatePolicy::kFullCatalog).hit == 0.0);
}

TEST_CASE("random scores give the analytic hit rate") {
  std::mt19937_64 rng(2);
  const std::size_t n = 200, users = 20000;
  std::vector<PoiId> cands(n);
  std::iota(cands.begin(), cands.end(), 1);
  std::vector<std::size_t> ranks;
  std::vector<double> scores(n + 1);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t i = 0; i < users; ++i) {
    for (auto& v : scores) v = u(rng);
    ranks.push_back(rank_of_target(scores, cands, static_cast<PoiId>(1 + i % n)));
  }
  const auto r = aggregate(ranks, 10, model::CandidatePolicy::kFullCatalog);
  const double p = 10.0 / n;
  CHECK(std::abs(r.hit - p) < 3 * std::sqrt(p * (1 - p) / users));
}

TEST_CASE("candidate sets") {
  const data::UserSequence train{0, {2, 4, 2}, {1, 2, 3}};
  CHECK(candidates_for(train, 4, 5, model::CandidatePolicy::kExcludeHistory) == std::vector<PoiId>{1, 3, 4, 5});
  CHECK(candidates_for(train, 1, 5, model::CandidatePolicy::kExcludeHistory) == std::vector<PoiId>{1, 3, 5});
  CHECK(candidates_for(train, 1, 5, model::CandidatePolicy::kFullCatalog).size() == 5);
}

TEST_CASE("evaluate a model") {
  std::mt19937_64 rng(3);
  const auto catalog = sanst::testing::random_catalog(15, rng);
  const auto split = random_split(12, 15, rng);
  const model::Model m(sanst::testing::tiny_config(), 15, rng);
  const double before = checksum(m);
  const auto excl = evaluate(m, catalog, split, 10, model::CandidatePolicy::kExcludeHistory, 1);
  const auto full = evaluate(m, catalog, split, 10, model::CandidatePolicy::kFullCatalog, 3);
  CHECK(checksum(m) == before);
  REQUIRE(excl.users == split.num_users());
  for (std::size_t u = 0; u < split.num_users(); ++u) {
    const auto scores = m.score_all(catalog, split.train[u], split.test_query_day[u]);
    const auto cands = candidates_for(split.train[u], split.test_target[u], 15, model::CandidatePolicy::kFullCatalog);
    CHECK(full.ranks[u] == sanst::testing::sort_rank(scores, cands, split.test_target[u]));
    CHECK(excl.ranks[u] <= full.ranks[u]);
  }
  const auto threaded = evaluate(m, catalog, split, 10, model::CandidatePolicy::kExcludeHistory, 4);
  CHECK(threaded.ranks == excl.ranks);
}
