// SPDX-License-Identifier: Apache-2.0
#include "sanst/evaluation.hpp"

#include <cmath>
#include <cstdlib>
#include <json.hpp>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace sanst::eval {

std::size_t rank_of_target(std::span<const double> scores_by_id, std::span<const PoiId> candidates, PoiId target) {
  bool found = false;
  const double t = scores_by_id[static_cast<std::size_t>(target)];
  std::size_t ahead = 0;
  for (const auto c : candidates) {
    if (c == target) {
      found = true;
      continue;
    }
    const double s = scores_by_id[static_cast<std::size_t>(c)];
    if (s > t || (s == t && c < target)) ++ahead;
  }
  if (!found) throw std::invalid_argument("target POI " + std::to_string(target) + " is not among the candidates");
  return ahead + 1;
}

double hit_at_k(std::size_t rank, std::size_t k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(std::size_t rank, std::size_t k) {
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double EvalReport::hit_at(std::size_t kk) const {
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (const auto r : ranks) total += hit_at_k(r, kk);
  return total / static_cast<double>(ranks.size());
}

double EvalReport::ndcg_at(std::size_t kk) const {
  if (ranks.empty()) return 0.0;
  double total = 0.0;
  for (const auto r : ranks) total += ndcg_at_k(r, kk);
  return total / static_cast<double>(ranks.size());
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << "hit" << k << "=" << hit << " ndcg" << k << "=" << ndcg << " users=" << users
     << " policy=" << model::to_string(policy);
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["k"] = k;
  j["policy"] = model::to_string(policy);
  j["users"] = users;
  j["hit"] = hit;
  j["ndcg"] = ndcg;
  j["ranks"] = ranks;
  return j.dump(2);
}

EvalReport aggregate(std::vector<std::size_t> ranks, std::size_t k, CandidatePolicy policy) {
  EvalReport r;
  r.k = k;
  r.policy = policy;
  r.users = ranks.size();
  r.ranks = std::move(ranks);
  r.hit = r.hit_at(k);
  r.ndcg = r.ndcg_at(k);
  return r;
}

std::vector<PoiId> candidates_for(const data::UserSequence& train, PoiId target, std::size_t num_pois,
                                  CandidatePolicy policy) {
  std::vector<bool> drop(num_pois + 1, false);
  if (policy == CandidatePolicy::kExcludeHistory) {
    for (const auto id : train.items) drop[static_cast<std::size_t>(id)] = true;
    drop[static_cast<std::size_t>(target)] = false;
  }
  std::vector<PoiId> out;
  out.reserve(num_pois);
  for (std::size_t id = 1; id <= num_pois; ++id) {
    if (!drop[id]) out.push_back(static_cast<PoiId>(id));
  }
  return out;
}

std::size_t thread_budget() {
  if (const char* env = std::getenv("SANST_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return 1;
}

EvalReport evaluate(const model::Model& model, const data::Catalog& catalog, const data::SplitDataset& split,
                    std::size_t k, CandidatePolicy policy, std::size_t threads) {
  const auto items = model.catalog_items(catalog);
  const auto n = split.num_users();
  std::vector<std::size_t> ranks(n, 0);
  const auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t u = begin; u < n; u += step) {
      const auto scores = model.score_all(catalog, split.train[u], split.test_query_day[u], &items);
      const auto cands = candidates_for(split.train[u], split.test_target[u], catalog.num_pois(), policy);
      ranks[u] = rank_of_target(scores, cands, split.test_target[u]);
    }
  };
  const auto workers = std::max<std::size_t>(1, std::min(threads == 0 ? thread_budget() : threads, n));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          work(w, workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  return aggregate(std::move(ranks), k, policy);
}

}  // namespace sanst::eval
