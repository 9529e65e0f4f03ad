// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "sanst/ingest.hpp"
#include "sanst/model.hpp"

namespace sanst::eval {

using data::PoiId;
using model::CandidatePolicy;

/// 1 + candidates scoring strictly higher + equal-scoring candidates with a
/// smaller id. Throws if `target` is not a candidate.
std::size_t rank_of_target(std::span<const double> scores_by_id, std::span<const PoiId> candidates, PoiId target);

double hit_at_k(std::size_t rank, std::size_t k);
double ndcg_at_k(std::size_t rank, std::size_t k);

struct EvalReport {
  std::size_t k = 10;
  CandidatePolicy policy = CandidatePolicy::kExcludeHistory;
  std::size_t users = 0;
  double hit = 0.0;
  double ndcg = 0.0;
  std::vector<std::size_t> ranks;  // per user, in split order

  double hit_at(std::size_t k) const;
  double ndcg_at(std::size_t k) const;
  /// `hit10=… ndcg10=… users=… policy=…`
  std::string summary() const;
  /// Machine-readable summary with per-user ranks.
  std::string to_json() const;
};

EvalReport aggregate(std::vector<std::size_t> ranks, std::size_t k, CandidatePolicy policy);

/// Candidates for one user: every POI, minus the training items under the
/// exclude-history policy; the held-out target always stays in.
std::vector<PoiId> candidates_for(const data::UserSequence& train, PoiId target, std::size_t num_pois,
                                  CandidatePolicy policy);

/// Ranks each user's held-out POI. Parameters are read-only; work is spread
/// over `threads` workers (0 = SANST_THREADS or 1) with order-stable results.
EvalReport evaluate(const model::Model& model, const data::Catalog& catalog, const data::SplitDataset& split,
                    std::size_t k = 10, CandidatePolicy policy = CandidatePolicy::kExcludeHistory,
                    std::size_t threads = 0);

/// Thread count from SANST_THREADS, defaulting to 1.
std::size_t thread_budget();

}  // namespace sanst::eval
