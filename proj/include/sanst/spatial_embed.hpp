// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sanst/autodiff.hpp"
#include "sanst/geocode.hpp"
#include "sanst/ingest.hpp"

namespace sanst::spatial {

using ad::Tape;
using ad::Tensor;

inline constexpr std::size_t kVocabulary = 32;

/// One LSTM direction. Gate order everywhere: input, forget, output, candidate.
struct LstmParams {
  Tensor wi, wf, wo, wg;  // [input x hidden]
  Tensor ui, uf, uo, ug;  // [hidden x hidden]
  Tensor bi, bf, bo, bg;  // [hidden]

  static LstmParams init(std::size_t input, std::size_t hidden, std::mt19937_64& rng);
  std::size_t hidden() const { return ui.rows(); }
  std::vector<std::pair<std::string, Tensor>> named(const std::string& prefix) const;
};

struct SpatialParams {
  Tensor char_table;  // [32 x d_s]
  LstmParams fwd;
  LstmParams bwd;

  static SpatialParams init(std::size_t char_dim, std::size_t hidden, std::mt19937_64& rng);
  std::size_t output_dim() const { return 2 * fwd.hidden(); }
  std::vector<std::pair<std::string, Tensor>> named() const;
};

struct LstmState {
  Tensor h;  // [batch x hidden]
  Tensor c;
};

/// c' = f*c + i*g, h' = o*tanh(c'), batched over rows of `x`.
LstmState lstm_step(Tape& tape, const Tensor& x, const LstmState& state, const LstmParams& p);

/// Spatial embeddings for a batch of codes: forward final state then backward
/// final state, one row per code.
Tensor encode_codes(Tape& tape, std::span<const geo::CellCode> codes, const SpatialParams& p);
Tensor encode_code(Tape& tape, const geo::CellCode& code, const SpatialParams& p);

/// Per-pass memo of spatial embeddings for a set of POIs. Each distinct cell
/// is encoded once; the padding id maps to a zero row.
class SpatialBatch {
 public:
  SpatialBatch(Tape& tape, const SpatialParams& p, const data::Catalog& catalog, std::span<const data::PoiId> ids);

  /// [ids.size() x d_ES]; every id must have been passed to the constructor.
  Tensor rows(std::span<const data::PoiId> ids) const;
  std::size_t distinct_cells() const { return cells_; }

 private:
  Tape& tape_;
  Tensor table_;  // distinct cells plus a trailing zero row
  std::vector<std::int32_t> row_of_poi_;  // -1 when not requested
  std::size_t cells_ = 0;
};

}  // namespace sanst::spatial
