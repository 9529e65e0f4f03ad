// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sanst/autodiff.hpp"
#include "sanst/config.hpp"
#include "sanst/ingest.hpp"
#include "sanst/spatial_embed.hpp"

namespace sanst::model {

using ad::Tape;
using ad::Tensor;
using data::PoiId;

struct ModelConfig {
  std::size_t id_dim = 50;       // d_id
  std::size_t char_dim = 20;     // d_s
  std::size_t lstm_hidden = 25;  // h_s; spatial embedding width is twice this
  std::size_t max_len = 100;     // window length
  std::size_t time_window = 3;   // k, in days
  std::size_t layers = 2;
  std::size_t heads = 1;
  double dropout = 0.3;
  bool use_abs_pos = true;
  bool use_spatial = true;
  bool use_temporal = true;
  /// Score candidates against the id+spatial embedding; false uses the id part only.
  bool score_with_spatial = true;

  std::size_t spatial_dim() const { return 2 * lstm_hidden; }
  std::size_t model_dim() const { return id_dim + spatial_dim(); }
  std::size_t head_dim() const { return model_dim() / heads; }
  /// Width of the POI id table: d_id, or the full model width without spatial input.
  std::size_t id_table_dim() const { return use_spatial ? id_dim : model_dim(); }

  void validate() const;
  KeyValues to_kv() const;
  /// Reads the model.* keys present in `kv` over the defaults in `base`.
  static ModelConfig from_kv(const KeyValues& kv, ModelConfig base);
  static ModelConfig from_kv(const KeyValues& kv) { return from_kv(kv, ModelConfig{}); }
};

struct LayerParams {
  Tensor wq, wk, wv;      // [d x d]
  Tensor w1, w2;          // [d x d]
  Tensor b1, b2;          // [d]
  Tensor ln1_g, ln1_b;    // [d]
  Tensor ln2_g, ln2_b;    // [d]
};

struct ModelParams {
  Tensor poi_id_table;  // [(|L|+1) x id_table_dim], row 0 pinned to zero
  Tensor abs_pos;       // [max_len x d]
  Tensor rel_wk;        // [(2k+1) x d_head]
  Tensor rel_wv;        // [(2k+1) x d_head]
  std::vector<LayerParams> layers;
  spatial::SpatialParams spatial;

  static ModelParams init(const ModelConfig& cfg, std::size_t num_pois, std::mt19937_64& rng);

  /// Every learnable tensor under its checkpoint name.
  std::vector<std::pair<std::string, Tensor>> named() const;
  std::vector<Tensor> all() const;
  /// Tables covered by the L2 penalty: id, positional, character and relative.
  std::vector<Tensor> embedding_tables() const;
  /// Deep copy.
  ModelParams clone() const;
  void zero_padding_row();
};

/// Clipped relative day offset between positions i and j, shifted into [0, 2k].
int relative_index(std::int64_t label_i, std::int64_t label_j, std::size_t k);

/// T_i = t_q - day_i at valid positions; padding keeps the sentinel.
std::vector<std::int64_t> temporal_labels(std::span<const data::Day> days, data::Day query_day);

/// Row-major [n x n] relative indices for a window's labels.
ad::IndexMatrix relative_index_matrix(std::span<const std::int64_t> labels, std::span<const std::uint8_t> valid,
                                      std::size_t k);

/// Concatenated id and spatial rows for a fixed set of POIs in one pass.
class ItemEncoder {
 public:
  ItemEncoder(Tape& tape, const ModelConfig& cfg, const ModelParams& params, const data::Catalog& catalog,
              std::span<const PoiId> ids);

  /// E-hat rows; padding maps to a zero row.
  Tensor rows(std::span<const PoiId> ids) const;
  /// Rows used on the candidate side of the score.
  Tensor score_rows(std::span<const PoiId> ids) const;

 private:
  Tape& tape_;
  const ModelConfig& cfg_;
  const ModelParams& params_;
  std::optional<spatial::SpatialBatch> spatial_;
};

struct ForwardOutput {
  /// Outputs for positions [offset, max_len).
  Tensor hidden;
  std::size_t offset = 0;
};

class Model {
 public:
  Model(ModelConfig cfg, std::size_t num_pois, std::mt19937_64& rng);
  Model(ModelConfig cfg, ModelParams params);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  std::size_t num_pois() const { return num_pois_; }

  /// Input embeddings for `window` from `offset` on, after positional
  /// addition and dropout.
  Tensor embed_inputs(Tape& tape, const ItemEncoder& enc, const data::Window& window, std::size_t offset,
                      bool training, std::mt19937_64* rng) const;

  /// Relative-temporal causal self-attention of one layer over x [n x d].
  Tensor self_attention(Tape& tape, const LayerParams& layer, const Tensor& x, const ad::IndexMatrix& rel_idx,
                        const ad::Mask& mask) const;

  Tensor ffn(Tape& tape, const LayerParams& layer, const Tensor& x) const;

  /// Transformer stack. With `trim_padding`, leading padded positions are
  /// skipped; valid rows agree with the untrimmed pass to rounding.
  ForwardOutput forward(Tape& tape, const ItemEncoder& enc, const data::Window& window, data::Day query_day,
                        bool training, std::mt19937_64* rng, bool trim_padding = true) const;

  /// Scores of `candidates` against one output row [1 x d] -> [1 x n].
  Tensor score(Tape& tape, const ItemEncoder& enc, const Tensor& hidden_row, std::span<const PoiId> candidates) const;

  /// Candidate-side rows for POIs 1..|L| [|L| x d], computed without a tape.
  Tensor catalog_items(const data::Catalog& catalog) const;

  /// Scores indexed by POI id (entry 0 unused) for a user history at its last
  /// position. `items` may carry a precomputed catalog_items() matrix.
  std::vector<double> score_all(const data::Catalog& catalog, const data::UserSequence& history,
                                data::Day query_day, const Tensor* items = nullptr) const;

  void save(ad::Checkpoint& ck, const std::string& prefix = "") const;
  /// Writes the config as model.* metadata keys when `prefix` is empty.
  static Model load(const ad::Checkpoint& ck, const std::string& prefix = "");

 private:
  ModelConfig cfg_;
  std::size_t num_pois_;
  ModelParams params_;
};

struct Recommendation {
  PoiId poi;
  double score;
};

enum class CandidatePolicy { kExcludeHistory, kFullCatalog };
std::string to_string(CandidatePolicy p);
CandidatePolicy parse_policy(const std::string& s);

/// Top-K by descending score, ties broken by ascending id.
std::vector<Recommendation> top_k(std::span<const double> scores_by_id, std::span<const PoiId> candidates,
                                  std::size_t k);

std::vector<Recommendation> recommend(const Model& model, const data::Catalog& catalog,
                                      const data::UserSequence& history, data::Day query_day, std::size_t k,
                                      CandidatePolicy policy = CandidatePolicy::kExcludeHistory);

}  // namespace sanst::model
