// SPDX-License-Identifier: Apache-2.0
#include "sanst/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace sanst::model {

namespace {

Tensor uniform(ad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return uniform({fan_in, fan_out}, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Tensor constant(std::size_t n, double value) { return Tensor::from({n}, std::vector<double>(n, value), true); }

}  // namespace

// --- config ---------------------------------------------------------------

void ModelConfig::validate() const {
  if (id_dim == 0 || char_dim == 0 || lstm_hidden == 0) throw ConfigError("embedding sizes must be positive");
  if (max_len == 0) throw ConfigError("max_len must be positive");
  if (layers == 0) throw ConfigError("at least one transformer layer is required");
  if (heads == 0 || model_dim() % heads != 0) {
    throw ConfigError("model width " + std::to_string(model_dim()) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::ostringstream dr;
  dr.precision(17);
  dr << dropout;
  kv.set("model.id_dim", std::to_string(id_dim));
  kv.set("model.char_dim", std::to_string(char_dim));
  kv.set("model.lstm_hidden", std::to_string(lstm_hidden));
  kv.set("model.max_len", std::to_string(max_len));
  kv.set("model.time_window", std::to_string(time_window));
  kv.set("model.layers", std::to_string(layers));
  kv.set("model.heads", std::to_string(heads));
  kv.set("model.dropout", dr.str());
  kv.set("model.use_abs_pos", b(use_abs_pos));
  kv.set("model.use_spatial", b(use_spatial));
  kv.set("model.use_temporal", b(use_temporal));
  kv.set("model.score_with_spatial", b(score_with_spatial));
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv, ModelConfig c) {
  c.id_dim = kv.get_size("model.id_dim", c.id_dim);
  c.char_dim = kv.get_size("model.char_dim", c.char_dim);
  c.lstm_hidden = kv.get_size("model.lstm_hidden", c.lstm_hidden);
  c.max_len = kv.get_size("model.max_len", c.max_len);
  c.time_window = kv.get_size("model.time_window", c.time_window);
  c.layers = kv.get_size("model.layers", c.layers);
  c.heads = kv.get_size("model.heads", c.heads);
  c.dropout = kv.get_double("model.dropout", c.dropout);
  c.use_abs_pos = kv.get_bool("model.use_abs_pos", c.use_abs_pos);
  c.use_spatial = kv.get_bool("model.use_spatial", c.use_spatial);
  c.use_temporal = kv.get_bool("model.use_temporal", c.use_temporal);
  c.score_with_spatial = kv.get_bool("model.score_with_spatial", c.score_with_spatial);
  c.validate();
  return c;
}

// --- parameters -------------------------------------------------------------

ModelParams ModelParams::init(const ModelConfig& cfg, std::size_t num_pois, std::mt19937_64& rng) {
  cfg.validate();
  const auto d = cfg.model_dim();
  const auto rel_rows = 2 * cfg.time_window + 1;
  ModelParams p;
  p.poi_id_table = uniform({num_pois + 1, cfg.id_table_dim()}, 0.05, rng);
  p.abs_pos = uniform({cfg.max_len, d}, 0.05, rng);
  p.rel_wk = uniform({rel_rows, cfg.head_dim()}, 0.05, rng);
  p.rel_wv = uniform({rel_rows, cfg.head_dim()}, 0.05, rng);
  for (std::size_t t = 0; t < cfg.layers; ++t) {
    LayerParams l;
    l.wq = xavier(d, d, rng);
    l.wk = xavier(d, d, rng);
    l.wv = xavier(d, d, rng);
    l.w1 = xavier(d, d, rng);
    l.w2 = xavier(d, d, rng);
    l.b1 = constant(d, 0.0);
    l.b2 = constant(d, 0.0);
    l.ln1_g = constant(d, 1.0);
    l.ln1_b = constant(d, 0.0);
    l.ln2_g = constant(d, 1.0);
    l.ln2_b = constant(d, 0.0);
    p.layers.push_back(std::move(l));
  }
  p.spatial = spatial::SpatialParams::init(cfg.char_dim, cfg.lstm_hidden, rng);
  p.zero_padding_row();
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out{
      {"poi_id_table", poi_id_table}, {"abs_pos", abs_pos}, {"rel_wk", rel_wk}, {"rel_wv", rel_wv}};
  for (std::size_t t = 0; t < layers.size(); ++t) {
    const auto pre = "layer" + std::to_string(t) + ".";
    const auto& l = layers[t];
    out.insert(out.end(), {{pre + "wq", l.wq},
                           {pre + "wk", l.wk},
                           {pre + "wv", l.wv},
                           {pre + "w1", l.w1},
                           {pre + "w2", l.w2},
                           {pre + "b1", l.b1},
                           {pre + "b2", l.b2},
                           {pre + "ln1.g", l.ln1_g},
                           {pre + "ln1.b", l.ln1_b},
                           {pre + "ln2.g", l.ln2_g},
                           {pre + "ln2.b", l.ln2_b}});
  }
  for (auto& e : spatial.named()) out.push_back(std::move(e));
  return out;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named()) out.push_back(t);
  return out;
}

std::vector<Tensor> ModelParams::embedding_tables() const {
  return {poi_id_table, abs_pos, spatial.char_table, rel_wk, rel_wv};
}

ModelParams ModelParams::clone() const {
  ModelParams p = *this;
  p.poi_id_table = poi_id_table.clone();
  p.abs_pos = abs_pos.clone();
  p.rel_wk = rel_wk.clone();
  p.rel_wv = rel_wv.clone();
  for (auto& l : p.layers) {
    for (auto* t : {&l.wq, &l.wk, &l.wv, &l.w1, &l.w2, &l.b1, &l.b2, &l.ln1_g, &l.ln1_b, &l.ln2_g, &l.ln2_b}) {
      *t = t->clone();
    }
  }
  p.spatial.char_table = spatial.char_table.clone();
  for (auto* dir : {&p.spatial.fwd, &p.spatial.bwd}) {
    for (auto* t : {&dir->wi, &dir->wf, &dir->wo, &dir->wg, &dir->ui, &dir->uf, &dir->uo, &dir->ug, &dir->bi,
                    &dir->bf, &dir->bo, &dir->bg}) {
      *t = t->clone();
    }
  }
  return p;
}

void ModelParams::zero_padding_row() {
  auto v = poi_id_table.values();
  std::fill_n(v.begin(), poi_id_table.cols(), 0.0);
}

// --- temporal labels ----------------------------------------------------------

int relative_index(std::int64_t label_i, std::int64_t label_j, std::size_t k) {
  const auto kk = static_cast<std::int64_t>(k);
  const auto clipped = std::max(-kk, std::min(kk, label_j - label_i));
  return static_cast<int>(clipped + kk);
}

std::vector<std::int64_t> temporal_labels(std::span<const data::Day> days, data::Day query_day) {
  std::vector<std::int64_t> labels(days.size(), std::numeric_limits<std::int64_t>::min());
  for (std::size_t i = 0; i < days.size(); ++i) {
    if (days[i] != data::kPadDay) labels[i] = static_cast<std::int64_t>(query_day) - days[i];
  }
  return labels;
}

ad::IndexMatrix relative_index_matrix(std::span<const std::int64_t> labels, std::span<const std::uint8_t> valid,
                                      std::size_t k) {
  const auto n = labels.size();
  ad::IndexMatrix idx(n * n, static_cast<std::int32_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (valid[j]) idx[i * n + j] = relative_index(labels[i], labels[j], k);
    }
  }
  return idx;
}

// --- item encoder -------------------------------------------------------------

ItemEncoder::ItemEncoder(Tape& tape, const ModelConfig& cfg, const ModelParams& params,
                         const data::Catalog& catalog, std::span<const PoiId> ids)
    : tape_(tape), cfg_(cfg), params_(params) {
  if (cfg.use_spatial) spatial_.emplace(tape, params.spatial, catalog, ids);
}

Tensor ItemEncoder::rows(std::span<const PoiId> ids) const {
  auto id_rows = tape_.embedding(params_.poi_id_table, ids);
  if (!spatial_) return id_rows;
  return tape_.concat_cols(id_rows, spatial_->rows(ids));
}

Tensor ItemEncoder::score_rows(std::span<const PoiId> ids) const {
  if (cfg_.score_with_spatial || !spatial_) return rows(ids);
  return tape_.embedding(params_.poi_id_table, ids);
}

// --- model ----------------------------------------------------------------------

Model::Model(ModelConfig cfg, std::size_t num_pois, std::mt19937_64& rng)
    : cfg_(cfg), num_pois_(num_pois), params_(ModelParams::init(cfg, num_pois, rng)) {}

Model::Model(ModelConfig cfg, ModelParams params)
    : cfg_(cfg), num_pois_(params.poi_id_table.rows() - 1), params_(std::move(params)) {
  cfg_.validate();
}

Tensor Model::embed_inputs(Tape& tape, const ItemEncoder& enc, const data::Window& window, std::size_t offset,
                           bool training, std::mt19937_64* rng) const {
  const std::span<const PoiId> ids(window.input.data() + offset, window.input.size() - offset);
  auto x = enc.rows(ids);
  if (cfg_.use_abs_pos) {
    std::vector<std::int32_t> pos(ids.size());
    std::iota(pos.begin(), pos.end(), static_cast<std::int32_t>(offset + cfg_.max_len - window.input.size()));
    x = tape.add(x, tape.embedding(params_.abs_pos, pos));
  }
  return tape.dropout(x, cfg_.dropout, training, rng);
}

Tensor Model::self_attention(Tape& tape, const LayerParams& layer, const Tensor& x, const ad::IndexMatrix& rel_idx,
                             const ad::Mask& mask) const {
  const auto n = x.rows();
  const auto dh = cfg_.head_dim();
  const auto buckets = 2 * cfg_.time_window + 1;
  const auto q_all = tape.matmul(x, layer.wq);
  const auto k_all = tape.matmul(x, layer.wk);
  const auto v_all = tape.matmul(x, layer.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out;
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    const auto pick = [&](const Tensor& t) { return cfg_.heads == 1 ? t : tape.slice_cols(t, h * dh, dh); };
    const auto q = pick(q_all), k = pick(k_all), v = pick(v_all);
    auto logits = tape.matmul_bt(q, k);
    if (cfg_.use_temporal) logits = tape.add(logits, tape.gather_cols(tape.matmul_bt(q, params_.rel_wk), rel_idx, n));
    const auto alpha = tape.softmax_rows(tape.scale(logits, inv_sqrt), &mask);
    auto s = tape.matmul(alpha, v);
    if (cfg_.use_temporal) s = tape.add(s, tape.matmul(tape.bucket_cols(alpha, rel_idx, buckets), params_.rel_wv));
    out = h == 0 ? s : tape.concat_cols(out, s);
  }
  return out;
}

Tensor Model::ffn(Tape& tape, const LayerParams& layer, const Tensor& x) const {
  const auto hidden = tape.relu(tape.add_bias(tape.matmul(x, layer.w1), layer.b1));
  return tape.add_bias(tape.matmul(hidden, layer.w2), layer.b2);
}

ForwardOutput Model::forward(Tape& tape, const ItemEncoder& enc, const data::Window& window, data::Day query_day,
                             bool training, std::mt19937_64* rng, bool trim_padding) const {
  const auto len = window.input.size();
  if (len > cfg_.max_len) throw std::invalid_argument("window longer than max_len");
  std::size_t offset = 0;
  if (trim_padding) {
    while (offset < len && !window.valid[offset]) ++offset;
    for (std::size_t i = offset; i < len; ++i) {
      if (!window.valid[i]) throw std::invalid_argument("window padding must be a prefix");
    }
  }
  const auto n = len - offset;
  if (n == 0) return {Tensor::zeros({0, cfg_.model_dim()}), offset};

  std::vector<std::uint8_t> valid(n);
  for (std::size_t i = 0; i < n; ++i) valid[i] = window.valid[offset + i] ? 1 : 0;
  ad::Mask mask(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask[i * n + j] = valid[j];
  }
  const auto labels =
      temporal_labels(std::span<const data::Day>(window.input_days.data() + offset, n), query_day);
  const auto rel_idx = relative_index_matrix(labels, valid, cfg_.time_window);

  auto x = embed_inputs(tape, enc, window, offset, training, rng);
  for (const auto& layer : params_.layers) {
    auto a = self_attention(tape, layer, tape.layer_norm(x, layer.ln1_g, layer.ln1_b), rel_idx, mask);
    x = tape.add(x, tape.dropout(a, cfg_.dropout, training, rng));
    auto f = ffn(tape, layer, tape.layer_norm(x, layer.ln2_g, layer.ln2_b));
    x = tape.add(x, tape.dropout(f, cfg_.dropout, training, rng));
  }
  return {x, offset};
}

Tensor Model::score(Tape& tape, const ItemEncoder& enc, const Tensor& hidden_row,
                    std::span<const PoiId> candidates) const {
  const auto items = enc.score_rows(candidates);
  if (items.cols() == hidden_row.cols()) return tape.matmul_bt(hidden_row, items);
  return tape.matmul_bt(tape.slice_cols(hidden_row, 0, items.cols()), items);
}

Tensor Model::catalog_items(const data::Catalog& catalog) const {
  Tape tape(false);
  std::vector<PoiId> ids(catalog.num_pois());
  std::iota(ids.begin(), ids.end(), 1);
  const ItemEncoder enc(tape, cfg_, params_, catalog, ids);
  return enc.score_rows(ids);
}

std::vector<double> Model::score_all(const data::Catalog& catalog, const data::UserSequence& history,
                                     data::Day query_day, const Tensor* items) const {
  if (history.size() == 0) throw std::invalid_argument("cannot score an empty history");
  Tape tape(false);
  const auto window = data::history_window(history, cfg_.max_len);
  const ItemEncoder enc(tape, cfg_, params_, catalog, window.input);
  const auto out = forward(tape, enc, window, query_day, false, nullptr);
  const auto last = tape.slice_rows(out.hidden, out.hidden.rows() - 1, 1);
  const Tensor all_items = items ? *items : catalog_items(catalog);
  const auto width = all_items.cols();
  const auto row = width == last.cols() ? last : tape.slice_cols(last, 0, width);
  const auto scores = tape.matmul_bt(row, all_items);
  std::vector<double> by_id(catalog.num_pois() + 1, 0.0);
  std::copy(scores.values().begin(), scores.values().end(), by_id.begin() + 1);
  return by_id;
}

void Model::save(ad::Checkpoint& ck, const std::string& prefix) const {
  if (prefix.empty()) {
    auto kv = ck.metadata.empty() ? KeyValues{} : KeyValues::parse(ck.metadata);
    kv.merge(cfg_.to_kv());
    ck.metadata = kv.to_string();
  }
  for (const auto& [name, t] : params_.named()) ck.add(prefix + name, t);
}

Model Model::load(const ad::Checkpoint& ck, const std::string& prefix) {
  const auto cfg = ModelConfig::from_kv(KeyValues::parse(ck.metadata, "checkpoint metadata"));
  const auto& table = ck.get(prefix + "poi_id_table");
  if (table.shape.size() != 2 || table.shape[0] < 2) throw io::FormatError("bad poi_id_table shape");
  std::mt19937_64 scratch(0);
  auto params = ModelParams::init(cfg, table.shape[0] - 1, scratch);
  for (auto& [name, t] : params.named()) ck.load_into(prefix + name, t);
  return Model(cfg, std::move(params));
}

// --- recommendation -------------------------------------------------------------

std::string to_string(CandidatePolicy p) {
  return p == CandidatePolicy::kExcludeHistory ? "exclude-history" : "full";
}

CandidatePolicy parse_policy(const std::string& s) {
  if (s == "exclude-history") return CandidatePolicy::kExcludeHistory;
  if (s == "full") return CandidatePolicy::kFullCatalog;
  throw ConfigError("unknown candidate policy '" + s + "' (expected exclude-history or full)");
}

std::vector<Recommendation> top_k(std::span<const double> scores_by_id, std::span<const PoiId> candidates,
                                  std::size_t k) {
  std::vector<Recommendation> all;
  all.reserve(candidates.size());
  for (const auto c : candidates) all.push_back({c, scores_by_id[static_cast<std::size_t>(c)]});
  const auto better = [](const Recommendation& a, const Recommendation& b) {
    return a.score != b.score ? a.score > b.score : a.poi < b.poi;
  };
  const auto keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), better);
  all.resize(keep);
  return all;
}

std::vector<Recommendation> recommend(const Model& model, const data::Catalog& catalog,
                                      const data::UserSequence& history, data::Day query_day, std::size_t k,
                                      CandidatePolicy policy) {
  const auto scores = model.score_all(catalog, history, query_day);
  std::vector<bool> seen(catalog.num_pois() + 1, false);
  if (policy == CandidatePolicy::kExcludeHistory) {
    for (const auto id : history.items) seen[static_cast<std::size_t>(id)] = true;
  }
  std::vector<PoiId> candidates;
  for (PoiId id = 1; static_cast<std::size_t>(id) <= catalog.num_pois(); ++id) {
    if (!seen[static_cast<std::size_t>(id)]) candidates.push_back(id);
  }
  return top_k(scores, candidates, k);
}

}  // namespace sanst::model
