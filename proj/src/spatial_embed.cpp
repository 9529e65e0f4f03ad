// SPDX-License-Identifier: Apache-2.0
#include "sanst/spatial_embed.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace sanst::spatial {

namespace {

Tensor uniform(ad::Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor filled(std::size_t n, double value) { return Tensor::from({n}, std::vector<double>(n, value), true); }

Tensor gate(Tape& tape, const Tensor& x, const Tensor& h, const Tensor& w, const Tensor& u, const Tensor& b) {
  return tape.add_bias(tape.add(tape.matmul(x, w), tape.matmul(h, u)), b);
}

}  // namespace

LstmParams LstmParams::init(std::size_t input, std::size_t hidden, std::mt19937_64& rng) {
  const double wb = std::sqrt(6.0 / static_cast<double>(input + hidden));
  const double ub = std::sqrt(6.0 / static_cast<double>(2 * hidden));
  LstmParams p;
  p.wi = uniform({input, hidden}, wb, rng);
  p.wf = uniform({input, hidden}, wb, rng);
  p.wo = uniform({input, hidden}, wb, rng);
  p.wg = uniform({input, hidden}, wb, rng);
  p.ui = uniform({hidden, hidden}, ub, rng);
  p.uf = uniform({hidden, hidden}, ub, rng);
  p.uo = uniform({hidden, hidden}, ub, rng);
  p.ug = uniform({hidden, hidden}, ub, rng);
  p.bi = filled(hidden, 0.0);
  p.bf = filled(hidden, 1.0);
  p.bo = filled(hidden, 0.0);
  p.bg = filled(hidden, 0.0);
  return p;
}

std::vector<std::pair<std::string, Tensor>> LstmParams::named(const std::string& prefix) const {
  return {{prefix + "wi", wi}, {prefix + "wf", wf}, {prefix + "wo", wo}, {prefix + "wg", wg},
          {prefix + "ui", ui}, {prefix + "uf", uf}, {prefix + "uo", uo}, {prefix + "ug", ug},
          {prefix + "bi", bi}, {prefix + "bf", bf}, {prefix + "bo", bo}, {prefix + "bg", bg}};
}

SpatialParams SpatialParams::init(std::size_t char_dim, std::size_t hidden, std::mt19937_64& rng) {
  SpatialParams p;
  p.char_table = uniform({kVocabulary, char_dim}, 0.05, rng);
  p.fwd = LstmParams::init(char_dim, hidden, rng);
  p.bwd = LstmParams::init(char_dim, hidden, rng);
  return p;
}

std::vector<std::pair<std::string, Tensor>> SpatialParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out{{"char_table", char_table}};
  for (auto& e : fwd.named("lstm_fwd_")) out.push_back(std::move(e));
  for (auto& e : bwd.named("lstm_bwd_")) out.push_back(std::move(e));
  return out;
}

LstmState lstm_step(Tape& tape, const Tensor& x, const LstmState& s, const LstmParams& p) {
  const auto i = tape.sigmoid(gate(tape, x, s.h, p.wi, p.ui, p.bi));
  const auto f = tape.sigmoid(gate(tape, x, s.h, p.wf, p.uf, p.bf));
  const auto o = tape.sigmoid(gate(tape, x, s.h, p.wo, p.uo, p.bo));
  const auto g = tape.tanh(gate(tape, x, s.h, p.wg, p.ug, p.bg));
  auto c = tape.add(tape.mul(f, s.c), tape.mul(i, g));
  auto h = tape.mul(o, tape.tanh(c));
  return {std::move(h), std::move(c)};
}

Tensor encode_codes(Tape& tape, std::span<const geo::CellCode> codes, const SpatialParams& p) {
  const auto batch = codes.size();
  const auto hidden = p.fwd.hidden();
  if (batch == 0) return Tensor::zeros({0, p.output_dim()});
  const auto len = geo::CellCode::size();
  // step_ids[t] holds the alphabet symbol of character t for every code
  std::vector<std::vector<std::int32_t>> step_ids(len, std::vector<std::int32_t>(batch));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      const int sym = codes[b].symbol(t);
      if (sym < 0) throw std::invalid_argument("invalid character in cell code " + codes[b].str());
      step_ids[t][b] = sym;
    }
  }
  const LstmState zero{Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
  LstmState fwd = zero;
  for (std::size_t t = 0; t < len; ++t) fwd = lstm_step(tape, tape.embedding(p.char_table, step_ids[t]), fwd, p.fwd);
  LstmState bwd = zero;
  for (std::size_t t = len; t-- > 0;) bwd = lstm_step(tape, tape.embedding(p.char_table, step_ids[t]), bwd, p.bwd);
  return tape.concat_cols(fwd.h, bwd.h);
}

Tensor encode_code(Tape& tape, const geo::CellCode& code, const SpatialParams& p) {
  return encode_codes(tape, std::span<const geo::CellCode>(&code, 1), p);
}

SpatialBatch::SpatialBatch(Tape& tape, const SpatialParams& p, const data::Catalog& catalog,
                           std::span<const data::PoiId> ids)
    : tape_(tape), row_of_poi_(catalog.num_pois() + 1, -1) {
  std::map<geo::CellCode, std::int32_t> cell_rows;
  std::vector<geo::CellCode> codes;
  for (const auto id : ids) {
    if (id == data::kPadding) continue;
    if (!catalog.valid_poi(id)) throw std::out_of_range("unknown POI id " + std::to_string(id));
    auto& slot = row_of_poi_[static_cast<std::size_t>(id)];
    if (slot >= 0) continue;
    const auto& cell = catalog.poi_cell(id);
    const auto [it, fresh] = cell_rows.emplace(cell, static_cast<std::int32_t>(codes.size()));
    if (fresh) codes.push_back(cell);
    slot = it->second;
  }
  cells_ = codes.size();
  row_of_poi_[0] = static_cast<std::int32_t>(cells_);
  table_ = tape.concat_rows(encode_codes(tape, codes, p), Tensor::zeros({1, p.output_dim()}));
}

Tensor SpatialBatch::rows(std::span<const data::PoiId> ids) const {
  std::vector<std::int32_t> idx(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    const auto row = (id >= 0 && static_cast<std::size_t>(id) < row_of_poi_.size())
                         ? row_of_poi_[static_cast<std::size_t>(id)]
                         : -1;
    if (row < 0) throw std::out_of_range("POI id " + std::to_string(id) + " not prepared in this spatial batch");
    idx[i] = row;
  }
  return tape_.embedding(table_, idx);
}

}  // namespace sanst::spatial
