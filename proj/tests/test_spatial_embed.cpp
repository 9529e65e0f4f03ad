// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sanst/spatial_embed.hpp"
#include "support/oracles.hpp"

using namespace sanst;
using namespace sanst::spatial;

namespace {

using Vec = std::vector<double>;

Vec affine(const Vec& x, const Tensor& w, const Vec& h, const Tensor& u, const Tensor& b) {
  const std::size_t n = b.size();
  Vec out(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = b.values()[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * w.at(i, j);
    for (std::size_t i = 0; i < h.size(); ++i) s += h[i] * u.at(i, j);
    out[j] = s;
  }
  return out;
}

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Plain-loop LSTM over the symbol sequence, returning the final hidden state.
Vec unrolled(const std::vector<int>& symbols, const Tensor& table, const LstmParams& p) {
  const std::size_t h = p.hidden();
  Vec hs(h, 0.0), cs(h, 0.0);
  for (const int s : symbols) {
    Vec x(table.cols());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = table.at(static_cast<std::size_t>(s), k);
    const auto i = affine(x, p.wi, hs, p.ui, p.bi), f = affine(x, p.wf, hs, p.uf, p.bf);
    const auto o = affine(x, p.wo, hs, p.uo, p.bo), g = affine(x, p.wg, hs, p.ug, p.bg);
    for (std::size_t k = 0; k < h; ++k) {
      cs[k] = sig(f[k]) * cs[k] + sig(i[k]) * std::tanh(g[k]);
      hs[k] = sig(o[k]) * std::tanh(cs[k]);
    }
  }
  return hs;
}

std::vector<int> symbols_of(const geo::CellCode& code) {
  std::vector<int> s;
  for (std::size_t i = 0; i < geo::kCodeLength; ++i) s.push_back(code.symbol(i));
  return s;
}

}  // namespace

TEST_CASE("lstm step") {
  std::mt19937_64 rng(1);
  auto p = LstmParams::init(1, 1, rng);
  for (auto* t : {&p.wi, &p.wf, &p.wo, &p.wg, &p.ui, &p.uf, &p.uo, &p.ug, &p.bi, &p.bf, &p.bo, &p.bg})
    std::fill(t->values().begin(), t->values().end(), 0.0);
  Tape tape;
  const LstmState zero{Tensor::zeros({1, 1}), Tensor::zeros({1, 1})};
  const auto s0 = lstm_step(tape, Tensor::zeros({1, 1}), zero, p);
  CHECK(s0.h.item() == 0.0);
  CHECK(s0.c.item() == 0.0);

  // saturated input and output gates, identity candidate path
  p.bi.values()[0] = 50.0;
  p.bo.values()[0] = 50.0;
  p.wg.values()[0] = 1.0;
  const auto s1 = lstm_step(tape, Tensor::from({1, 1}, {1.0}), zero, p);
  CHECK(s1.c.item() == doctest::Approx(std::tanh(1.0)).epsilon(1e-12));
  CHECK(s1.h.item() == doctest::Approx(std::tanh(std::tanh(1.0))).epsilon(1e-12));
}

TEST_CASE("lstm and spatial gradients") {
  std::mt19937_64 rng(2);
  auto p = SpatialParams::init(4, 3, rng);
  for (auto& [name, t] : p.named()) t.set_requires_grad(true);
  for (auto& v : p.char_table.values()) v *= 10.0;  // keep the check away from the round-off floor
  const std::vector<geo::CellCode> codes{geo::cell_of({48.85, 2.35}), geo::cell_of({-33.9, 151.2}),
                                         geo::cell_of({48.85, 2.35})};
  Tensor weights = sanst::testing::random_tensor({3, 6}, rng, 1.0, false);
  const auto loss = [&](bool backward) {
    Tape tape;
    auto l = tape.sum(tape.mul(encode_codes(tape, codes, p), weights));
    if (backward) tape.backward(l);
    return l.item();
  };
  loss(true);
  const auto result = sanst::testing::check_gradients(p.named(), [&] { return loss(false); });
  CHECK(result.max_rel_error < 1e-6);
}

TEST_CASE("encode matches unrolled oracle") {
  std::mt19937_64 rng(3);
  const auto p = SpatialParams::init(20, 25, rng);
  std::uniform_real_distribution<double> lat(-90, 90), lon(-180, 180);
  for (int trial = 0; trial < 20; ++trial) {
    const auto code = geo::cell_of({lat(rng), lon(rng)});
    Tape tape(false);
    const auto e = encode_code(tape, code, p);
    REQUIRE(e.shape() == ad::Shape{1, 50});
    auto sym = symbols_of(code);
    const auto fwd = unrolled(sym, p.char_table, p.fwd);
    std::reverse(sym.begin(), sym.end());
    const auto bwd = unrolled(sym, p.char_table, p.bwd);
    for (std::size_t k = 0; k < 25; ++k) {
      CHECK(e.at(0, k) == doctest::Approx(fwd[k]).epsilon(1e-12));
      CHECK(e.at(0, 25 + k) == doctest::Approx(bwd[k]).epsilon(1e-12));
    }
  }
}

TEST_CASE("encode determinism and palindrome symmetry") {
  std::mt19937_64 rng(4);
  auto p = SpatialParams::init(8, 5, rng);
  const auto code = geo::cell_of({40.7, -74.0});
  Tape tape(false);
  const auto a = encode_code(tape, code, p), b = encode_code(tape, code, p);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a.values()[k] == b.values()[k]);

  p.bwd = p.fwd;
  const auto pal = geo::CellCode::parse("bcd012210dcb");
  const auto e = encode_code(tape, pal, p);
  for (std::size_t k = 0; k < 5; ++k) CHECK(e.at(0, k) == e.at(0, 5 + k));
}

TEST_CASE("spatial batch") {
  data::Catalog catalog;
  catalog.add_poi("a", {10.0, 20.0});
  catalog.add_poi("b", {10.0, 20.0});  // same cell as a
  catalog.add_poi("c", {-45.0, 100.0});
  std::mt19937_64 rng(5);
  const auto p = SpatialParams::init(6, 4, rng);
  Tape tape(false);
  const std::vector<data::PoiId> ids{1, 2, 3, 0};
  SpatialBatch batch(tape, p, catalog, ids);
  CHECK(batch.distinct_cells() == 2);
  const std::vector<data::PoiId> query{3, 1, 2, 0};
  const auto rows = batch.rows(query);
  REQUIRE(rows.shape() == ad::Shape{4, 8});
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(rows.at(1, k) == rows.at(2, k));
    CHECK(rows.at(3, k) == 0.0);
  }
  for (const auto id : {1, 3}) {
    const auto single = encode_code(tape, catalog.poi_cell(id), p);
    const std::size_t r = id == 3 ? 0 : 1;
    for (std::size_t k = 0; k < 8; ++k) CHECK(rows.at(r, k) == doctest::Approx(single.at(0, k)).epsilon(1e-14));
  }
  const std::vector<data::PoiId> missing{4};
  CHECK_THROWS(batch.rows(missing));
}
