// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>

#include "sanst/model.hpp"

namespace sanst::testing {

inline data::Catalog random_catalog(std::size_t pois, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lat(-60, 60), lon(-170, 170);
  data::Catalog c;
  for (std::size_t i = 0; i < pois; ++i) c.add_poi("p" + std::to_string(i), {lat(rng), lon(rng)});
  return c;
}

/// Sequence of `len` random POIs on non-decreasing days starting at `start`.
inline data::UserSequence random_sequence(data::UserId user, std::size_t len, std::size_t pois,
                                          std::mt19937_64& rng, data::Day start = 18000) {
  std::uniform_int_distribution<data::PoiId> poi(1, static_cast<data::PoiId>(pois));
  std::uniform_int_distribution<int> gap(0, 2);
  data::UserSequence s{user, {}, {}};
  data::Day day = start;
  for (std::size_t i = 0; i < len; ++i) {
    day += gap(rng);
    s.items.push_back(poi(rng));
    s.days.push_back(day);
  }
  return s;
}

inline model::ModelConfig tiny_config() {
  model::ModelConfig c;
  c.id_dim = 6;
  c.char_dim = 4;
  c.lstm_hidden = 3;
  c.max_len = 8;
  c.time_window = 2;
  c.layers = 2;
  c.heads = 1;
  c.dropout = 0.0;
  return c;
}

}  // namespace sanst::testing
