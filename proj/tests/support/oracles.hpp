// SPDX-License-Identifier: Apache-2.0
//
// Independent reference routines used only by tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sanst/autodiff.hpp"

namespace sanst::testing {

/// Textbook Geohash: alternate longitude/latitude interval halving, a value
/// at or above the midpoint takes the upper half.
inline std::string reference_geohash(double lat, double lon, int chars = 12) {
  static const char* kBase32 = "0123456789bcdefghjkmnpqrstuvwxyz";
  double lat_lo = -90, lat_hi = 90, lon_lo = -180, lon_hi = 180;
  std::string out;
  bool even = true;
  int bit = 0, ch = 0;
  while (static_cast<int>(out.size()) < chars) {
    if (even) {
      const double mid = (lon_lo + lon_hi) / 2;
      if (lon >= mid) {
        ch = (ch << 1) | 1;
        lon_lo = mid;
      } else {
        ch <<= 1;
        lon_hi = mid;
      }
    } else {
      const double mid = (lat_lo + lat_hi) / 2;
      if (lat >= mid) {
        ch = (ch << 1) | 1;
        lat_lo = mid;
      } else {
        ch <<= 1;
        lat_hi = mid;
      }
    }
    even = !even;
    if (++bit == 5) {
      out.push_back(kBase32[ch]);
      bit = 0;
      ch = 0;
    }
  }
  return out;
}

/// Index of `value` after `steps` interval halvings of [lo, hi).
inline std::uint32_t halving_index(double value, double lo, double hi, int steps) {
  std::uint32_t idx = 0;
  for (int s = 0; s < steps; ++s) {
    const double mid = (lo + hi) / 2;
    idx <<= 1;
    if (value >= mid) {
      idx |= 1;
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return idx;
}

/// Days from 1970-01-01 to the civil date containing `t`, found by walking
/// whole calendar years and months of seconds from the epoch.
inline std::int64_t civil_day_count(std::int64_t t) {
  auto leap = [](std::int64_t y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; };
  auto year_secs = [&](std::int64_t y) { return (leap(y) ? 366 : 365) * std::int64_t{86400}; };
  std::int64_t y = 1970, rem = t, days = 0;
  while (rem < 0) {
    --y;
    rem += year_secs(y);
    days -= leap(y) ? 366 : 365;
  }
  while (rem >= year_secs(y)) {
    rem -= year_secs(y);
    days += leap(y) ? 366 : 365;
    ++y;
  }
  const int month_len[] = {31, leap(y) ? 29 : 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  for (int m = 0; rem >= month_len[m] * std::int64_t{86400}; ++m) {
    rem -= month_len[m] * std::int64_t{86400};
    days += month_len[m];
  }
  std::int64_t day_of_month = 0;
  while (rem >= 86400) {
    rem -= 86400;
    ++day_of_month;
  }
  return days + day_of_month;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

/// Compares analytic gradients already stored in `params` with central
/// differences of `loss`. Relative error uses max(|a|, |n|, floor).
inline GradCheckResult check_gradients(const std::vector<std::pair<std::string, ad::Tensor>>& params,
                                       const std::function<double()>& loss, double h = 1e-5,
                                       double floor = 1e-6, std::size_t stride = 1) {
  GradCheckResult res;
  for (auto [name, t] : params) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto v = t.values();
    for (std::size_t i = 0; i < v.size(); i += stride) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss();
      v[i] = orig - h;
      const double down = loss();
      v[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = name + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                    " numeric=" + std::to_string(numeric);
      }
    }
  }
  return res;
}

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double scale = 1.0, bool grad = true) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(ad::element_count(shape));
  for (auto& x : v) x = dist(rng);
  return ad::Tensor::from(std::move(shape), std::move(v), grad);
}

}  // namespace sanst::testing

namespace sanst::testing {

/// Rank by fully sorting the candidates (score descending, id ascending).
inline std::size_t sort_rank(const std::vector<double>& scores, std::vector<std::int32_t> candidates,
                             std::int32_t target) {
  std::sort(candidates.begin(), candidates.end(), [&](std::int32_t a, std::int32_t b) {
    const double sa = scores[static_cast<std::size_t>(a)], sb = scores[static_cast<std::size_t>(b)];
    return sa != sb ? sa > sb : a < b;
  });
  const auto it = std::find(candidates.begin(), candidates.end(), target);
  return static_cast<std::size_t>(it - candidates.begin()) + 1;
}

/// DCG of a ranked list holding one relevant item; the ideal DCG is 1.
inline double ndcg_by_list(std::size_t rank, std::size_t k) {
  double dcg = 0.0;
  for (std::size_t pos = 1; pos <= k; ++pos)
    if (pos == rank) dcg += 1.0 / (std::log(static_cast<double>(pos) + 1.0) / std::log(2.0));
  return dcg;
}

}  // namespace sanst::testing
