// SPDX-License-Identifier: Apache-2.0
#include "sanst/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sanst/binary_io.hpp"

namespace sanst::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(std::span<double> s, std::size_t r, std::size_t c) {
  return {s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}
ConstMatMap as_mat(std::span<const double> s, std::size_t r, std::size_t c) {
  return {s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)};
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kLogFloor = 1e-12;

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

bool scalar_like(const Tensor& t) { return t.size() == 1; }

}  // namespace

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.d_ = std::make_shared<Storage>();
  t.d_->value.assign(element_count(shape), 0.0);
  t.d_->shape = std::move(shape);
  t.d_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != element_count(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + to_string(shape));
  }
  Tensor t;
  t.d_ = std::make_shared<Storage>();
  t.d_->shape = std::move(shape);
  t.d_->value = std::move(values);
  t.d_->requires_grad = requires_grad;
  return t;
}

std::size_t Tensor::rows() const {
  const auto& s = d_->shape;
  if (s.size() < 2) return 1;
  return element_count(s) / s.back();
}

std::size_t Tensor::cols() const { return d_->shape.empty() ? 1 : d_->shape.back(); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return d_->value[0];
}

std::span<double> Tensor::grad() {
  if (d_->grad.empty()) d_->grad.assign(d_->value.size(), 0.0);
  return d_->grad;
}

void Tensor::zero_grad() {
  if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
}

Tensor Tensor::clone() const { return from(shape(), d_->value, requires_grad()); }

// ---------------------------------------------------------------------------

Tensor Tape::result(Shape shape, std::initializer_list<const Tensor*> inputs) {
  bool needs = false;
  if (record_) {
    for (const auto* t : inputs) {
      if (t->requires_grad()) {
        needs = true;
        if (t->is_leaf()) track(*t);
      }
    }
  }
  auto out = Tensor::zeros(std::move(shape), needs);
  out.d_->leaf = false;
  if (needs) out.grad();
  return out;
}

std::span<double> Tape::grad_of(const Tensor& t) {
  auto& g = t.d_->grad;
  if (g.empty()) g.assign(t.d_->value.size(), 0.0);
  return g;
}

void Tape::track(const Tensor& t) {
  if (leaf_ids_.insert(t.d_.get()).second) leaves_.push_back(t);
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows() && b.shape().size() <= 2,
          "matmul shape mismatch: " + to_string(a.shape()) + " * " + to_string(b.shape()));
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  auto out = result({m, n}, {&a, &b});
  as_mat(out.values(), m, n).noalias() = as_mat(a.values(), m, k) * as_mat(b.values(), k, n);
  if (out.requires_grad()) {
    push([a, b, out, m, k, n]() mutable {
      const auto dc = as_mat(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) as_mat(grad_of(a), m, k).noalias() += dc * as_mat(b.values(), k, n).transpose();
      if (b.requires_grad()) as_mat(grad_of(b), k, n).noalias() += as_mat(a.values(), m, k).transpose() * dc;
    });
  }
  return out;
}

Tensor Tape::matmul_bt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_bt shape mismatch: " + to_string(a.shape()) + " * " +
                                    to_string(b.shape()) + "^T");
  const auto m = a.rows(), k = a.cols(), n = b.rows();
  auto out = result({m, n}, {&a, &b});
  as_mat(out.values(), m, n).noalias() = as_mat(a.values(), m, k) * as_mat(b.values(), n, k).transpose();
  if (out.requires_grad()) {
    push([a, b, out, m, k, n]() mutable {
      const auto dc = as_mat(std::as_const(out).grad(), m, n);
      if (a.requires_grad()) as_mat(grad_of(a), m, k).noalias() += dc * as_mat(b.values(), n, k);
      if (b.requires_grad()) as_mat(grad_of(b), n, k).noalias() += dc.transpose() * as_mat(a.values(), m, k);
    });
  }
  return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  require(same || scalar_like(b), "add shape mismatch: " + to_string(a.shape()) + " + " + to_string(b.shape()));
  auto out = result(a.shape(), {&a, &b});
  auto y = out.values();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + (same ? bv[i] : bv[0]);
  if (out.requires_grad()) {
    push([a, b, out, same]() mutable {
      const auto dy = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto da = grad_of(a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = grad_of(b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[same ? i : 0] += dy[i];
      }
    });
  }
  return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  const bool same = a.shape() == b.shape();
  require(same || scalar_like(b), "mul shape mismatch: " + to_string(a.shape()) + " * " + to_string(b.shape()));
  auto out = result(a.shape(), {&a, &b});
  auto y = out.values();
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * (same ? bv[i] : bv[0]);
  if (out.requires_grad()) {
    push([a, b, out, same]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto av = std::as_const(a).values(), bv = std::as_const(b).values();
      if (a.requires_grad()) {
        auto da = grad_of(a);
        for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * (same ? bv[i] : bv[0]);
      }
      if (b.requires_grad()) {
        auto db = grad_of(b);
        for (std::size_t i = 0; i < dy.size(); ++i) db[same ? i : 0] += dy[i] * av[i];
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double s) {
  auto out = result(a.shape(), {&a});
  auto y = out.values();
  const auto av = a.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * s;
  if (out.requires_grad()) {
    push([a, out, s]() mutable {
      const auto dy = std::as_const(out).grad();
      auto da = grad_of(a);
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
    });
  }
  return out;
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
  require(bias.size() == x.cols(), "add_bias shape mismatch: " + to_string(x.shape()) + " + " +
                                       to_string(bias.shape()));
  const auto m = x.rows(), n = x.cols();
  auto out = result(x.shape(), {&x, &bias});
  as_mat(out.values(), m, n) = as_mat(x.values(), m, n).rowwise() + as_mat(bias.values(), 1, n).row(0);
  if (out.requires_grad()) {
    push([x, bias, out, m, n]() mutable {
      const auto dy = as_mat(std::as_const(out).grad(), m, n);
      if (x.requires_grad()) as_mat(grad_of(x), m, n) += dy;
      if (bias.requires_grad()) as_mat(grad_of(bias), 1, n) += dy.colwise().sum();
    });
  }
  return out;
}

Tensor Tape::relu(const Tensor& x) {
  auto out = result(x.shape(), {&x});
  auto y = out.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  if (out.requires_grad()) {
    push([x, out]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto xv = std::as_const(x).values();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        if (xv[i] > 0.0) dx[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor Tape::sigmoid(const Tensor& x) {
  auto out = result(x.shape(), {&x});
  auto y = out.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_sigmoid(xv[i]);
  if (out.requires_grad()) {
    push([x, out]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto yv = std::as_const(out).values();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * yv[i] * (1.0 - yv[i]);
    });
  }
  return out;
}

Tensor Tape::tanh(const Tensor& x) {
  auto out = result(x.shape(), {&x});
  auto y = out.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(xv[i]);
  if (out.requires_grad()) {
    push([x, out]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto yv = std::as_const(out).values();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (1.0 - yv[i] * yv[i]);
    });
  }
  return out;
}

Tensor Tape::log_sigmoid(const Tensor& x) {
  auto out = result(x.shape(), {&x});
  auto y = out.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double s = stable_sigmoid(xv[i]);
    if (s <= kLogFloor) {
      y[i] = std::log(kLogFloor);
    } else {
      y[i] = xv[i] >= 0.0 ? -std::log1p(std::exp(-xv[i])) : xv[i] - std::log1p(std::exp(xv[i]));
    }
  }
  if (out.requires_grad()) {
    push([x, out]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto xv = std::as_const(x).values();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) {
        const double s = stable_sigmoid(xv[i]);
        if (s > kLogFloor) dx[i] += dy[i] * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor Tape::softmax_rows(const Tensor& x, const Mask* mask) {
  const auto m = x.rows(), n = x.cols();
  require(!mask || mask->size() == m * n, "softmax mask size mismatch");
  auto out = result(x.shape(), {&x});
  auto y = out.values();
  const auto xv = x.values();
  for (std::size_t r = 0; r < m; ++r) {
    const auto keep = [&](std::size_t c) { return !mask || (*mask)[r * n + c] != 0; };
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      if (keep(c)) mx = std::max(mx, xv[r * n + c]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) continue;  // fully masked row stays zero
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (keep(c)) {
        y[r * n + c] = std::exp(xv[r * n + c] - mx);
        total += y[r * n + c];
      }
    }
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] /= total;
  }
  if (out.requires_grad()) {
    push([x, out, m, n]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto yv = std::as_const(out).values();
      auto dx = grad_of(x);
      for (std::size_t r = 0; r < m; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < n; ++c) dot += yv[r * n + c] * dy[r * n + c];
        for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += yv[r * n + c] * (dy[r * n + c] - dot);
      }
    });
  }
  return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const auto m = x.rows(), n = x.cols();
  require(gain.size() == n && bias.size() == n, "layer_norm parameter shape mismatch for " + to_string(x.shape()));
  auto out = result(x.shape(), {&x, &gain, &bias});
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto rstd = std::make_shared<std::vector<double>>(m);
  auto y = out.values();
  const auto xv = x.values(), g = gain.values(), b = bias.values();
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xv[r * n + c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xv[r * n + c] - mean) * (xv[r * n + c] - mean);
    var /= static_cast<double>(n);
    (*rstd)[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xv[r * n + c] - mean) * (*rstd)[r];
      (*xhat)[r * n + c] = h;
      y[r * n + c] = g[c] * h + b[c];
    }
  }
  if (out.requires_grad()) {
    push([x, gain, bias, out, xhat, rstd, m, n]() mutable {
      const auto dy = std::as_const(out).grad();
      const auto g = std::as_const(gain).values();
      std::vector<double> dh(n);
      for (std::size_t r = 0; r < m; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          dh[c] = dy[r * n + c] * g[c];
          mean_dh += dh[c];
          mean_dh_h += dh[c] * (*xhat)[r * n + c];
        }
        mean_dh /= static_cast<double>(n);
        mean_dh_h /= static_cast<double>(n);
        if (x.requires_grad()) {
          auto dx = grad_of(x);
          for (std::size_t c = 0; c < n; ++c) {
            dx[r * n + c] += (*rstd)[r] * (dh[c] - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
          }
        }
        if (gain.requires_grad()) {
          auto dg = grad_of(gain);
          for (std::size_t c = 0; c < n; ++c) dg[c] += dy[r * n + c] * (*xhat)[r * n + c];
        }
        if (bias.requires_grad()) {
          auto db = grad_of(bias);
          for (std::size_t c = 0; c < n; ++c) db[c] += dy[r * n + c];
        }
      }
    });
  }
  return out;
}

Tensor Tape::dropout(const Tensor& x, double rate, bool training, std::mt19937_64* rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  if (!rng) throw std::invalid_argument("dropout in training mode needs a generator");
  auto out = result(x.shape(), {&x});
  auto keep = std::make_shared<std::vector<double>>(x.size());
  std::bernoulli_distribution survive(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  auto y = out.values();
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*keep)[i] = survive(*rng) ? inv : 0.0;
    y[i] = xv[i] * (*keep)[i];
  }
  if (out.requires_grad()) {
    push([x, out, keep]() mutable {
      const auto dy = std::as_const(out).grad();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (*keep)[i];
    });
  }
  return out;
}

Tensor Tape::embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  const auto v = table.rows(), d = table.cols();
  for (const auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw std::out_of_range("embedding id " + std::to_string(id) + " outside table of " + std::to_string(v) +
                              " rows");
    }
  }
  auto out = result({ids.size(), d}, {&table});
  auto y = out.values();
  const auto tv = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(ids[i]) * d), d,
                y.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (out.requires_grad()) {
    std::vector<std::int32_t> kept(ids.begin(), ids.end());
    push([table, out, kept = std::move(kept), d]() mutable {
      const auto dy = std::as_const(out).grad();
      auto dt = grad_of(table);
      for (std::size_t i = 0; i < kept.size(); ++i) {
        const auto row = static_cast<std::size_t>(kept[i]) * d;
        for (std::size_t c = 0; c < d; ++c) dt[row + c] += dy[i * d + c];
      }
    });
  }
  return out;
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "concat_cols row mismatch: " + to_string(a.shape()) + " | " + to_string(b.shape()));
  const auto m = a.rows(), na = a.cols(), nb = b.cols();
  auto out = result({m, na + nb}, {&a, &b});
  auto y = as_mat(out.values(), m, na + nb);
  y.leftCols(static_cast<Eigen::Index>(na)) = as_mat(a.values(), m, na);
  y.rightCols(static_cast<Eigen::Index>(nb)) = as_mat(b.values(), m, nb);
  if (out.requires_grad()) {
    push([a, b, out, m, na, nb]() mutable {
      const auto dy = as_mat(std::as_const(out).grad(), m, na + nb);
      if (a.requires_grad()) as_mat(grad_of(a), m, na) += dy.leftCols(static_cast<Eigen::Index>(na));
      if (b.requires_grad()) as_mat(grad_of(b), m, nb) += dy.rightCols(static_cast<Eigen::Index>(nb));
    });
  }
  return out;
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "concat_rows column mismatch: " + to_string(a.shape()) + " / " +
                                    to_string(b.shape()));
  const auto n = a.cols(), ma = a.rows(), mb = b.rows();
  auto out = result({ma + mb, n}, {&a, &b});
  auto y = out.values();
  std::copy(a.values().begin(), a.values().end(), y.begin());
  std::copy(b.values().begin(), b.values().end(), y.begin() + static_cast<std::ptrdiff_t>(a.size()));
  if (out.requires_grad()) {
    push([a, b, out]() mutable {
      const auto dy = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto da = grad_of(a);
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dy[i];
      }
      if (b.requires_grad()) {
        auto db = grad_of(b);
        const auto off = a.size();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += dy[off + i];
      }
    });
  }
  return out;
}

Tensor Tape::slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const auto m = x.rows(), n = x.cols();
  require(begin + count <= n, "slice_cols out of range for " + to_string(x.shape()));
  auto out = result({m, count}, {&x});
  as_mat(out.values(), m, count) =
      as_mat(x.values(), m, n).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count));
  if (out.requires_grad()) {
    push([x, out, m, n, begin, count]() mutable {
      as_mat(grad_of(x), m, n).middleCols(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(count)) +=
          as_mat(std::as_const(out).grad(), m, count);
    });
  }
  return out;
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const auto m = x.rows(), n = x.cols();
  require(begin + count <= m, "slice_rows out of range for " + to_string(x.shape()));
  auto out = result({count, n}, {&x});
  const auto xv = x.values();
  std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(begin * n), count * n, out.values().begin());
  if (out.requires_grad()) {
    push([x, out, n, begin]() mutable {
      const auto dy = std::as_const(out).grad();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dy.size(); ++i) dx[begin * n + i] += dy[i];
    });
  }
  return out;
}

Tensor Tape::gather_cols(const Tensor& p, const IndexMatrix& idx, std::size_t n) {
  const auto m = p.rows(), c = p.cols();
  require(idx.size() == m * n, "gather_cols index size mismatch");
  for (const auto i : idx) require(i >= 0 && static_cast<std::size_t>(i) < c, "gather_cols index out of range");
  auto out = result({m, n}, {&p});
  auto y = out.values();
  const auto pv = p.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = pv[r * c + static_cast<std::size_t>(idx[r * n + j])];
  }
  if (out.requires_grad()) {
    push([p, out, idx, m, n, c]() mutable {
      const auto dy = std::as_const(out).grad();
      auto dp = grad_of(p);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) dp[r * c + static_cast<std::size_t>(idx[r * n + j])] += dy[r * n + j];
      }
    });
  }
  return out;
}

Tensor Tape::bucket_cols(const Tensor& a, const IndexMatrix& idx, std::size_t buckets) {
  const auto m = a.rows(), n = a.cols();
  require(idx.size() == m * n, "bucket_cols index size mismatch");
  for (const auto i : idx) require(i >= 0 && static_cast<std::size_t>(i) < buckets, "bucket_cols index out of range");
  auto out = result({m, buckets}, {&a});
  auto y = out.values();
  const auto av = a.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < n; ++j) y[r * buckets + static_cast<std::size_t>(idx[r * n + j])] += av[r * n + j];
  }
  if (out.requires_grad()) {
    push([a, out, idx, m, n, buckets]() mutable {
      const auto dy = std::as_const(out).grad();
      auto da = grad_of(a);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) da[r * n + j] += dy[r * buckets + static_cast<std::size_t>(idx[r * n + j])];
      }
    });
  }
  return out;
}

Tensor Tape::row_dot(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "row_dot shape mismatch: " + to_string(a.shape()) + " . " + to_string(b.shape()));
  const auto m = a.rows(), n = a.cols();
  auto out = result({m, 1}, {&a, &b});
  as_mat(out.values(), m, 1) = as_mat(a.values(), m, n).cwiseProduct(as_mat(b.values(), m, n)).rowwise().sum();
  if (out.requires_grad()) {
    push([a, b, out, m, n]() mutable {
      const auto dy = as_mat(std::as_const(out).grad(), m, 1);
      if (a.requires_grad()) {
        as_mat(grad_of(a), m, n) += (as_mat(std::as_const(b).values(), m, n).array().colwise() * dy.col(0).array()).matrix();
      }
      if (b.requires_grad()) {
        as_mat(grad_of(b), m, n) += (as_mat(std::as_const(a).values(), m, n).array().colwise() * dy.col(0).array()).matrix();
      }
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& x) {
  auto out = result({}, {&x});
  const auto xv = x.values();
  out.values()[0] = std::accumulate(xv.begin(), xv.end(), 0.0);
  if (out.requires_grad()) {
    push([x, out]() mutable {
      const double g = std::as_const(out).grad()[0];
      for (auto& v : grad_of(x)) v += g;
    });
  }
  return out;
}

Tensor Tape::weighted_sum(const Tensor& x, std::span<const double> weights) {
  require(weights.size() == x.size(), "weighted_sum weight count mismatch for " + to_string(x.shape()));
  auto out = result({}, {&x});
  const auto xv = x.values();
  double total = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) total += weights[i] * xv[i];
  out.values()[0] = total;
  if (out.requires_grad()) {
    std::vector<double> w(weights.begin(), weights.end());
    push([x, out, w = std::move(w)]() mutable {
      const double g = std::as_const(out).grad()[0];
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g * w[i];
    });
  }
  return out;
}

Tensor Tape::sum_squares(const Tensor& x) {
  auto out = result({}, {&x});
  const auto xv = x.values();
  double total = 0.0;
  for (const double v : xv) total += v * v;
  out.values()[0] = total;
  if (out.requires_grad()) {
    push([x, out]() mutable {
      const double g = std::as_const(out).grad()[0];
      const auto xv = std::as_const(x).values();
      auto dx = grad_of(x);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += 2.0 * g * xv[i];
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("backward() already ran on this tape; call reset() first");
  if (loss.size() != 1) throw ShapeError("backward() needs a scalar loss, got " + to_string(loss.shape()));
  consumed_ = true;
  for (auto& leaf : leaves_) leaf.zero_grad();
  if (!loss.requires_grad()) return;
  Tensor seed = loss;
  seed.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::reset() {
  nodes_.clear();
  leaves_.clear();
  leaf_ids_.clear();
  consumed_ = false;
}

// ---------------------------------------------------------------------------

void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::int64_t step, const AdamConfig& cfg) {
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

void Adam::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    adam_update(p.values(), std::as_const(p).grad(), m_[i].values(), v_[i].values(), step_, cfg_);
  }
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[9] = "SANSTCK1";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void Checkpoint::add(const std::string& name, const Tensor& t) {
  if (contains(name)) throw std::invalid_argument("duplicate checkpoint entry " + name);
  entries.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(entries.begin(), entries.end(), [&](const Entry& e) { return e.name == name; });
}

const Checkpoint::Entry& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw std::out_of_range("checkpoint has no entry " + name);
}

void Checkpoint::load_into(const std::string& name, Tensor& t) const {
  const auto& e = get(name);
  if (e.shape != t.shape()) {
    throw ShapeError("checkpoint entry " + name + " has shape " + to_string(e.shape) + ", expected " +
                     to_string(t.shape()));
  }
  std::copy(e.values.begin(), e.values.end(), t.values().begin());
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  io::Writer w(out);
  w.put_bytes(kCheckpointMagic, 8);
  w.put(kCheckpointVersion);
  w.put_string(metadata);
  w.put<std::uint64_t>(entries.size());
  for (const auto& e : entries) {
    w.put_string(e.name);
    w.put<std::uint64_t>(e.shape.size());
    for (const auto extent : e.shape) w.put<std::uint64_t>(extent);
    w.put_bytes(e.values.data(), e.values.size() * sizeof(double));
  }
  out.flush();
  if (!w.ok()) throw std::runtime_error("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  io::Reader r(in);
  r.expect_magic(kCheckpointMagic);
  if (const auto v = r.get<std::uint32_t>(); v != kCheckpointVersion) {
    throw io::FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  Checkpoint ck;
  ck.metadata = r.get_string();
  const auto n = r.get_count();
  for (std::uint64_t i = 0; i < n; ++i) {
    Entry e;
    e.name = r.get_string();
    const auto rank = r.get_count(8);
    for (std::uint64_t k = 0; k < rank; ++k) e.shape.push_back(r.get_count());
    e.values.resize(element_count(e.shape));
    r.get_bytes(e.values.data(), e.values.size() * sizeof(double));
    ck.entries.push_back(std::move(e));
  }
  return ck;
}

}  // namespace sanst::ad
