// SPDX-License-Identifier: Apache-2.0
//
// Dense fp64 tensors with a reverse-mode tape. Tensors are shared handles:
// copying one aliases the same storage, like a framework tensor.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace sanst::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t size() const { return d_->value.size(); }
  /// Product of all extents but the last; 1 for scalars and vectors.
  std::size_t rows() const;
  /// Last extent; 1 for scalars.
  std::size_t cols() const;

  std::span<double> values() { return d_->value; }
  std::span<const double> values() const { return d_->value; }
  double& at(std::size_t r, std::size_t c) { return d_->value[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return d_->value[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }
  bool has_grad() const { return !d_->grad.empty(); }
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return d_->grad; }
  void zero_grad();

  bool is_leaf() const { return d_->leaf; }
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }
  Tensor clone() const;

 private:
  friend class Tape;
  struct Storage {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool leaf = true;
  };
  std::shared_ptr<Storage> d_;
};

/// Boolean mask with the same rows x cols layout as the tensor it gates.
using Mask = std::vector<std::uint8_t>;
/// Row-major integer index matrix.
using IndexMatrix = std::vector<std::int32_t>;

/// Records executed operations; backward() replays them in reverse.
/// Single-threaded; independent tapes may run on independent threads.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Tensor matmul(const Tensor& a, const Tensor& b);
  /// a * b^T
  Tensor matmul_bt(const Tensor& a, const Tensor& b);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double s);
  /// x[m x n] + bias[n] on every row.
  Tensor add_bias(const Tensor& x, const Tensor& bias);

  Tensor relu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor tanh(const Tensor& x);
  /// log(max(sigmoid(x), 1e-12)).
  Tensor log_sigmoid(const Tensor& x);

  /// Row softmax. Entries with mask == 0 get weight 0; fully masked rows are 0.
  Tensor softmax_rows(const Tensor& x, const Mask* mask = nullptr);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-8);
  /// Inverted dropout; identity when !training or rate == 0.
  Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64* rng);

  Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
  Tensor concat_cols(const Tensor& a, const Tensor& b);
  Tensor concat_rows(const Tensor& a, const Tensor& b);
  Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
  Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

  /// out[i][j] = p[i][idx[i][j]] for p [m x c], idx [m x n].
  Tensor gather_cols(const Tensor& p, const IndexMatrix& idx, std::size_t n);
  /// out[i][c] = sum over j with idx[i][j] == c of a[i][j]; a [m x n] -> [m x buckets].
  Tensor bucket_cols(const Tensor& a, const IndexMatrix& idx, std::size_t buckets);

  /// Row-wise dot product of two [m x n] tensors -> [m x 1].
  Tensor row_dot(const Tensor& a, const Tensor& b);
  Tensor sum(const Tensor& x);
  /// sum_i w_i x_i over all elements.
  Tensor weighted_sum(const Tensor& x, std::span<const double> weights);
  Tensor sum_squares(const Tensor& x);

  /// Populates gradients of every requires_grad tensor reachable from `loss`.
  /// Leaf gradients are zeroed first. Throws if called twice without reset().
  void backward(const Tensor& loss);
  void reset();

 private:
  Tensor result(Shape shape, std::initializer_list<const Tensor*> inputs);
  /// Mutable gradient of a captured input; handles share storage.
  static std::span<double> grad_of(const Tensor& t);
  void track(const Tensor& t);
  void push(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

  bool record_;
  bool consumed_ = false;
  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor> leaves_;
  std::unordered_set<const void*> leaf_ids_;
};

// Adam with bias correction.
struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place; `step` is 1-based.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 std::int64_t step, const AdamConfig& cfg);

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  /// Applies one update using each parameter's current gradient.
  void step();
  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps(std::int64_t s) { step_ = s; }

 private:
  std::vector<Tensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t step_ = 0;
  AdamConfig cfg_;
};

/// Named tensor container: magic, version, a key=value metadata block, then
/// (name, shape, little-endian fp64 payload) entries.
struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
  };
  std::string metadata;
  std::vector<Entry> entries;

  void add(const std::string& name, const Tensor& t);
  const Entry& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  /// Copies entry `name` into `t`; the shapes must match.
  void load_into(const std::string& name, Tensor& t) const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace sanst::ad
