#pragma once

// Dense row-major tensors plus a define-by-run reverse-mode tape.
//
// All arrays are rank 1 or rank 2. A rank-1 tensor of length n behaves as a
// 1 x n row wherever a matrix is expected. Each op computes its value eagerly
// and, when the tape has gradients enabled and some input requires a gradient,
// records a backward closure. Tape::backward() walks nodes from the root down
// to index 0, which is a reverse topological order because inputs are always
// created before the nodes that consume them.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mlnmt/util.hpp"

namespace mlnmt {

template <typename T>
class Tensor {
 public:
  using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, T fill = T(0));

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, T fill = T(0)) { return Tensor({n}, fill); }
  static Tensor scalar(T value) { return Tensor({1}, value); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows);
  static Tensor from_values(std::vector<std::size_t> dims, std::vector<T> values);

  std::size_t rank() const { return dims_.size(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return dims_.size() == 2 ? dims_[0] : (dims_.empty() ? 0 : 1); }
  std::size_t cols() const { return dims_.empty() ? 0 : dims_.back(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::span<T> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  MatrixMap mat() {
    return MatrixMap(data_.data(), static_cast<Eigen::Index>(rows()),
                     static_cast<Eigen::Index>(cols()));
  }
  ConstMatrixMap mat() const {
    return ConstMatrixMap(data_.data(), static_cast<Eigen::Index>(rows()),
                          static_cast<Eigen::Index>(cols()));
  }

  void fill(T value);

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>::from_values(dims_, std::move(out));
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
  bool all_finite() const;
  std::string shape_string() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<T> data_;
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const;
  Tensor<T> grad() const;
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  // Used by ops: appends a node whose gradient propagates through `backward`
  // when any of `inputs` requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // Drops every node created after the first n. Handles to dropped nodes
  // become dangling; lets a decoder reuse bound weights across steps.
  void truncate(std::size_t n) {
    if (n < nodes_.size()) nodes_.resize(n);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient of the backward root w.r.t. node `id` (zeros if unreached).
  Tensor<T> grad(std::size_t id) const;

  // Incoming gradient of `id` during backward. Only valid inside a backward fn.
  const Tensor<T>& incoming(std::size_t id) const { return nodes_[id].grad; }

  // Accumulator for input `id`, or nullptr when it does not need a gradient.
  Tensor<T>* accumulator(std::size_t id);

  // Seeds d(root)/d(root) = 1; root must hold a single element.
  void backward(Var<T> root);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

// Multi-head attention over a batch of row-stacked sequences.
// Queries occupy rows [b * query_len, (b + 1) * query_len), keys/values rows
// [b * key_len, (b + 1) * key_len). Head h uses columns [h * dh, (h + 1) * dh).
struct AttentionLayout {
  std::size_t batch = 1;
  std::size_t query_len = 0;
  std::size_t key_len = 0;
  std::size_t heads = 1;
  // Valid keys per batch entry; empty means all key_len keys are valid.
  std::vector<std::size_t> key_lengths;
  // Query i may only attend to keys j <= i.
  bool causal = false;
  double scale = 1.0;
};

struct LossStats {
  double nll_sum = 0.0;  // unsmoothed negative log-likelihood over counted positions
  std::size_t count = 0;
};

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
// a * b^T
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
// a [m x n] plus a length-n row broadcast over every row.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, double factor);
template <typename T>
Var<T> relu(Var<T> a);
template <typename T>
Var<T> softmax_rows(Var<T> a);
template <typename T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> bias, double eps = 1e-5);
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids);
// Rows r with selected[r] become 2 * x_r - mean; gradient factor 2 on those rows.
template <typename T>
Var<T> shift_rows(Var<T> x, const std::vector<bool>& selected, std::span<const T> mean);
// Inverted dropout; identity when p == 0.
template <typename T>
Var<T> dropout(Var<T> a, double p, Rng& rng);
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout);
// Mean over positions with target != ignore_id of the (optionally label-smoothed)
// cross-entropy between softmax(logits row) and the target id.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets, int ignore_id,
                     double smoothing = 0.0, LossStats* stats = nullptr);

// Row-wise log-softmax evaluated in double precision, outside any tape.
template <typename T>
std::vector<double> log_softmax_row(std::span<const T> row);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Worst coordinate: tensor index, element index, tape and numeric values.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

template <typename T>
using ScalarFunction = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

// Compares tape gradients with central differences on up to max_coords
// coordinates sampled without replacement (all of them when fewer exist).
template <typename T>
GradCheckResult grad_check(const ScalarFunction<T>& f, std::vector<Tensor<T>>& params,
                           double eps = 1e-5, std::size_t max_coords = 500,
                           std::uint64_t seed = 0);

}  // namespace mlnmt
