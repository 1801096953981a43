#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "zengram/rng.hpp"

namespace zengram::num {

/// Shape mismatches and non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);

/// Dense row-major array of doubles. Rank-1 arrays act as a single row
/// wherever a matrix is expected.
class Array {
 public:
  Array() = default;
  explicit Array(Shape shape, double fill = 0.0);
  Array(Shape shape, std::vector<double> data);

  static Array matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Array vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.size() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  bool operator==(const Array&) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

class Tape;

/// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode recording. Nodes are appended in evaluation order, so
/// reverse insertion order is a valid reverse topological order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Array value);
  Var variable(Array value);
  /// Refers to `value` without copying; it must outlive the tape.
  Var parameter(const Array& value);

  const Array& value(Var v) const;
  const Array& value(std::uint32_t id) const;
  /// Empty array when no gradient reached the node.
  const Array& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node once.
  void backward(Var loss);

  /// Used by operations to register their output.
  Var record(Array value, std::span<const Var> parents, const char* op, BackwardFn backward);
  Var record(Array value, std::initializer_list<Var> parents, const char* op, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), op, std::move(backward));
  }
  /// Gradient buffer of `id`, zero-initialized on first use.
  Array& grad_buffer(std::uint32_t id);
  const Array& grad_of(std::uint32_t id) const { return nodes_[id].grad; }

 private:
  struct Node {
    Array owned;
    const Array* borrowed = nullptr;
    Array grad;
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. Matrices are (rows, cols).

Var matmul(Var a, Var b);            // (m,k) x (k,n)
Var matmul_nt(Var a, Var b);         // (m,k) x (n,k)^T
Var add(Var a, Var b);               // same shape
Var add_row(Var x, Var row);         // (m,n) + broadcast (n)
Var mul(Var a, Var b);               // elementwise
Var scale(Var x, double factor);
Var gelu(Var x);                     // tanh approximation
Var tanh(Var x);
/// Row-wise softmax with max subtraction.
Var softmax(Var x);
/// Row-wise softmax where columns with key_mask[c] == 0 get probability 0.
Var masked_softmax(Var x, std::span<const std::uint8_t> key_mask);
/// Per-row normalization with learned gain and bias.
Var layernorm(Var x, Var gain, Var bias, double eps = 1e-12);
Var gather_rows(Var table, std::span<const std::int32_t> ids);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var transpose(Var x);
/// out[i][j] = x[i][index[i * cols + j]].
Var select_columns(Var x, std::size_t cols, std::vector<std::uint32_t> index);
/// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);
Var sum(Var x);
/// Mean negative log-likelihood of targets over rows with mask[r] != 0;
/// 0 with zero gradient when no row is selected.
Var cross_entropy(Var logits, std::span<const std::int32_t> targets, std::span<const std::uint8_t> mask);

/// Plain (non-recorded) row-wise softmax, used by oracles and inference helpers.
Array softmax_rows(const Array& x);

}  // namespace zengram::num
