#pragma once

// Reverse-mode autodiff over dense row-major matrices. A Tape<T> records each
// op as a node; backward() walks the nodes in reverse. Batches run along rows.
// Tape<float> drives training and inference; Tape<double> exists for gradient
// checking.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flood/container.hpp"

namespace flood::nn {

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Non-owning view of one parameter array plus its gradient accumulator.
template <typename T>
struct ParamRef {
  const T* values = nullptr;
  double* grad = nullptr;  ///< may be null (frozen parameter)
  std::size_t rows = 0, cols = 0;
};

template <typename T>
using ParamSet = std::vector<ParamRef<T>>;

enum class Op : std::uint8_t {
  Leaf, Param, MatMul, Add, AddRow, Sub, Mul, Relu, Tanh, Sigmoid, Exp,
  Concat, Slice, Gather, Sum, Mean, Mse
};

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  /// Copies `data` (rows × cols) into a leaf. Gradients are kept only when
  /// `requires_grad` is set.
  Var leaf(std::size_t rows, std::size_t cols, std::span<const T> data, bool requires_grad = false);
  Var zeros(std::size_t rows, std::size_t cols);
  /// References parameter storage directly; gradients accumulate into p.grad.
  Var param(const ParamRef<T>& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  /// a[r×c] + row[1×c] broadcast over rows.
  Var add_row(Var a, Var row);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var relu(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  /// out[:, k] = a[:, index[k]]
  Var gather_cols(Var a, std::vector<std::size_t> index);
  Var sum(Var a);
  Var mean(Var a);
  /// mean((pred − target)²) over all elements.
  Var mse(Var pred, Var target);

  std::size_t rows(Var v) const { return node(v).rows; }
  std::size_t cols(Var v) const { return node(v).cols; }
  std::span<const T> value(Var v) const;
  /// Valid after backward for nodes that required gradients.
  std::span<const T> grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 and accumulates into parameter gradients.
  /// Throws TapeError for a non-scalar loss or a tape already consumed.
  void backward(Var loss);

  /// Forgets every node (buffers are kept for reuse).
  void reset();
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return count_; }

 private:
  struct Node {
    Op op = Op::Leaf;
    std::size_t a = 0, b = 0;
    std::size_t rows = 0, cols = 0;
    std::size_t offset = 0;
    std::vector<std::size_t> aux;
    std::vector<T> owned;
    const T* data = nullptr;
    std::vector<T> grad;
    double* param_grad = nullptr;
    bool needs_grad = false;
  };

  const Node& node(Var v) const;
  Node& push(Op op, std::size_t rows, std::size_t cols, bool needs_grad);
  void require_open() const;
  void backward_node(Node& n);

  std::vector<Node> nodes_;
  std::size_t count_ = 0;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct ParamInfo {
  std::string name;
  std::size_t rows = 0, cols = 0;
  std::size_t fan_in = 1;
  std::optional<double> constant_init;  ///< otherwise uniform ±√(1/fan_in)
  std::size_t size() const { return rows * cols; }
};

/// Named f32 parameters with f64 gradient accumulators and Adam moments.
class ParamStore {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols, std::size_t fan_in);
  std::size_t add_constant(std::string name, std::size_t rows, std::size_t cols, double value);

  /// Seeded initialization in declaration order; resets gradients and optimizer state.
  void initialize(std::uint64_t seed);

  std::size_t size() const noexcept { return info_.size(); }
  std::size_t scalar_count() const;
  const ParamInfo& info(std::size_t id) const { return info_.at(id); }
  std::optional<std::size_t> find(const std::string& name) const;

  std::span<float> values(std::size_t id) { return values_.at(id); }
  std::span<const float> values(std::size_t id) const { return values_.at(id); }
  std::span<double> grad(std::size_t id) { return grads_.at(id); }
  std::span<const double> grad(std::size_t id) const { return grads_.at(id); }

  ParamSet<float> bind();
  ParamSet<float> bind_frozen() const;

  void zero_grads();
  /// Bias-corrected Adam update, then increments the step counter.
  void adam_step(double learning_rate, const AdamConfig& cfg = {});
  /// Zeroes moments and the step counter.
  void reset_optimizer();
  std::uint64_t step_count() const noexcept { return step_; }

  std::vector<std::vector<float>> snapshot_values() const { return values_; }
  void restore_values(const std::vector<std::vector<float>>& v);

  /// One f32 array per parameter, named "param/<name>".
  std::vector<io::Array> to_arrays() const;
  /// Loads values by name; shapes must match the declared layout.
  void load_arrays(const io::Container& c);

 private:
  std::vector<ParamInfo> info_;
  std::vector<std::vector<float>> values_;
  std::vector<std::vector<double>> grads_, m_, v_;
  std::uint64_t step_ = 0;
};

/// Owning copy of a parameter set at another precision; used by gradient checks.
template <typename T>
class ParamBuffer {
 public:
  explicit ParamBuffer(const ParamStore& store);

  std::vector<std::vector<T>> values;
  std::vector<std::vector<double>> grads;

  ParamSet<T> bind();
  void zero_grads();

 private:
  std::vector<std::pair<std::size_t, std::size_t>> shapes_;
};

extern template class ParamBuffer<float>;
extern template class ParamBuffer<double>;

}  // namespace flood::nn
