#ifndef FCT_AUTODIFF_HPP
#define FCT_AUTODIFF_HPP

// Reverse-mode automatic differentiation on a recording tape.
//
// A Var is a tensor value plus, optionally, the tape node that produced it.
// Operations on Vars record themselves on the tape of their inputs; when no
// input carries a tape nothing is recorded (inference mode). A Tape belongs
// to one training step and is not shared between threads.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "fct/tensor.hpp"

namespace fct {

/// Per-category FLOP tallies; one multiply-accumulate counts as 2 FLOPs.
struct FlopCounter {
  std::int64_t conv = 0;
  std::int64_t matmul = 0;
  std::int64_t attention = 0;
  std::int64_t norm = 0;
  std::int64_t activation = 0;

  std::int64_t total() const { return conv + matmul + attention + norm + activation; }
};

/// Routes FLOP counts of every op executed on this thread into `counter`
/// for the lifetime of the scope.
class FlopScope {
public:
  explicit FlopScope(FlopCounter& counter);
  ~FlopScope();
  FlopScope(const FlopScope&) = delete;
  FlopScope& operator=(const FlopScope&) = delete;

private:
  FlopCounter* previous_;
};

FlopCounter* active_flop_counter();

class Tape;

class Var {
public:
  Var() = default;
  /// Constant (not differentiated).
  Var(Tensor value) : value_(std::move(value)) {}  // NOLINT(google-explicit-constructor)

  const Tensor& value() const { return value_; }
  const Shape& shape() const { return value_.shape(); }
  DType dtype() const { return value_.dtype(); }
  bool is_meta() const { return value_.is_meta(); }
  bool requires_grad() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t node() const { return node_; }

private:
  friend class Tape;
  Tensor value_;
  Tape* tape_ = nullptr;
  std::size_t node_ = 0;
};

class Tape {
public:
  /// Produces the gradient of each input from the gradient of the output.
  /// `needs[i]` is false for inputs that are constants; their entry may be
  /// left as a default Tensor.
  using Backward = std::function<std::vector<Tensor>(const Tensor& grad_out, const std::vector<bool>& needs)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable leaf.
  Var leaf(Tensor value);

  /// Wraps an op result. Checks finiteness, then records the op on the tape
  /// shared by `inputs` (if any input has one).
  static Var record(const char* op, Tensor value, const std::vector<Var>& inputs, Backward backward);

  /// Runs reverse accumulation from a scalar loss. May be called once.
  void backward(const Var& loss);

  /// d(loss)/d(v); zeros when v never influenced the loss.
  Tensor grad(const Var& v) const;
  bool has_grad(const Var& v) const;

  std::size_t num_nodes() const { return grads_.size(); }
  std::size_t num_ops() const { return ops_.size(); }

private:
  struct Op {
    std::size_t output;
    std::vector<std::size_t> inputs;
    std::vector<bool> needs;
    Backward backward;
  };

  std::size_t new_node(const Tensor& value);
  void accumulate(std::size_t node, Tensor g);

  std::vector<Shape> shapes_;
  std::vector<DType> dtypes_;
  std::vector<Tensor> grads_;
  std::vector<bool> has_grad_;
  std::vector<Op> ops_;
  bool consumed_ = false;
};

// --- core ops -------------------------------------------------------------

/// Batched matrix product over the last two axes; leading axes must match.
Var matmul(const Var& a, const Var& b);

/// Elementwise arithmetic. `b` may have the same shape as `a`, be a scalar,
/// or be a vector matching the trailing (channel) axis of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Throws ValueError if `b` contains a zero.
Var div(const Var& a, const Var& b);

Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
inline Var operator*(const Var& a, double s) { return mul_scalar(a, s); }
inline Var operator*(double s, const Var& a) { return mul_scalar(a, s); }

enum class ReduceKind { sum, mean, max };

/// Reduces over `axes` (negative axes count from the back) which are removed
/// from the result. An empty axis list is the identity. max routes its
/// gradient to the first maximal element in flat order.
Var reduce(const Var& a, std::vector<int> axes, ReduceKind kind);
Var sum(const Var& a, std::vector<int> axes);
Var mean(const Var& a, std::vector<int> axes);
Var max(const Var& a, std::vector<int> axes);
Var sum_all(const Var& a);
Var mean_all(const Var& a);

Var reshape(const Var& a, Shape shape);
/// Output axis i is input axis order[i].
Var permute(const Var& a, std::vector<int> order);

/// Stops gradient flow.
inline Var detach(const Var& a) { return Var(a.value()); }

/// Counts into the active FlopCounter, if any.
void count_flops(std::int64_t FlopCounter::*category, std::int64_t flops);

}  // namespace fct

#endif  // FCT_AUTODIFF_HPP
