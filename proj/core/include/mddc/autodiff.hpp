#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// float64 arrays. A Tape records every operation applied to its values;
// Tape::backward walks the records in reverse and accumulates gradients
// into tracked leaves. Tapes are cheap to build and are meant to be
// rebuilt every optimisation step.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mddc::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct NdValue {
  Shape shape;
  std::vector<double> data;
  std::optional<std::vector<double>> grad;
  bool tracked = false;

  NdValue() = default;
  // Throws ShapeError when data.size() != numel(shape).
  NdValue(Shape shape, std::vector<double> data, bool tracked = false);

  static NdValue zeros(Shape shape, bool tracked = false);
  static NdValue full(Shape shape, double value, bool tracked = false);
  static NdValue scalar(double value);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const;
};

class Tape;

// Lightweight handle to a node on a tape. Valid as long as the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const;
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const NdValue& value() const;
  const Shape& shape() const { return value().shape; }
  std::span<const double> data() const { return value().data; }
  std::size_t size() const { return value().size(); }
  // Value of a single-element node.
  double item() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  // Reads the output node's gradient and adds into its inputs' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t output)>;

  struct Record {
    std::string_view op;
    std::vector<std::size_t> inputs;
    std::size_t output = 0;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf participates in differentiation iff value.tracked.
  Var leaf(NdValue value);
  // Leaf that never receives a gradient, regardless of value.tracked.
  Var constant(NdValue value);

  // Appends an operation result. The backward function is dropped when no
  // input requires a gradient, so untracked computations store no closures.
  Var record(std::string_view op, std::vector<std::size_t> inputs, NdValue out,
             BackwardFn backward);

  const NdValue& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const;
  bool is_leaf(std::size_t id) const;

  // Gradient buffer for a node, allocated as zeros on first access.
  std::vector<double>& grad_buffer(std::size_t id);
  // Gradient of a node after backward(); throws if none was produced.
  std::span<const double> grad(Var v) const;
  bool has_grad(Var v) const;

  // loss must hold exactly one element. Intermediate gradients are cleared
  // before the sweep; leaf gradients accumulate across calls until
  // zero_grad().
  void backward(Var loss);
  void zero_grad();

  std::size_t size() const { return nodes_.size(); }
  const std::vector<Record>& records() const { return records_; }

 private:
  struct Node {
    NdValue value;
    bool requires_grad = false;
    bool leaf = true;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Record> records_;
};

// ---------------------------------------------------------------------------
// Operations. All inputs must live on the same tape.

// Cross-correlation. input [B,Cin,H,W], kernel [Cout,Cin,kh,kw], optional
// bias [Cout] (pass a default-constructed Var to omit).
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding,
           Var bias = {});

// Elementwise. Binary ops accept identical shapes or a single-element
// operand on either side; anything else is a ShapeError.
// relu'(0) is taken to be 0.
Var relu(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var exp(Var x);

// Numerically stable softmax along one axis. Rejects non-finite input.
Var softmax(Var x, std::size_t axis);

// Non-overlapping k x k average pooling on [B,C,H,W]; trailing rows or
// columns that do not fill a window are dropped.
Var avg_pool2d(Var x, std::size_t k);
// Mean over every element, returned with shape [].
Var global_mean(Var x);
// Mean over one axis; the axis is removed from the shape.
Var mean_axis(Var x, std::size_t axis);
Var sum(Var x);
Var flatten(Var x);
Var reshape(Var x, Shape shape);
// Inserts a new axis of length `count` at `axis`, repeating x along it.
Var expand(Var x, std::size_t axis, std::size_t count);

// x [B,in], weight [out,in], optional bias [out] -> [B,out].
Var linear(Var x, Var weight, Var bias = {});
// 2-D matrix product with optional transposition of either operand.
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);

// Sum over rows r of 1 - <a_r,b_r> / (|a_r||b_r| + eps).
Var rowwise_cosine_distance(Var a, Var b, double eps = 1e-6);

Var mse_loss(Var a, Var b);
// Mean over the batch of -log softmax(logits)[target].
Var cross_entropy_loss(Var logits, std::span<const int> targets);

}  // namespace mddc::ad
