#include "mddc/autodiff.hpp"

#include <algorithm>
#include <sstream>
#include <utility>

#include "mddc/error.hpp"

namespace mddc::ad {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

NdValue::NdValue(Shape s, std::vector<double> d, bool t)
    : shape(std::move(s)), data(std::move(d)), tracked(t) {
  if (data.size() != numel(shape)) {
    throw ShapeError("NdValue: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel(shape)) + " elements, got " +
                     std::to_string(data.size()));
  }
}

NdValue NdValue::zeros(Shape s, bool t) { return full(std::move(s), 0.0, t); }

NdValue NdValue::full(Shape s, double v, bool t) {
  const std::size_t n = numel(s);
  return NdValue(std::move(s), std::vector<double>(n, v), t);
}

NdValue NdValue::scalar(double v) { return NdValue({}, {v}); }

std::size_t NdValue::dim(std::size_t axis) const {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape));
  }
  return shape[axis];
}

Tape& Var::tape() const {
  if (!tape_) throw Error("use of an unbound Var");
  return *tape_;
}

const NdValue& Var::value() const { return tape().value(id_); }

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) {
    throw ShapeError("item() on non-scalar " + shape_str(v.shape));
  }
  return v.data[0];
}

bool Var::requires_grad() const { return tape().requires_grad(id_); }

Var Tape::leaf(NdValue value) {
  const bool track = value.tracked;
  value.grad.reset();
  nodes_.push_back(Node{std::move(value), track, true, {}});
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(NdValue value) {
  value.tracked = false;
  return leaf(std::move(value));
}

Var Tape::record(std::string_view op, std::vector<std::size_t> inputs,
                 NdValue out, BackwardFn backward) {
  bool needs = false;
  for (std::size_t id : inputs) {
    if (id >= nodes_.size()) throw Error("record: dangling input id");
    needs = needs || nodes_[id].requires_grad;
  }
  out.tracked = needs;
  out.grad.reset();
  const std::size_t id = nodes_.size();
  nodes_.push_back(
      Node{std::move(out), needs, false, needs ? std::move(backward) : nullptr});
  records_.push_back(Record{op, std::move(inputs), id});
  return Var(this, id);
}

const NdValue& Tape::value(std::size_t id) const { return nodes_.at(id).value; }

bool Tape::requires_grad(std::size_t id) const {
  return nodes_.at(id).requires_grad;
}

bool Tape::is_leaf(std::size_t id) const { return nodes_.at(id).leaf; }

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  auto& v = nodes_.at(id).value;
  if (!v.grad) v.grad.emplace(v.size(), 0.0);
  return *v.grad;
}

bool Tape::has_grad(Var v) const {
  return nodes_.at(v.id()).value.grad.has_value();
}

std::span<const double> Tape::grad(Var v) const {
  const auto& value = nodes_.at(v.id()).value;
  if (!value.grad) {
    throw Error("no gradient recorded for node " + std::to_string(v.id()));
  }
  return *value.grad;
}

void Tape::backward(Var loss) {
  if (&loss.tape() != this) throw Error("backward: loss lives on another tape");
  const std::size_t top = loss.id();
  if (nodes_.at(top).value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " +
                     shape_str(nodes_[top].value.shape));
  }
  if (!nodes_[top].requires_grad) return;

  for (std::size_t i = 0; i <= top; ++i) {
    if (!nodes_[i].leaf) nodes_[i].value.grad.reset();
  }
  grad_buffer(top)[0] += 1.0;

  for (std::size_t i = top + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.leaf || !node.backward || !node.value.grad) continue;
    node.backward(*this, i);
  }
}

void Tape::zero_grad() {
  for (auto& node : nodes_) node.value.grad.reset();
}

}  // namespace mddc::ad
