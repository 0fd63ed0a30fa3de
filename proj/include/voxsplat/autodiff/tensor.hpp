#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "voxsplat/core/error.hpp"

namespace voxsplat::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

struct TensorStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

/// Dense row-major f64 tensor with shared ownership. Copies alias the same
/// storage; use clone() or detach() for an independent buffer.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from(shape, std::vector<double>(numel_of(shape), 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    return from(shape, std::vector<double>(numel_of(shape), v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != numel_of(shape)) {
      throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    Tensor t;
    t.s_ = std::make_shared<TensorStorage>();
    t.s_->shape = std::move(shape);
    t.s_->value = std::move(values);
    t.s_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t numel() const { return s_->value.size(); }

  std::span<double> data() { return s_->value; }
  std::span<const double> data() const { return s_->value; }
  std::vector<double>& values() { return s_->value; }
  const std::vector<double>& values() const { return s_->value; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return s_->value[0];
  }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }
  bool has_grad() const { return !s_->grad.empty(); }

  /// Gradient buffer, allocated (zero-filled) on first access. The handle is
  /// shallow-const: gradients of a const handle remain writable.
  std::span<double> grad() const {
    if (s_->grad.empty()) s_->grad.assign(numel(), 0.0);
    return s_->grad;
  }
  /// Read-only gradient; zeros when never accumulated.
  std::vector<double> grad_values() const {
    return s_->grad.empty() ? std::vector<double>(numel(), 0.0) : s_->grad;
  }
  void zero_grad() { s_->grad.clear(); }

  Tensor detach() const { return from(shape(), s_->value, false); }
  Tensor clone(bool requires_grad) const { return from(shape(), s_->value, requires_grad); }

  const TensorStorage* id() const { return s_.get(); }

 private:
  std::shared_ptr<TensorStorage> s_;
};

/// Records primitive applications in execution order so the backward pass can
/// replay them in reverse. Not thread-safe; use one tape per thread.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  static bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    return std::any_of(ts.begin(), ts.end(), [](const Tensor* t) { return t->defined() && t->requires_grad(); });
  }

  /// Records `fn` as the backward rule producing input gradients from
  /// `output`'s gradient. Only call when some input requires grad.
  void record(std::vector<Tensor> inputs, Tensor output, BackwardFn fn) {
    output.set_requires_grad(true);
    nodes_.push_back({std::move(inputs), std::move(output), std::move(fn)});
  }

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

  /// Reverse-mode sweep from a scalar root. Every requires-grad leaf reachable
  /// from the tape receives a (possibly zero) gradient buffer.
  void backward(Tensor root) {
    if (!root.defined() || root.numel() != 1) {
      throw InvalidArgument("backward: root must be a scalar, got shape " +
                            (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
    }
    std::unordered_set<const TensorStorage*> outputs;
    for (const auto& n : nodes_) outputs.insert(n.output.id());
    if (!outputs.count(root.id()) && !root.requires_grad()) {
      throw InvalidArgument("backward: root is not on the tape");
    }
    root.grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->fn();
    }
    for (auto& n : nodes_) {
      for (auto& in : n.inputs) {
        if (in.defined() && in.requires_grad() && !outputs.count(in.id())) in.grad();
      }
    }
  }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
};

}  // namespace voxsplat::ad
