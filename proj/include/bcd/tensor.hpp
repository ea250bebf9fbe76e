#pragma once

// Dense float64 tensor with a recorded computation graph for reverse-mode
// differentiation. Row-major storage, no broadcasting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace bcd {

/// Thrown when a caller breaks an operation's preconditions (shapes, ranges).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown for invalid experiment or model configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when a non-finite value shows up where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractViolation(what);
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

namespace detail {
inline thread_local bool grad_recording = true;
}  // namespace detail

/// Disables graph recording on this thread for its lifetime (evaluation passes).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_recording) { detail::grad_recording = false; }
  ~NoGradGuard() { detail::grad_recording = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    for (auto d : shape) require(d > 0, "tensor dimensions must be positive, got " + shape_str(shape));
    require(shape_numel(shape) == values.size(),
            "tensor data length " + std::to_string(values.size()) + " does not match shape " +
                shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const {
    require(axis < rank(), "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    return node_->shape[axis];
  }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  const std::vector<double>& vec() const { return node_->value; }

  /// Mutable access for leaves only (parameter updates, fixture construction).
  std::span<double> mutable_values() {
    require(node_->is_leaf(), "mutable access to a non-leaf tensor");
    return node_->value;
  }

  double item() const {
    require(numel() == 1, "item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t flat) const { return node_->value[flat]; }

  double at(std::initializer_list<std::size_t> idx) const {
    require(idx.size() == rank(), "index rank mismatch for shape " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      require(i < node_->shape[axis], "index out of range for shape " + shape_str(shape()));
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->value[flat];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    require(node_->is_leaf(), "requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  Tensor detach() const { return Tensor(shape(), vec(), false); }
  bool is_leaf() const { return node_->is_leaf(); }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// Builds an op result; the graph edge is recorded only when some input requires grad.
  static Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, const char* op,
                            std::function<void(detail::Node&)> backward) {
    Tensor out;
    out.node_ = std::make_shared<detail::Node>();
    out.node_->shape = std::move(shape);
    out.node_->value = std::move(values);
    out.node_->op = op;
    const bool any = detail::grad_recording &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      out.node_->requires_grad = true;
      for (auto& t : inputs) out.node_->inputs.push_back(t.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Topologically ordered record of the graph reachable from a root.
class Tape {
 public:
  static Tape record(const Tensor& root) {
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const detail::Node*> seen;
    // Iterative post-order DFS: inputs land before the ops that consume them.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(&root.node(), 0);
    seen.insert(&root.node());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        detail::Node* child = node->inputs[next++].get();
        if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
      } else {
        tape.nodes_.push_back(node);
        stack.pop_back();
      }
    }
    return tape;
  }

  std::span<detail::Node* const> nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

 private:
  std::vector<detail::Node*> nodes_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad,
/// then releases the recorded graph.
inline void backward(const Tensor& loss) {
  require(loss.numel() == 1, "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  Tape tape = Tape::record(loss);
  require(!tape.empty(), "backward on a tensor with no recorded graph");
  // Interior gradients start fresh; leaves accumulate.
  for (auto* n : tape.nodes())
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
  loss.node().ensure_grad();
  loss.node().grad[0] += 1.0;
  auto nodes = tape.nodes();
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->is_leaf()) n->backward(*n);
  }
  for (auto* n : nodes) {
    if (!n->is_leaf()) {
      n->inputs.clear();
      n->backward = nullptr;
      n->grad.clear();
    }
  }
}

namespace detail {

inline std::vector<double>& grad_of(Node& node, std::size_t input) {
  Node& in = *node.inputs[input];
  in.ensure_grad();
  return in.grad;
}

inline bool wants_grad(const Node& node, std::size_t input) { return node.inputs[input]->requires_grad; }

}  // namespace detail

/// Max over coordinates of |analytic - numeric| / max(1, |numeric|), using
/// central differences. `f` must build a fresh scalar graph from its argument.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  require(step > 0.0, "grad_check step must be positive");
  Tensor probe(x.shape(), x.vec(), true);
  Tensor y = f(probe);
  require(y.numel() == 1, "grad_check needs a scalar-valued function");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: f is non-finite at x");
  std::vector<double> analytic(x.numel(), 0.0);
  if (y.requires_grad()) {
    backward(y);
    if (probe.has_grad()) analytic.assign(probe.grad().begin(), probe.grad().end());
  }
  double worst = 0.0;
  std::vector<double> buf = x.vec();
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + step;
    const double fp = f(Tensor(x.shape(), buf)).item();
    buf[i] = orig - step;
    const double fm = f(Tensor(x.shape(), buf)).item();
    buf[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: f is non-finite at a perturbed point (coordinate " + std::to_string(i) + ")");
    const double numeric = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

}  // namespace bcd
