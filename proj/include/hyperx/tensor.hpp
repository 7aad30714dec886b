#pragma once

// Dense float64 tensors with a dynamically recorded reverse-mode tape.
//
// A Tensor is a cheap handle: copies share storage and graph position, and
// clone() produces an independent leaf. Every op that sees at least one input
// with requires_grad (while grad mode is on) records a backward rule on its
// output; backward() replays those rules in reverse creation order.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyperx/errors.hpp"

namespace hyperx {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// 64-byte aligned storage. Eigen picks its vectorized code path from the
/// runtime alignment of mapped buffers, so fixed alignment keeps results
/// bit-identical from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

namespace detail {

struct Node {
  Shape shape;
  Buffer data;
  Buffer grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const noexcept { return !backward; }

  Buffer& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

inline void check_shape(const Shape& shape) {
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : node_(std::make_shared<detail::Node>()) {
    detail::check_shape(shape);
    node_->data.assign(shape_numel(shape), fill);
    node_->shape = std::move(shape);
    node_->seq = detail::next_seq();
  }

  Tensor(Shape shape, Buffer values) : node_(std::make_shared<detail::Node>()) {
    detail::check_shape(shape);
    if (values.size() != shape_numel(shape))
      throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                           shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->seq = detail::next_seq();
  }
  Tensor(Shape shape, const std::vector<double>& values) : Tensor(std::move(shape), Buffer(values.begin(), values.end())) {}
  Tensor(Shape shape, std::initializer_list<double> values) : Tensor(std::move(shape), Buffer(values)) {}

  static Tensor scalar(double v) { return Tensor(Shape{}, Buffer{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  static Tensor from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank())
      throw RankError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
    return node_->shape[axis];
  }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  double& operator[](std::size_t i) { return node_->data[i]; }
  double operator[](std::size_t i) const { return node_->data[i]; }

  double item() const {
    if (numel() != 1) throw RankError("item() needs a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    if (!node_->is_leaf()) throw Error("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = on;
    return *this;
  }

  bool has_grad() const noexcept { return node_ && node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  /// Independent leaf copy of the values; grad and graph are not copied.
  Tensor clone() const { return Tensor(shape(), node_->data); }

  bool shares_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t && t->defined() && t->requires_grad(); });
}

/// Creates an op output; wires its backward rule when recording is needed.
template <class Backward>
Tensor record(Shape shape, Buffer values, std::initializer_list<const Tensor*> inputs,
              Backward&& rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->seq = next_seq();
  if (grad_mode() && any_requires_grad(inputs)) {
    node->requires_grad = true;
    for (const Tensor* t : inputs)
      if (t && t->defined()) node->parents.push_back(t->node());
    node->backward = std::forward<Backward>(rule);
  }
  return Tensor::from_node(std::move(node));
}

/// Gradient buffer of an input, or nullptr when it takes no gradient.
inline Buffer* grad_sink(const std::shared_ptr<Node>& n) {
  return (n && n->requires_grad) ? &n->grad_buffer() : nullptr;
}

}  // namespace detail

/// Reachable recorded operations in reverse creation order.
class ComputationTape {
 public:
  static ComputationTape from_root(const Tensor& root) {
    ComputationTape tape;
    std::unordered_set<const detail::Node*> seen;
    std::vector<std::shared_ptr<detail::Node>> stack{root.node()};
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto node = std::move(stack.back());
      stack.pop_back();
      for (const auto& p : node->parents)
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
      if (!node->is_leaf()) tape.ops_.push_back(std::move(node));
    }
    std::sort(tape.ops_.begin(), tape.ops_.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });
    return tape;
  }

  std::size_t size() const noexcept { return ops_.size(); }
  const std::vector<std::shared_ptr<detail::Node>>& ops() const noexcept { return ops_; }

  /// Runs every backward rule once, newest first. The root's gradient must be seeded.
  void replay() const {
    for (const auto& op : ops_) op->backward(*op);
  }

 private:
  std::vector<std::shared_ptr<detail::Node>> ops_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf with requires_grad.
/// Repeated calls add to existing leaf gradients; use zero_grad() to reset.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw RankError("backward needs a scalar loss, got " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) throw Error("loss does not depend on any tensor that requires grad");
  auto tape = ComputationTape::from_root(loss);
  for (const auto& op : tape.ops()) op->grad.assign(op->data.size(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  tape.replay();
  for (const auto& op : tape.ops()) Buffer().swap(op->grad);
}

}  // namespace hyperx
