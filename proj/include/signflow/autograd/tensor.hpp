#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/core/ndarray.hpp"

namespace signflow {

template <typename T>
struct Node {
  NdArray<T> value;
  NdArray<T> grad;  // empty until something flows into it
  bool requires_grad = false;

  NdArray<T>& grad_buffer() {
    if (grad.empty()) grad = NdArray<T>(value.shape());
    return grad;
  }
};

// Handle to a value that may participate in reverse-mode differentiation.
// Copies share the underlying node.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(NdArray<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor parameter(NdArray<T> value) { return Tensor(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }

  const NdArray<T>& value() const { return node_->value; }
  NdArray<T>& mutable_value() { return node_->value; }
  const NdArray<T>& grad() const { return node_->grad; }
  NdArray<T>& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }

  T item() const {
    if (size() != 1)
      throw ShapeError("item: tensor of shape " + shape_string(shape()) +
                       " is not scalar");
    return node_->value[0];
  }

  void zero_grad() { node_->grad = NdArray<T>(); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Ordered record of differentiable operations. Backward replays the records
// in exact reverse recording order.
template <typename T>
class Graph {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;
  using BackwardFn = std::function<void(const NdArray<T>& grad_out)>;

  struct Record {
    std::string op;
    NodePtr output;
    std::vector<NodePtr> inputs;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::string op, NodePtr output, std::vector<NodePtr> inputs,
              BackwardFn backward) {
    if (consumed_)
      throw StateError("graph: cannot record onto a graph after backward; reset it first");
    records_.push_back({std::move(op), std::move(output), std::move(inputs),
                        std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  // Operation names in the order backward visited them (last run).
  const std::vector<std::string>& backward_trace() const { return trace_; }

  void backward(const Tensor<T>& loss) {
    if (consumed_)
      throw StateError("backward: graph already differentiated; reset before reuse");
    if (!loss.defined() || loss.size() != 1)
      throw ShapeError("backward: output must be scalar, got shape " +
                       (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
    const Node<T>* target = loss.node().get();
    bool produced_here = false;
    for (const auto& r : records_)
      if (r.output.get() == target) produced_here = true;
    if (!produced_here)
      throw StateError("backward: output was not produced by a forward pass on this graph");

    loss.node()->grad_buffer()[0] += T{1};
    trace_.clear();
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.empty()) continue;
      trace_.push_back(it->op);
      it->backward(it->output->grad);
    }
    consumed_ = true;
  }

  // Drops all records; leaf gradients are left untouched.
  void reset() {
    records_.clear();
    trace_.clear();
    consumed_ = false;
  }

  static Graph* active() { return active_; }

 private:
  template <typename U>
  friend class GraphScope;
  template <typename U>
  friend class NoGradScope;

  std::vector<Record> records_;
  std::vector<std::string> trace_;
  bool consumed_ = false;

  static inline thread_local Graph* active_ = nullptr;
};

// Makes `graph` the recording target on this thread for the scope lifetime.
template <typename T>
class GraphScope {
 public:
  explicit GraphScope(Graph<T>& graph) : previous_(Graph<T>::active_) {
    Graph<T>::active_ = &graph;
  }
  ~GraphScope() { Graph<T>::active_ = previous_; }
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph<T>* previous_;
};

// Suspends recording (inference, finite differences).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Graph<T>::active_) { Graph<T>::active_ = nullptr; }
  ~NoGradScope() { Graph<T>::active_ = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Graph<T>* previous_;
};

}  // namespace signflow
