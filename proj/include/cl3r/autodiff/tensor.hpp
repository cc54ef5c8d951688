#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "cl3r/error.hpp"

namespace cl3r::ad {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vec = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// A named, persistent array trained across graphs.
template <typename Scalar>
struct Parameter {
  std::string name;
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;
  bool decay = true;  // subject to decoupled weight decay

  Index size() const { return value.size(); }
};

template <typename Scalar>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other) { *this = other; }
  ParameterStore& operator=(const ParameterStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->name, p->shape, p->decay).value = p->value;
    return *this;
  }
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter<Scalar>& add(const std::string& name, const Shape& shape, bool decay = true) {
    for (Index d : shape) {
      if (d <= 0) throw InvalidArgument("parameter '" + name + "': non-positive extent in " + to_string(shape));
    }
    if (index_.count(name)) throw InvalidArgument("parameter '" + name + "' registered twice");
    auto p = std::make_unique<Parameter<Scalar>>();
    p->name = name;
    p->shape = shape;
    p->value = Vec<Scalar>::Zero(numel(shape));
    p->grad = Vec<Scalar>::Zero(numel(shape));
    p->decay = decay;
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

  Parameter<Scalar>& at(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw InvalidArgument("unknown parameter '" + std::string(name) + "'");
    return *params_[it->second];
  }
  const Parameter<Scalar>& at(std::string_view name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }

  std::size_t size() const { return params_.size(); }
  Parameter<Scalar>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<Scalar>& operator[](std::size_t i) const { return *params_[i]; }

  Index total_values() const {
    Index n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& p : params_) out.add(p->name, p->shape, p->decay).value = p->value.template cast<Other>();
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Node {
  std::string_view op;
  Shape shape;
  Vec<Scalar> value;
  Vec<Scalar> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  Parameter<Scalar>* param = nullptr;
  std::function<void(const Vec<Scalar>&)> backward;

  Vec<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Vec<Scalar>::Zero(value.size());
    return grad;
  }
};

// Lightweight handle to a node owned by a Graph.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph<Scalar>* graph, Node<Scalar>* node) : graph_(graph), node_(node) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const {
    const Index r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw InvalidArgument("axis out of range for shape " + to_string(shape()));
    return node_->shape[static_cast<std::size_t>(axis)];
  }
  Index size() const { return node_->value.size(); }
  const Vec<Scalar>& value() const { return node_->value; }
  Scalar item() const {
    if (size() != 1) throw InvalidArgument("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }
  // Gradient after Graph::backward; zeros when no gradient reached this node.
  Vec<Scalar> grad() const {
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return Vec<Scalar>::Zero(node_->value.size());
  }
  bool requires_grad() const { return node_->requires_grad; }

  Graph<Scalar>& graph() const { return *graph_; }
  Node<Scalar>* node() const { return node_; }

 private:
  Graph<Scalar>* graph_ = nullptr;
  Node<Scalar>* node_ = nullptr;
};

// Tape of nodes in creation (= topological) order. Confined to one thread.
template <typename Scalar>
class Graph {
 public:
  Graph() = default;
  // With gradients disabled, parameters enter as constants and no backward closures are kept.
  explicit Graph(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor<Scalar> constant(const Shape& shape, Vec<Scalar> values) {
    check_values(shape, values);
    return push("constant", shape, std::move(values), false, nullptr);
  }
  Tensor<Scalar> constant(const Shape& shape, Scalar fill) {
    return constant(shape, Vec<Scalar>::Constant(numel(shape), fill));
  }
  Tensor<Scalar> scalar(Scalar v) { return constant(Shape{}, Vec<Scalar>::Constant(1, v)); }

  // Leaf that receives a gradient but is not backed by a parameter.
  Tensor<Scalar> variable(const Shape& shape, Vec<Scalar> values) {
    check_values(shape, values);
    return push("variable", shape, std::move(values), true, nullptr);
  }

  // Leaf bound to a persistent parameter; gradients accumulate into it on backward.
  Tensor<Scalar> param(Parameter<Scalar>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    auto t = push("parameter", p.shape, p.value, grad_enabled_, grad_enabled_ ? &p : nullptr);
    param_nodes_.emplace(&p, t.node());
    return t;
  }

  // Records an op. `backward` receives d(loss)/d(output) and must push into parent grad buffers.
  Tensor<Scalar> record(std::string_view op, Shape shape, Vec<Scalar> value, bool requires_grad,
                        std::function<void(const Vec<Scalar>&)> backward) {
    if (backward_done_) throw InvalidArgument("graph: cannot record ops after backward");
    requires_grad = requires_grad && grad_enabled_;
    auto t = push(op, std::move(shape), std::move(value), requires_grad, nullptr);
    if (requires_grad) t.node()->backward = std::move(backward);
    return t;
  }

  void backward(const Tensor<Scalar>& loss) {
    if (backward_done_) throw InvalidArgument("graph: backward already called on this graph");
    if (loss.size() != 1) throw InvalidArgument("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    backward_done_ = true;
    if (!loss.requires_grad()) return;
    Node<Scalar>* root = loss.node();
    root->grad_buffer()[0] = Scalar(1);
    std::size_t start = 0;
    while (nodes_[start].get() != root) ++start;
    for (std::size_t i = start + 1; i-- > 0;) {
      Node<Scalar>& n = *nodes_[i];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(n.grad);
      if (n.param) n.param->grad += n.grad;
    }
  }

  bool grad_enabled() const { return grad_enabled_; }
  bool backward_done() const { return backward_done_; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  static void check_values(const Shape& shape, const Vec<Scalar>& values) {
    if (values.size() != numel(shape)) {
      throw InvalidArgument("tensor of shape " + to_string(shape) + " given " + std::to_string(values.size()) + " values");
    }
  }

  Tensor<Scalar> push(std::string_view op, Shape shape, Vec<Scalar> value, bool requires_grad, Parameter<Scalar>* p) {
    auto node = std::make_unique<Node<Scalar>>();
    node->op = op;
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->param = p;
    nodes_.push_back(std::move(node));
    return {this, nodes_.back().get()};
  }

  std::vector<std::unique_ptr<Node<Scalar>>> nodes_;
  std::unordered_map<const Parameter<Scalar>*, Node<Scalar>*> param_nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

}  // namespace cl3r::ad
