/*
 * Copyright 2026 The Thermonet Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Tape-based reverse-mode graph. Nodes are appended in evaluation order, so
// the tape index is already a topological order and backward is a single
// reverse sweep.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "thermonet/autodiff/tensor.hpp"

namespace thermonet::ad {

/// A named trainable tensor with its accumulated gradient.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;

  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

/// Ordered collection of parameters. Insertion order is the serialization
/// and optimizer order; addresses are stable.
template <class T>
class ParamSet {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw Error("parameter '" + name + "' registered twice");
    params_.push_back(std::make_unique<Parameter<T>>(name, std::move(value)));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Parameter<T>& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return *params_[it->second];
  }
  const Parameter<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter '" + name + "'");
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& at(std::size_t i) { return *params_[i]; }
  const Parameter<T>& at(std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.fill(T{0});
  }

  void set_frozen(bool frozen) {
    for (auto& p : params_) p->frozen = frozen;
  }

  /// Deep copy; the copy shares nothing with the original.
  ParamSet clone() const {
    ParamSet out;
    for (const auto& p : params_) {
      auto& q = out.add(p->name, p->value);
      q.frozen = p->frozen;
    }
    return out;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
class Graph;

/// Handle to a node of a graph.
template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  bool requires_grad() const { return graph->requires_grad(id); }
  const Tensor<T>& grad() const { return graph->grad(id); }
};

template <class T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    Node n;
    n.op = "leaf";
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  /// Binds a parameter; its gradient is accumulated into Parameter::grad by
  /// backward(). Frozen parameters enter as constants.
  Var<T> param(Parameter<T>& p) {
    Node n;
    n.op = "param:" + p.name;
    n.value = p.value;
    n.requires_grad = !p.frozen;
    n.param = &p;
    return push(std::move(n));
  }

  /// Records an operation node. `fn` receives this graph and the node id and
  /// must accumulate into the gradients of inputs that require them.
  Var<T> record(std::string op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn fn) {
    Node n;
    n.op = std::move(op);
    n.value = std::move(value);
    for (const Var<T>& v : inputs) {
      if (v.graph != this) throw Error(n.op + ": input belongs to a different graph");
      n.inputs.push_back(v.id);
      n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    return push(std::move(n));
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first use.
  Tensor<T>& grad(std::size_t id) {
    Node& n = nodes_.at(id);
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }
  const Tensor<T>& grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    if (!n.has_grad) throw Error("graph: node " + std::to_string(id) + " has no gradient");
    return n.grad;
  }

  /// Reverse sweep from a scalar loss. Intermediate gradients are recomputed
  /// on every call; leaf and parameter gradients accumulate until cleared.
  void backward(Var<T> loss) {
    if (loss.graph != this) throw Error("backward: loss belongs to a different graph");
    const Node& root = nodes_.at(loss.id);
    if (root.value.size() != 1) {
      throw Error("backward: loss must be scalar, got shape " + to_string(root.value.shape()));
    }
    for (Node& n : nodes_) {
      if (n.backward && n.has_grad) n.grad.fill(T{0});
    }
    grad(loss.id)[0] += T{1};
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.has_grad) continue;
      if (n.backward) {
        n.backward(*this, i);
      } else if (n.param) {
        auto& pg = n.param->grad.storage();
        const auto& g = n.grad.storage();
        for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
      }
    }
    // Parameter contributions were pushed; reset node buffers so a repeated
    // backward does not push them twice.
    for (Node& n : nodes_) {
      if (n.param && n.has_grad) n.grad.fill(T{0});
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      if (n.has_grad) n.grad.fill(T{0});
    }
  }

 private:
  Var<T> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<T>{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace thermonet::ad
