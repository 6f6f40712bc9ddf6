#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "epi/error.h"
#include "epi/nn/tensor.h"

namespace epi::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

// Named parameters in creation order; addresses are stable.
template <typename T>
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;
  ParameterSet(const ParameterSet& o) { *this = o; }
  ParameterSet& operator=(const ParameterSet& o) {
    if (this == &o) return *this;
    params_.clear();
    for (const auto& p : o.params_) params_.push_back(std::make_unique<Parameter<T>>(*p));
    return *this;
  }

  Parameter<T>& add(const std::string& name, std::vector<int> shape) {
    for (const auto& p : params_)
      require(p->name != name, ErrorKind::invalid_argument, "duplicate parameter name");
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = Tensor<T>(shape);
    p->grad = Tensor<T>(std::move(shape));
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  Parameter<T>& get(const std::string& name) {
    auto* p = find(name);
    if (!p) fail(ErrorKind::invalid_argument, "unknown parameter '" + name + "'");
    return *p;
  }

  void zero_grad() {
    for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), T(0));
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

struct Var {
  int id = -1;
};

// Reverse-mode tape. Nodes are recorded in execution order, so reverse
// creation order is a valid topological order for the backward sweep.
template <typename T>
class Graph {
 public:
  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Optional record of the branch taken by every non-smooth op (ReLU side,
  // max winner). Finite-difference checks compare these records to detect a
  // step that crosses a kink.
  void set_branch_log(std::vector<std::uint8_t>* log) { branch_log_ = log; }
  std::vector<std::uint8_t>* branch_log() const { return branch_log_; }

  Var input(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var param(Parameter<T>& p) {
    const int id = static_cast<int>(nodes_.size());
    Var v = push(p.value, grad_enabled_, nullptr);
    if (grad_enabled_) {
      nodes_.back().backward = [this, id, &p] {
        const auto& g = nodes_[static_cast<std::size_t>(id)].grad;
        for (std::size_t i = 0; i < g.size(); ++i) p.grad.data[i] += g.data[i];
      };
    }
    return v;
  }

  // Records an op result. `backward` reads the output gradient through
  // grad(out) and accumulates into its inputs.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs,
             std::function<void()> backward) {
    bool needs = false;
    if (grad_enabled_)
      for (Var v : inputs) needs = needs || requires_grad(v);
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Tensor<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  // Gradient buffer of v, allocated as zeros on first use.
  Tensor<T>& grad(Var v) {
    auto& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() != n.value.size()) n.grad = Tensor<T>(n.value.shape);
    return n.grad;
  }
  bool has_grad(Var v) const {
    const auto& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.grad.size() == n.value.size() && !n.value.data.empty();
  }

  void backward(Var out, const Tensor<T>& seed) {
    require(grad_enabled_, ErrorKind::invalid_argument, "backward on a graph without gradients");
    require(seed.size() == value(out).size(), ErrorKind::invalid_argument,
            "seed gradient does not match the output");
    auto& g = grad(out);
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += seed.data[i];
    for (int i = out.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.backward && n.grad.size() == n.value.size() && n.grad.size() > 0) n.backward();
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::function<void()> backward;
  };

  Var push(Tensor<T> value, bool needs_grad, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(value), {}, needs_grad, std::move(backward)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  bool grad_enabled_;
  std::vector<std::uint8_t>* branch_log_ = nullptr;
  std::deque<Node> nodes_;
};

}  // namespace epi::nn
