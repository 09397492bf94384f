#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "nde/error.hpp"
#include "nde/params.hpp"
#include "nde/tensor.hpp"

namespace nde {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode recording of matrix operations.
///
/// Every operation appends one node holding its output value and a local
/// backward rule. Backward sweeps nodes in strict reverse order, each once.
/// Values are checked for NaN/Inf as they are pushed.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  struct ParamLeaf {
    std::size_t node;
    ParameterStore* store;
    std::size_t index;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var push(std::string_view op, Matrix value, BackwardFn backward = {}) {
    if (!value.allFinite()) throw NumericalError("non-finite output from operation '" + std::string(op) + "'");
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Matrix value) { return push("constant", std::move(value)); }
  Var constant(const Tensor& t) { return push("constant", Matrix(t.matrix())); }

  /// Leaf bound to a store entry. Repeated requests on the same tape return the same node.
  Var param(ParameterStore& store, const std::string& name) {
    const std::size_t index = store.index(name);
    const std::string key = param_key(store, index);
    if (auto it = memo_.find(key); it != memo_.end()) return Var{this, it->second};
    Var v = push("param:" + name, Matrix(store.at(index).value.matrix()));
    leaves_.push_back(ParamLeaf{v.id, &store, index});
    memo_.emplace(key, v.id);
    return v;
  }

  /// Cache a derived value under `key` for the lifetime of its node.
  template <typename Build>
  Var memo(const std::string& key, Build&& build) {
    if (auto it = memo_.find(key); it != memo_.end()) return Var{this, it->second};
    Var v = build();
    memo_.emplace(key, v.id);
    return v;
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& value(Var v) const { return value(v.id); }

  bool has_grad(std::size_t id) const { return nodes_.at(id).grad.size() != 0; }
  const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
  const Matrix& grad(Var v) const { return grad(v.id); }

  /// Gradient accumulator of a node, allocated as zeros on first use.
  Matrix& grad_acc(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Drop every node recorded at or after `mark`.
  void truncate(std::size_t mark) {
    if (mark >= nodes_.size()) return;
    nodes_.resize(mark);
    std::erase_if(leaves_, [mark](const ParamLeaf& l) { return l.node >= mark; });
    std::erase_if(memo_, [mark](const auto& kv) { return kv.second >= mark; });
  }

  void clear() { truncate(0); }

  void clear_grads() {
    for (auto& n : nodes_) n.grad.resize(0, 0);
  }

  /// Seed `out` with `seed` and propagate to every earlier node. Parameter
  /// gradients stay on the tape; see param_leaves().
  void backward_from(Var out, const Matrix& seed) {
    check_own(out);
    if (seed.rows() != value(out).rows() || seed.cols() != value(out).cols())
      throw InvalidArgument("backward seed shape does not match output shape");
    clear_grads();
    grad_acc(out.id) = seed;
    sweep(out.id);
  }

  /// Reverse-mode pass from a scalar loss. Zeroes the gradient accumulators of
  /// `params` and fills them with d(loss)/d(param).
  void backward(Var loss, ParameterStore& params) {
    check_own(loss);
    const Matrix& v = value(loss);
    if (v.rows() != 1 || v.cols() != 1)
      throw InvalidArgument("backward requires a scalar loss, got " + std::to_string(v.rows()) + "x" +
                            std::to_string(v.cols()));
    if (loss.id + 1 != nodes_.size()) throw InvalidArgument("backward requires the loss to be the final tape node");
    backward_from(loss, Matrix::Ones(1, 1));
    params.zero_grad();
    accumulate_param_grads(params);
  }

  /// Add the gradients held by parameter leaves of `params` to its accumulators.
  void accumulate_param_grads(ParameterStore& params) const {
    for (const auto& leaf : leaves_) {
      if (leaf.store != &params || !has_grad(leaf.node)) continue;
      auto& g = params.at(leaf.index).grad;
      g.matrix() += grad(leaf.node);
      require_finite(g, "gradient of '" + params.at(leaf.index).name + "'");
    }
  }

  const std::vector<ParamLeaf>& param_leaves() const { return leaves_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
  };

  static std::string param_key(const ParameterStore& store, std::size_t index) {
    return "param:" + std::to_string(reinterpret_cast<std::uintptr_t>(&store)) + ":" + std::to_string(index);
  }

  void check_own(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw InvalidArgument("variable does not belong to this tape");
  }

  void sweep(std::size_t last) {
    for (std::size_t i = last + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, i);
    }
  }

  std::deque<Node> nodes_;  // stable references across push_back
  std::vector<ParamLeaf> leaves_;
  std::unordered_map<std::string, std::size_t> memo_;
};

inline const Matrix& Var::value() const { return tape->value(id); }

}  // namespace nde
