#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fairehr/error.hpp"

namespace fairehr::ad {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar> class Tape;

/// Handle to one node on a Tape. Cheap to copy; only valid while the tape
/// that produced it is alive.
template <typename Scalar> class Var {
public:
  using MatrixType = Matrix<Scalar>;

  Var() = default;
  Var(Tape<Scalar> *tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar> &tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const MatrixType &value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  /// Value of a 1x1 node.
  Scalar item() const {
    require(rows() == 1 && cols() == 1, ErrorKind::kContract,
            "item() called on a non-scalar tensor");
    return value()(0, 0);
  }

private:
  Tape<Scalar> *tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted; backward() sweeps it in reverse.
///
/// A tape belongs to one thread of execution.
template <typename Scalar> class Tape {
public:
  using MatrixType = Matrix<Scalar>;
  using VarType = Var<Scalar>;
  /// Receives the gradient flowing into the node and pushes contributions to
  /// the node's inputs via accumulate().
  using BackwardFn = std::function<void(Tape &, const MatrixType &)>;

  Tape() = default;
  Tape(const Tape &) = delete;
  Tape &operator=(const Tape &) = delete;

  VarType leaf(MatrixType value, bool requires_grad = false) {
    check_finite(value, "leaf");
    nodes_.push_back(Node{std::move(value), requires_grad, {}, {}, "leaf"});
    return VarType(this, nodes_.size() - 1);
  }

  VarType constant(MatrixType value) { return leaf(std::move(value), false); }

  VarType scalar(Scalar value, bool requires_grad = false) {
    MatrixType m(1, 1);
    m(0, 0) = value;
    return leaf(std::move(m), requires_grad);
  }

  /// Appends an operation node. The node requires a gradient iff any input
  /// does; if none does, the backward function is dropped.
  VarType record(MatrixType value, std::vector<std::size_t> inputs,
                 BackwardFn backward, const char *op) {
    check_finite(value, op);
    bool needs_grad = false;
    for (const std::size_t input : inputs) {
      needs_grad = needs_grad || nodes_[input].requires_grad;
    }
    if (!needs_grad) {
      backward = nullptr;
    }
    nodes_.push_back(Node{std::move(value), needs_grad, std::move(inputs),
                          std::move(backward), op});
    return VarType(this, nodes_.size() - 1);
  }

  const MatrixType &value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t> &inputs(std::size_t id) const {
    return nodes_[id].inputs;
  }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `contribution` to the gradient of node `id`; no-op for nodes that
  /// do not require a gradient.
  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived> &contribution) {
    if (!nodes_[id].requires_grad) {
      return;
    }
    MatrixType &g = grads_[id];
    if (g.size() == 0) {
      g = contribution;
    } else {
      g += contribution;
    }
  }

  /// Reverse sweep from a 1x1 loss. Gradients of earlier sweeps are cleared.
  void backward(const VarType &loss) {
    require(loss.valid() && &loss.tape() == this, ErrorKind::kContract,
            "backward: loss does not belong to this tape");
    const MatrixType &lv = value(loss.id());
    require(lv.rows() == 1 && lv.cols() == 1, ErrorKind::kContract,
            "backward: loss must be a scalar, got " + std::to_string(lv.rows()) +
                "x" + std::to_string(lv.cols()));
    grads_.assign(nodes_.size(), MatrixType());
    if (!nodes_[loss.id()].requires_grad) {
      return;
    }
    grads_[loss.id()] = MatrixType::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node &node = nodes_[i];
      if (!node.backward || grads_[i].size() == 0) {
        continue;
      }
      node.backward(*this, grads_[i]);
    }
  }

  bool has_grad(const VarType &v) const {
    return v.id() < grads_.size() && grads_[v.id()].size() != 0;
  }

  /// Gradient of the last backward() loss with respect to `v`. Nodes that
  /// require a gradient but were unreachable get zeros.
  MatrixType grad(const VarType &v) const {
    require(requires_grad(v.id()), ErrorKind::kContract,
            "grad: tensor does not require a gradient");
    if (has_grad(v)) {
      return grads_[v.id()];
    }
    return MatrixType::Zero(v.rows(), v.cols());
  }

private:
  struct Node {
    MatrixType value;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const char *op = "";
  };

  static void check_finite(const MatrixType &value, const char *op) {
    if (!value.allFinite()) {
      fail(ErrorKind::kDomain, std::string("non-finite value produced by ") + op);
    }
  }

  std::vector<Node> nodes_;
  std::vector<MatrixType> grads_;
};

} // namespace fairehr::ad
