#pragma once

#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dbias/common.hpp"

namespace dbias {

/// A trainable tensor. Gradients live on the Tape that consumed it, so model
/// structs stay plain values that can be copied and compared.
struct Parameter {
  Matrix value;

  Parameter() = default;
  explicit Parameter(Matrix v) : value(std::move(v)) {}
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode automatic differentiation over dense matrices.
///
/// Nodes are appended in evaluation order, so the reverse of insertion order
/// is a valid topological order for the backward pass. A tape constructed
/// with `record = false` keeps values only and is used for inference.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& grad, const Matrix& out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter& p);

  /// Records a node. `parents` decide whether the node needs a gradient;
  /// `backward` receives the node's accumulated output gradient and value.
  Var make(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);
  Var make(Matrix value, std::span<const Var> parents, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }

  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);
  template <typename Expr>
  void accumulate_block(Var v, Index row, Index col, const Expr& g) {
    Node& n = nodes_[v.id_];
    if (!n.needs_grad) return;
    ensure_grad(n);
    n.grad.block(row, col, g.rows(), g.cols()) += g;
  }

  /// Runs the backward pass from a 1x1 root with seed gradient `seed`.
  void backward(Var root, double seed = 1.0);

  /// Gradient w.r.t. a parameter after backward(); zero matrix if unused.
  Matrix grad(const Parameter& p) const;
  bool used(const Parameter& p) const { return param_nodes_.contains(&p); }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool needs_grad = false;
  };

  static void ensure_grad(Node& n) {
    if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  }

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

// ---------------------------------------------------------------------------
// Differentiable operations. Shapes follow the row-major "rows are items"
// convention: a sequence of T vectors of width D is a [T x D] matrix.

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a [1 x C] row to every row of `a`.
Var add_row(Var a, Var row);
/// Adds a [R x 1] column to every column of `a`.
Var add_col(Var a, Var col);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(Var a, Var b);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Index start, Index count);
Var slice_cols(Var a, Index start, Index count);
Var transpose(Var a);
/// Row lookup, e.g. embeddings. Indices may repeat.
Var gather_rows(Var table, std::span<const int> indices);
Var softmax_rows(Var a);
/// Softmax where entries with mask(i,j) == false get exactly zero weight.
/// Every row must keep at least one entry.
Var masked_softmax_rows(Var a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask);
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);
Var sum(Var a);
/// Negative log-likelihood: -sum_i logp(i, targets[i]).
Var nll(Var logp, std::span<const int> targets);
/// Row-wise select: row i from `a` when take_a[i], otherwise from `b`.
Var select_rows(const std::vector<bool>& take_a, Var a, Var b);
/// Every (t, u) pairing: row t*U + u is a.row(t) + b.row(u).
Var outer_sum_rows(Var a, Var b);

}  // namespace dbias
