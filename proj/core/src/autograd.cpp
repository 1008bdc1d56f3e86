#include "dbias/autograd.hpp"

#include <cmath>

namespace dbias {

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(const Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.value, {}, nullptr, record_});
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::make(Matrix value, std::initializer_list<Var> parents, BackwardFn backward) {
  return make(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backward));
}

Var Tape::make(Matrix value, std::span<const Var> parents, BackwardFn backward) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) needs = needs || nodes_[p.id_].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : nullptr, needs});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id_];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var root, double seed) {
  if (!record_) throw ConfigError("backward() on a non-recording tape");
  if (root.rows() != 1 || root.cols() != 1) throw ConfigError("backward() root must be 1x1");
  Node& r = nodes_[root.id_];
  if (!r.needs_grad) return;
  ensure_grad(r);
  r.grad(0, 0) += seed;
  for (int id = root.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.backward && n.grad.size() != 0) {
      n.backward(*this, n.grad, n.value);
    }
  }
}

Matrix Tape::grad(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end() || nodes_[it->second].grad.size() == 0) {
    return Matrix::Zero(p.value.rows(), p.value.cols());
  }
  return nodes_[it->second].grad;
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ConfigError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                      std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()));
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw ConfigError("matmul: inner dimension mismatch");
  Tape& t = a.tape();
  Matrix out = a.value() * b.value();
  return t.make(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * b.value().transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw ConfigError("matmul_nt: inner dimension mismatch");
  Tape& t = a.tape();
  Matrix out = a.value() * b.value().transpose();
  return t.make(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.needs_grad(a)) tp.accumulate(a, g * b.value());
    if (tp.needs_grad(b)) tp.accumulate(b, g.transpose() * a.value());
  });
}

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Matrix out = a.value() + b.value();
  return a.tape().make(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Matrix out = a.value() - b.value();
  return a.tape().make(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    if (tp.needs_grad(b)) tp.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().make(std::move(out), {a, b}, [a, b](Tape& tp, const Matrix& g, const Matrix&) {
    if (tp.needs_grad(a)) tp.accumulate(a, g.cwiseProduct(b.value()));
    if (tp.needs_grad(b)) tp.accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value() * s;
  return a.tape().make(std::move(out), {a}, [a, s](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g * s);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ConfigError("add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().make(std::move(out), {a, row}, [a, row](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    if (tp.needs_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

Var add_col(Var a, Var col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw ConfigError("add_col: shape mismatch");
  Matrix out = a.value().colwise() + col.value().col(0);
  return a.tape().make(std::move(out), {a, col}, [a, col](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g);
    if (tp.needs_grad(col)) tp.accumulate(col, g.rowwise().sum());
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.tape().make(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix& y) {
    tp.accumulate(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape().make(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix& y) {
    const auto s = y.array();
    tp.accumulate(a, (g.array() * s * (1.0 - s)).matrix());
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().make(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, (a.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_cols: no inputs");
  const Index rows = parts[0].rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ConfigError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().make(std::move(out), parts, [keep](Tape& tp, const Matrix& g, const Matrix&) {
    Index c = 0;
    for (const Var& p : keep) {
      if (tp.needs_grad(p)) tp.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

Var concat_cols(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat_cols(std::span<const Var>(parts));
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ConfigError("concat_rows: no inputs");
  const Index cols = parts[0].cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ConfigError("concat_rows: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return parts[0].tape().make(std::move(out), parts, [keep](Tape& tp, const Matrix& g, const Matrix&) {
    Index r = 0;
    for (const Var& p : keep) {
      if (tp.needs_grad(p)) tp.accumulate(p, g.middleRows(r, p.rows()));
      r += p.rows();
    }
  });
}

Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ConfigError("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return a.tape().make(std::move(out), {a}, [a, start](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_block(a, start, 0, g);
  });
}

Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ConfigError("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return a.tape().make(std::move(out), {a}, [a, start](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate_block(a, 0, start, g);
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape().make(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, g.transpose());
  });
}

Var gather_rows(Var table, std::span<const int> indices) {
  Matrix out(static_cast<Index>(indices.size()), table.cols());
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= table.rows()) throw InputError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = table.value().row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return table.tape().make(std::move(out), {table}, [table, idx](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix acc = Matrix::Zero(table.rows(), table.cols());
    for (size_t i = 0; i < idx.size(); ++i) acc.row(idx[i]) += g.row(static_cast<Index>(i));
    tp.accumulate(table, acc);
  });
}

namespace {

Matrix softmax_value(const Matrix& a) {
  Matrix out(a.rows(), a.cols());
  for (Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    out.row(i) = (a.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

Tape::BackwardFn softmax_backward(Var a) {
  return [a](Tape& tp, const Matrix& g, const Matrix& s) {
    Matrix ga(s.rows(), s.cols());
    for (Index i = 0; i < s.rows(); ++i) {
      const double dot = g.row(i).dot(s.row(i));
      ga.row(i) = s.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    tp.accumulate(a, ga);
  };
}

}  // namespace

Var softmax_rows(Var a) {
  return a.tape().make(softmax_value(a.value()), {a}, softmax_backward(a));
}

Var masked_softmax_rows(Var a, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) throw ConfigError("masked_softmax_rows: mask shape");
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    double m = kNegInf;
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask(i, j)) m = std::max(m, x(i, j));
    }
    if (m == kNegInf) throw InputError("masked_softmax_rows: fully masked row");
    double z = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (mask(i, j)) {
        out(i, j) = std::exp(x(i, j) - m);
        z += out(i, j);
      }
    }
    out.row(i) /= z;
  }
  // Masked entries have s = 0, so the plain softmax Jacobian already zeroes them.
  return a.tape().make(std::move(out), {a}, softmax_backward(a));
}

Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = (x.row(i).array() - lse).matrix();
  }
  return a.tape().make(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix& lp) {
    Matrix ga(lp.rows(), lp.cols());
    for (Index i = 0; i < lp.rows(); ++i) {
      const double gs = g.row(i).sum();
      ga.row(i) = g.row(i) - (lp.row(i).array().exp() * gs).matrix();
    }
    tp.accumulate(a, ga);
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Matrix& v = x.value();
  const Index n = v.cols();
  if (gain.cols() != n || bias.cols() != n) throw ConfigError("layer_norm_rows: width mismatch");
  Matrix xhat(v.rows(), n);
  Eigen::VectorXd inv_std(v.rows());
  for (Index i = 0; i < v.rows(); ++i) {
    const double mean = v.row(i).mean();
    const double var = (v.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = ((v.row(i).array() - mean) * inv_std(i)).matrix();
  }
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return x.tape().make(std::move(out), {x, gain, bias},
                       [x, gain, bias, xhat, inv_std](Tape& tp, const Matrix& g, const Matrix&) {
    const Index n = xhat.cols();
    if (tp.needs_grad(gain)) tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    if (tp.needs_grad(bias)) tp.accumulate(bias, g.colwise().sum());
    if (!tp.needs_grad(x)) return;
    Matrix gx(xhat.rows(), n);
    for (Index i = 0; i < xhat.rows(); ++i) {
      const RowVector gh = g.row(i).cwiseProduct(gain.value().row(0));
      const double mean_gh = gh.mean();
      const double mean_gh_xhat = gh.dot(xhat.row(i)) / static_cast<double>(n);
      gx.row(i) = inv_std(i) * (gh.array() - mean_gh - xhat.row(i).array() * mean_gh_xhat).matrix();
    }
    tp.accumulate(x, gx);
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().make(std::move(out), {a}, [a](Tape& tp, const Matrix& g, const Matrix&) {
    tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var nll(Var logp, std::span<const int> targets) {
  if (static_cast<Index>(targets.size()) != logp.rows()) throw ConfigError("nll: target count mismatch");
  Matrix out(1, 1);
  double s = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || targets[i] >= logp.cols()) throw InputError("nll: target out of range");
    s -= logp.value()(static_cast<Index>(i), targets[i]);
  }
  out(0, 0) = s;
  std::vector<int> tg(targets.begin(), targets.end());
  return logp.tape().make(std::move(out), {logp}, [logp, tg](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix gl = Matrix::Zero(logp.rows(), logp.cols());
    for (size_t i = 0; i < tg.size(); ++i) gl(static_cast<Index>(i), tg[i]) = -g(0, 0);
    tp.accumulate(logp, gl);
  });
}

Var select_rows(const std::vector<bool>& take_a, Var a, Var b) {
  check_same_shape(a, b, "select_rows");
  if (static_cast<Index>(take_a.size()) != a.rows()) throw ConfigError("select_rows: mask size");
  Matrix out = b.value();
  for (Index i = 0; i < a.rows(); ++i) {
    if (take_a[i]) out.row(i) = a.value().row(i);
  }
  return a.tape().make(std::move(out), {a, b}, [take_a, a, b](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix ga = g, gb = g;
    for (Index i = 0; i < g.rows(); ++i) {
      if (take_a[i]) gb.row(i).setZero(); else ga.row(i).setZero();
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

Var outer_sum_rows(Var a, Var b) {
  if (a.cols() != b.cols()) throw ConfigError("outer_sum_rows: width mismatch");
  const Index T = a.rows(), U = b.rows();
  Matrix out(T * U, a.cols());
  for (Index t = 0; t < T; ++t) {
    for (Index u = 0; u < U; ++u) out.row(t * U + u) = a.value().row(t) + b.value().row(u);
  }
  return a.tape().make(std::move(out), {a, b}, [a, b, T, U](Tape& tp, const Matrix& g, const Matrix&) {
    Matrix ga = Matrix::Zero(T, g.cols());
    Matrix gb = Matrix::Zero(U, g.cols());
    for (Index t = 0; t < T; ++t) {
      for (Index u = 0; u < U; ++u) {
        ga.row(t) += g.row(t * U + u);
        gb.row(u) += g.row(t * U + u);
      }
    }
    tp.accumulate(a, ga);
    tp.accumulate(b, gb);
  });
}

}  // namespace dbias
