#pragma once

// Minimal tape-based reverse-mode autodiff over dense row-major matrices.
//
// A Tape owns every node created during one forward pass. Tensor is a cheap
// handle (tape pointer + node id). Ops are free functions that read their
// inputs' values, record the output value, and register a backward rule that
// accumulates into the inputs' gradient buffers. Tape::backward() replays the
// rules in reverse recording order, so each node is visited exactly once.
//
// Everything is templated on the scalar type: training runs on float, the
// gradient checks and oracles on double.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "cyclecl/errors.hpp"

namespace cyclecl {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

template <typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

template <typename Scalar>
class Tape;

template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  Tensor() = default;
  Tensor(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(id_); }
  const Matrix<Scalar>& grad() const { return tape_->grad(id_); }
  bool has_grad() const { return tape_->has_grad(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

  // Convenience for 1x1 results.
  Scalar item() const {
    if (value().size() != 1) {
      throw DimensionError("item() on non-scalar tensor " + shape_string(value()));
    }
    return value()(0, 0);
  }

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Scalar>
class Tape {
 public:
  using MatrixType = Matrix<Scalar>;
  using BackwardRule = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor<Scalar> leaf(MatrixType value, bool requires_grad = true) {
    nodes_.push_back(Node{std::move(value), MatrixType(), requires_grad, false, {}});
    return Tensor<Scalar>(this, nodes_.size() - 1);
  }

  Tensor<Scalar> constant(MatrixType value) { return leaf(std::move(value), false); }

  // Records an op output. The node requires a gradient iff any input does;
  // the backward rule is dropped otherwise.
  Tensor<Scalar> record(MatrixType value, std::initializer_list<std::size_t> inputs,
                        BackwardRule rule) {
    bool needs = false;
    for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
    nodes_.push_back(
        Node{std::move(value), MatrixType(), needs, false, needs ? std::move(rule) : BackwardRule{}});
    return Tensor<Scalar>(this, nodes_.size() - 1);
  }

  Tensor<Scalar> record(MatrixType value, const std::vector<std::size_t>& inputs,
                        BackwardRule rule) {
    bool needs = false;
    for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
    nodes_.push_back(
        Node{std::move(value), MatrixType(), needs, false, needs ? std::move(rule) : BackwardRule{}});
    return Tensor<Scalar>(this, nodes_.size() - 1);
  }

  // Seeds d(root)/d(root) = 1 and propagates. Every node that requires a
  // gradient ends up with a fully-sized (possibly zero) gradient buffer.
  void backward(const Tensor<Scalar>& root) {
    if (root.value().size() != 1) {
      throw DimensionError("backward() needs a scalar root, got " + shape_string(root.value()));
    }
    for (auto& n : nodes_) {
      if (n.requires_grad) {
        n.grad = MatrixType::Zero(n.value.rows(), n.value.cols());
        n.has_grad = true;
      } else {
        n.grad.resize(0, 0);
        n.has_grad = false;
      }
    }
    auto& r = nodes_[root.id()];
    if (!r.requires_grad) return;
    r.grad.setOnes();
    for (std::size_t i = root.id() + 1; i-- > 0;) {
      if (nodes_[i].rule) nodes_[i].rule(*this, i);
    }
  }

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

  const MatrixType& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].has_grad; }

  const MatrixType& grad(std::size_t id) const {
    if (!nodes_[id].has_grad) {
      throw ParameterError("tensor has no gradient (requires_grad off or backward() not run)");
    }
    return nodes_[id].grad;
  }

  // Backward-rule helpers. Accumulation is a no-op for nodes that do not
  // require a gradient.
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& delta) {
    auto& n = nodes_[id];
    if (!n.requires_grad) return;
    if constexpr (std::is_base_of_v<Eigen::MatrixBase<Expr>, Expr>) {
      n.grad += delta;
    } else {
      n.grad.array() += delta;
    }
  }

  bool wants_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    MatrixType value;
    MatrixType grad;
    bool requires_grad;
    bool has_grad;
    BackwardRule rule;
  };

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.value()) +
                         " vs " + shape_string(b.value()));
  }
  auto& tape = a.tape();
  Matrix<Scalar> out = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.wants_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.wants_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <typename Scalar>
Tensor<Scalar> transpose(const Tensor<Scalar>& a) {
  auto& tape = a.tape();
  Matrix<Scalar> out = a.value().transpose();
  const auto ia = a.id();
  return tape.record(std::move(out), {ia}, [ia](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self).transpose());
  });
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("add: shape mismatch, " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
  auto& tape = a.tape();
  Matrix<Scalar> out = a.value() + b.value();
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

// x (n x c) + bias (1 x c) broadcast over rows.
template <typename Scalar>
Tensor<Scalar> add_row(const Tensor<Scalar>& x, const Tensor<Scalar>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_row: bias " + shape_string(bias.value()) + " does not fit " +
                         shape_string(x.value()));
  }
  auto& tape = x.tape();
  Matrix<Scalar> out = x.value().rowwise() + bias.value().row(0);
  const auto ix = x.id(), ib = bias.id();
  return tape.record(std::move(out), {ix, ib}, [ix, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    t.accumulate(ix, g);
    if (t.wants_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

// Adds a fixed matrix. Used for additive -inf masks ahead of a softmax.
template <typename Scalar>
Tensor<Scalar> add_constant(const Tensor<Scalar>& x, const Matrix<Scalar>& c) {
  if (c.rows() != x.rows() || c.cols() != x.cols()) {
    throw DimensionError("add_constant: shape mismatch, " + shape_string(x.value()) + " vs " +
                         shape_string(c));
  }
  auto& tape = x.tape();
  Matrix<Scalar> out = x.value() + c;
  const auto ix = x.id();
  return tape.record(std::move(out), {ix}, [ix](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ix, t.grad(self));
  });
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, std::type_identity_t<Scalar> s) {
  auto& tape = x.tape();
  Matrix<Scalar> out = x.value() * s;
  const auto ix = x.id();
  return tape.record(std::move(out), {ix}, [ix, s](Tape<Scalar>& t, std::size_t self) {
    t.accumulate(ix, t.grad(self) * s);
  });
}

// Elementwise product.
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("mul: shape mismatch, " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
  auto& tape = a.tape();
  Matrix<Scalar> out = a.value().cwiseProduct(b.value());
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    if (t.wants_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.wants_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  auto& tape = x.tape();
  Matrix<Scalar> out = x.value().cwiseMax(Scalar(0));
  const auto ix = x.id();
  return tape.record(std::move(out), {ix}, [ix](Tape<Scalar>& t, std::size_t self) {
    const auto& in = t.value(ix);
    t.accumulate(ix, (in.array() > Scalar(0)).select(t.grad(self).array(), Scalar(0)));
  });
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  auto& tape = x.tape();
  Matrix<Scalar> out(1, 1);
  out(0, 0) = x.value().sum();
  const auto ix = x.id();
  return tape.record(std::move(out), {ix}, [ix](Tape<Scalar>& t, std::size_t self) {
    const auto& in = t.value(ix);
    t.accumulate(ix, Matrix<Scalar>::Constant(in.rows(), in.cols(), t.grad(self)(0, 0)));
  });
}

// Row-wise dot product: (n x d, n x d) -> n x 1.
template <typename Scalar>
Tensor<Scalar> row_dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("row_dot: shape mismatch, " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
  auto& tape = a.tape();
  Matrix<Scalar> out = a.value().cwiseProduct(b.value()).rowwise().sum();
  const auto ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);  // n x 1
    if (t.wants_grad(ia)) t.accumulate(ia, t.value(ib).array().colwise() * g.col(0).array());
    if (t.wants_grad(ib)) t.accumulate(ib, t.value(ia).array().colwise() * g.col(0).array());
  });
}

// Horizontal concatenation of tensors with equal row counts.
template <typename Scalar>
Tensor<Scalar> concat_cols(std::span<const Tensor<Scalar>> parts) {
  if (parts.empty()) throw ParameterError("concat_cols: no inputs");
  const auto rows = parts[0].rows();
  Eigen::Index cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> offsets;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row mismatch, " + shape_string(parts[0].value()) +
                           " vs " + shape_string(p.value()));
    }
    ids.push_back(p.id());
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleCols(offsets[i], parts[i].cols()) = parts[i].value();
  }
  auto& tape = parts[0].tape();
  return tape.record(std::move(out), ids, [ids, offsets](Tape<Scalar>& t, std::size_t self) {
    const auto& g = t.grad(self);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (t.wants_grad(ids[i])) {
        t.accumulate(ids[i], g.middleCols(offsets[i], t.value(ids[i]).cols()));
      }
    }
  });
}

template <typename Scalar>
Tensor<Scalar> concat_cols(std::initializer_list<Tensor<Scalar>> parts) {
  return concat_cols(std::span<const Tensor<Scalar>>(parts.begin(), parts.size()));
}

inline constexpr double kNormEpsilon = 1e-12;

// Scales every row to unit Euclidean norm, so dot products of outputs are
// cosine similarities.
template <typename Scalar>
Tensor<Scalar> l2_normalize(const Tensor<Scalar>& v) {
  const auto& in = v.value();
  Vector<Scalar> norms = in.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > Scalar(kNormEpsilon))) {
      throw NumericError("l2_normalize: row " + std::to_string(r) +
                         " has degenerate norm " + std::to_string(double(norms(r))));
    }
  }
  Matrix<Scalar> out = in.array().colwise() / norms.array();
  auto& tape = v.tape();
  const auto iv = v.id();
  return tape.record(std::move(out), {iv},
                     [iv, norms = std::move(norms)](Tape<Scalar>& t, std::size_t self) {
                       const auto& y = t.value(self);
                       const auto& g = t.grad(self);
                       Vector<Scalar> gy = g.cwiseProduct(y).rowwise().sum();
                       Matrix<Scalar> gx = g - (y.array().colwise() * gy.array()).matrix();
                       t.accumulate(iv, gx.array().colwise() / norms.array());
                     });
}

namespace detail {

// Row-wise softmax of z with max subtraction. Rows may contain -inf entries
// as long as at least one entry is finite.
template <typename Derived>
Matrix<typename Derived::Scalar> stable_softmax_rows(const Eigen::MatrixBase<Derived>& z) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> p(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const Scalar m = z.row(r).maxCoeff();
    p.row(r) = (z.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x,
                            std::type_identity_t<Scalar> temperature) {
  if (!(temperature > Scalar(0))) {
    throw ParameterError("softmax_rows: temperature must be positive, got " +
                         std::to_string(double(temperature)));
  }
  Matrix<Scalar> out = detail::stable_softmax_rows(x.value() / temperature);
  auto& tape = x.tape();
  const auto ix = x.id();
  return tape.record(std::move(out), {ix}, [ix, temperature](Tape<Scalar>& t, std::size_t self) {
    const auto& p = t.value(self);
    const auto& g = t.grad(self);
    Vector<Scalar> gp = g.cwiseProduct(p).rowwise().sum();
    Matrix<Scalar> gz = p.cwiseProduct((g.colwise() - gp).eval());
    t.accumulate(ix, gz / temperature);
  });
}

// Mean over rows of -log softmax(logits / temperature)[target].
template <typename Scalar>
Tensor<Scalar> cross_entropy_from_logits(const Tensor<Scalar>& logits,
                                         std::span<const int> targets,
                                         std::type_identity_t<Scalar> temperature) {
  if (!(temperature > Scalar(0))) {
    throw ParameterError("cross_entropy_from_logits: temperature must be positive");
  }
  const auto& l = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != l.rows()) {
    throw DimensionError("cross_entropy_from_logits: " + std::to_string(targets.size()) +
                         " targets for logits " + shape_string(l));
  }
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] < 0 || targets[r] >= l.cols()) {
      throw ParameterError("cross_entropy_from_logits: target " + std::to_string(targets[r]) +
                           " out of range for row " + std::to_string(r) + " with " +
                           std::to_string(l.cols()) + " classes");
    }
  }
  const Eigen::Index n = l.rows();
  Matrix<Scalar> out(1, 1);
  Scalar total = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto z = (l.row(r) / temperature).eval();
    const Scalar m = z.maxCoeff();
    const Scalar lse = m + std::log((z.array() - m).exp().sum());
    total += lse - z(targets[r]);
  }
  out(0, 0) = n > 0 ? total / Scalar(n) : Scalar(0);
  std::vector<int> tgt(targets.begin(), targets.end());
  auto& tape = logits.tape();
  const auto il = logits.id();
  return tape.record(std::move(out), {il},
                     [il, temperature, tgt = std::move(tgt)](Tape<Scalar>& t, std::size_t self) {
                       const auto& lv = t.value(il);
                       const Eigen::Index rows = lv.rows();
                       if (rows == 0) return;
                       Matrix<Scalar> p = detail::stable_softmax_rows(lv / temperature);
                       for (Eigen::Index r = 0; r < rows; ++r) p(r, tgt[r]) -= Scalar(1);
                       const Scalar g = t.grad(self)(0, 0);
                       t.accumulate(il, p * (g / (temperature * Scalar(rows))));
                     });
}

template <typename Scalar>
Tensor<Scalar> cross_entropy_from_logits(const Tensor<Scalar>& logits,
                                         const std::vector<int>& targets,
                                         std::type_identity_t<Scalar> temperature) {
  return cross_entropy_from_logits(logits, std::span<const int>(targets), temperature);
}

}  // namespace cyclecl
