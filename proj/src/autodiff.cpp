#include "puat/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace puat {

const Matrix& Var::value() const { return tape->value(id); }

Scalar Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::logic_error("Var::scalar on non-scalar node");
  return v(0, 0);
}

bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(const Parameter& p) {
  auto it = params_.find(&p);
  if (it != params_.end()) return Var{this, it->second};
  nodes_.push_back(Node{p.value, Matrix(), tracked(p.role), nullptr});
  params_.emplace(&p, nodes_.size() - 1);
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad,
                        requires_grad ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& root) {
  if (root.tape != this) throw std::logic_error("backward: root belongs to another tape");
  if (nodes_[root.id].value.size() != 1) throw std::logic_error("backward: root must be a 1x1 scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[root.id].requires_grad) return;
  nodes_[root.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // Parents always have smaller ids, so n.grad is final here.
    n.backward(*this, n.grad);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(const Parameter& p) const {
  auto it = params_.find(&p);
  if (it == params_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
  return grad(Var{const_cast<Tape*>(this), it->second});
}

namespace ad {
namespace {

void check_same_tape(const Var& a, const Var& b) {
  if (a.tape != b.tape) throw std::logic_error("operands belong to different tapes");
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

bool any_grad(const Var& a) { return a.requires_grad(); }
bool any_grad(const Var& a, const Var& b) { return a.requires_grad() || b.requires_grad(); }

}  // namespace

Var detach(const Var& a) { return a.tape->constant(a.value()); }

Var matmul(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "add");
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(a.value() + b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "sub");
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->record(a.value() - b.value(), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, -g);
  });
}

Var hadamard(const Var& a, const Var& b) {
  check_same_tape(a, b);
  check_same_shape(a, b, "hadamard");
  const std::size_t ia = a.id, ib = b.id;
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

Var add_row(const Var& a, const Var& row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: shape mismatch");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id, ir = row.id;
  return a.tape->record(std::move(out), any_grad(a, row), [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    if (t.requires_grad(ir)) t.accumulate(ir, g.colwise().sum());
  });
}

Var scale_rows(const Var& a, const Var& col) {
  check_same_tape(a, col);
  if (col.cols() != 1 || col.rows() != a.rows()) throw std::invalid_argument("scale_rows: shape mismatch");
  Matrix out = a.value().array().colwise() * col.value().col(0).array();
  const std::size_t ia = a.id, ic = col.id;
  return a.tape->record(std::move(out), any_grad(a, col), [ia, ic](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) {
      Matrix ga = g.array().colwise() * t.value(ic).col(0).array();
      t.accumulate(ia, ga);
    }
    if (t.requires_grad(ic)) {
      Matrix gc = g.cwiseProduct(t.value(ia)).rowwise().sum();
      t.accumulate(ic, gc);
    }
  });
}

Var scale(const Var& a, Scalar s) {
  const std::size_t ia = a.id;
  return a.tape->record(a.value() * s, any_grad(a), [ia, s](Tape& t, const Matrix& g) { t.accumulate(ia, g * s); });
}

Var add_scalar(const Var& a, Scalar s) {
  const std::size_t ia = a.id;
  Matrix out = a.value().array() + s;
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) { t.accumulate(ia, g); });
}

Var scale_by(const Var& a, const Var& s) {
  check_same_tape(a, s);
  if (s.value().size() != 1) throw std::invalid_argument("scale_by: factor must be 1x1");
  const std::size_t ia = a.id, is = s.id;
  Matrix out = a.value() * s.scalar();
  return a.tape->record(std::move(out), any_grad(a, s), [ia, is](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(is)(0, 0));
    if (t.requires_grad(is)) t.accumulate(is, Matrix::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
  });
}

Var relu(const Var& a) {
  const std::size_t ia = a.id;
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Matrix ga = (t.value(ia).array() > 0.0).select(g, 0.0);
    t.accumulate(ia, ga);
  });
}

Var leaky_relu(const Var& a, Scalar slope) {
  const std::size_t ia = a.id;
  Matrix out = (a.value().array() > 0.0).select(a.value(), a.value() * slope);
  return a.tape->record(std::move(out), any_grad(a), [ia, slope](Tape& t, const Matrix& g) {
    Matrix ga = (t.value(ia).array() > 0.0).select(g, g * slope);
    t.accumulate(ia, ga);
  });
}

Var tanh(const Var& a) {
  const std::size_t ia = a.id;
  Matrix out = a.value().array().tanh();
  Matrix saved = out;
  return a.tape->record(std::move(out), any_grad(a), [ia, saved = std::move(saved)](Tape& t, const Matrix& g) {
    Matrix ga = g.array() * (1.0 - saved.array().square());
    t.accumulate(ia, ga);
  });
}

Var sigmoid(const Var& a) {
  const std::size_t ia = a.id;
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse();
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Eigen::ArrayXXd s = (1.0 + (-t.value(ia).array()).exp()).inverse();
    Matrix ga = g.array() * s * (1.0 - s);
    t.accumulate(ia, ga);
  });
}

Var softplus(const Var& a) {
  const std::size_t ia = a.id;
  // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
  Matrix out = a.value().unaryExpr([](Scalar x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Eigen::ArrayXXd s = (1.0 + (-t.value(ia).array()).exp()).inverse();
    Matrix ga = g.array() * s;
    t.accumulate(ia, ga);
  });
}

Var square(const Var& a) {
  const std::size_t ia = a.id;
  Matrix out = a.value().array().square();
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Matrix ga = 2.0 * g.array() * t.value(ia).array();
    t.accumulate(ia, ga);
  });
}

Var abs(const Var& a) {
  const std::size_t ia = a.id;
  Matrix out = a.value().cwiseAbs();
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Matrix ga = g.array() * t.value(ia).array().sign();
    t.accumulate(ia, ga);
  });
}

namespace {

Matrix softmax_value(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
  const std::size_t ia = a.id;
  Matrix p = softmax_value(a.value());
  Matrix saved = p;
  return a.tape->record(std::move(p), any_grad(a), [ia, saved = std::move(saved)](Tape& t, const Matrix& g) {
    // dL/dx = p * (g - <g, p>)
    Vector dots = g.cwiseProduct(saved).rowwise().sum();
    Matrix ga = saved.array() * (g.colwise() - dots).array();
    t.accumulate(ia, ga);
  });
}

Var log_softmax_rows(const Var& a) {
  const std::size_t ia = a.id;
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    const Scalar lse = m + std::log((x.row(i).array() - m).exp().sum());
    out.row(i) = x.row(i).array() - lse;
  }
  return a.tape->record(std::move(out), any_grad(a), [ia](Tape& t, const Matrix& g) {
    Matrix p = softmax_value(t.value(ia));
    Vector gs = g.rowwise().sum();
    Matrix ga = g - (p.array().colwise() * gs.array()).matrix();
    t.accumulate(ia, ga);
  });
}

Var sum(const Var& a) {
  const std::size_t ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape->record(Matrix::Constant(1, 1, a.value().sum()), any_grad(a), [ia, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean of empty matrix");
  return scale(sum(a), 1.0 / static_cast<Scalar>(a.value().size()));
}

Var row_sum(const Var& a) {
  const std::size_t ia = a.id;
  const Eigen::Index c = a.cols();
  Matrix out = a.value().rowwise().sum();
  return a.tape->record(std::move(out), any_grad(a), [ia, c](Tape& t, const Matrix& g) {
    Matrix ga = g.col(0).replicate(1, c);
    t.accumulate(ia, ga);
  });
}

Var concat_cols(const Var& a, const Var& b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows()) throw std::invalid_argument("concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const std::size_t ia = a.id, ib = b.id;
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return a.tape->record(std::move(out), any_grad(a, b), [ia, ib, ca, cb](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g.leftCols(ca));
    if (t.requires_grad(ib)) t.accumulate(ib, g.rightCols(cb));
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::invalid_argument("slice_cols: out of range");
  const std::size_t ia = a.id;
  const Eigen::Index r = a.rows(), c = a.cols();
  Matrix out = a.value().middleCols(start, count);
  return a.tape->record(std::move(out), any_grad(a), [ia, r, c, start, count](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(r, c);
    ga.middleCols(start, count) = g;
    t.accumulate(ia, ga);
  });
}

Var cross_entropy(const Var& log_probs, const Matrix& target) {
  if (target.rows() != log_probs.rows() || target.cols() != log_probs.cols()) {
    throw std::invalid_argument("cross_entropy: target shape mismatch");
  }
  if (target.rows() == 0) throw std::invalid_argument("cross_entropy: empty batch");
  Var tgt = log_probs.tape->constant(target);
  return scale(sum(hadamard(log_probs, tgt)), -1.0 / static_cast<Scalar>(target.rows()));
}

}  // namespace ad
}  // namespace puat
