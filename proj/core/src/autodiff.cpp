#include "hbnn/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace hbnn {

namespace {

struct FaultState {
  bool active = false;
  Op op = Op::constant;
  double factor = 1.0;
};

thread_local FaultState g_fault;

std::string shape_str(const Matrix& m) {
  std::ostringstream s;
  s << m.rows() << "x" << m.cols();
  return s.str();
}

Index broadcast_dim(Index a, Index b, const char* what) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw DimensionMismatch(std::string(what) + ": incompatible broadcast dimensions");
}

Matrix expand(const Matrix& x, Index rows, Index cols) {
  if (x.rows() == rows && x.cols() == cols) return x;
  if (x.rows() == 1 && x.cols() == 1) return Matrix::Constant(rows, cols, x(0, 0));
  if (x.rows() == 1) return x.replicate(rows, 1);
  if (x.cols() == 1) return x.replicate(1, cols);
  // 1xC against Rx1 is handled by the branches above per operand.
  throw DimensionMismatch("expand: incompatible shape");
}

// Sums an adjoint of the broadcast shape back down to the operand's shape.
Matrix reduce_to(const Matrix& adj, Index rows, Index cols) {
  if (adj.rows() == rows && adj.cols() == cols) return adj;
  Matrix out = adj;
  if (rows == 1 && out.rows() != 1) out = out.colwise().sum().eval();
  if (cols == 1 && out.cols() != 1) out = out.rowwise().sum().eval();
  return out;
}

Matrix tril(const Matrix& m) { return m.triangularView<Eigen::Lower>(); }

// Lower triangle with the diagonal halved.
Matrix phi(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("autodiff: operation on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: operands live on different tapes");
  return tape_of(a);
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionMismatch(std::string(what) + ": expected square matrix, got " + shape_str(m));
  }
}

template <typename F, typename D>
Var unary(Op op, Var a, F forward, D derivative) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr(forward);
  return t.record(op, {a}, std::move(out), [a, derivative](Tape& tape, const Matrix& g, const Matrix&) {
    const Matrix& xv = a.value();
    Matrix d = xv.unaryExpr(derivative);
    tape.accumulate(a, g.cwiseProduct(d));
  });
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::constant: return "constant";
    case Op::parameter: return "parameter";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::multiply: return "multiply";
    case Op::divide: return "divide";
    case Op::matmul: return "matmul";
    case Op::transpose: return "transpose";
    case Op::negate: return "negate";
    case Op::scale: return "scale";
    case Op::shift: return "shift";
    case Op::relu: return "relu";
    case Op::softplus: return "softplus";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::square: return "square";
    case Op::sqrt: return "sqrt";
    case Op::sin: return "sin";
    case Op::cos: return "cos";
    case Op::acos: return "acos";
    case Op::pow_int: return "pow_int";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::row_sum: return "row_sum";
    case Op::col_sum: return "col_sum";
    case Op::slice_cols: return "slice_cols";
    case Op::concat_cols: return "concat_cols";
    case Op::diag_part: return "diag_part";
    case Op::set_diagonal: return "set_diagonal";
    case Op::add_scaled_identity: return "add_scaled_identity";
    case Op::lower_softplus_diag: return "lower_softplus_diag";
    case Op::squared_distance: return "squared_distance";
    case Op::floor_min: return "floor_min";
    case Op::cholesky: return "cholesky";
    case Op::solve_lower: return "solve_lower";
    case Op::solve_lower_transposed: return "solve_lower_transposed";
    case Op::log_det_from_chol: return "log_det_from_chol";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Parameter

Parameter::Parameter(std::string name, Matrix unconstrained, Transform transform)
    : name_(std::move(name)),
      value_(std::move(unconstrained)),
      grad_(Matrix::Zero(value_.rows(), value_.cols())),
      transform_(transform) {
  require_finite(value_, name_);
}

Parameter Parameter::positive(std::string name, const Matrix& constrained) {
  Matrix raw = constrained.unaryExpr([](double y) { return softplus_inverse(y); });
  return Parameter(std::move(name), std::move(raw), Transform::softplus);
}

Parameter Parameter::positive(std::string name, double constrained) {
  return positive(std::move(name), Matrix::Constant(1, 1, constrained));
}

void Parameter::set_unconstrained(const Matrix& value) {
  if (value.rows() != value_.rows() || value.cols() != value_.cols()) {
    throw DimensionMismatch("Parameter " + name_ + ": shape " + shape_str(value) +
                            " does not match " + shape_str(value_));
  }
  require_finite(value, name_);
  value_ = value;
}

Matrix Parameter::constrained() const {
  if (transform_ == Transform::identity) return value_;
  return value_.unaryExpr([](double x) { return hbnn::softplus(x); });
}

void Parameter::set_constrained(const Matrix& value) {
  if (transform_ == Transform::identity) {
    set_unconstrained(value);
  } else {
    set_unconstrained(value.unaryExpr([](double y) { return softplus_inverse(y); }));
  }
}

Matrix Parameter::transform_derivative() const {
  if (transform_ == Transform::identity) return Matrix::Ones(value_.rows(), value_.cols());
  return value_.unaryExpr([](double x) { return softplus_derivative(x); });
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Var / Tape

const Matrix& Var::value() const {
  if (!valid()) throw std::invalid_argument("Var: empty handle");
  return tape_->value(id_);
}

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) {
    throw DimensionMismatch("Var::scalar: node is " + shape_str(v));
  }
  return v(0, 0);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::constant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.op = Op::parameter;
  n.value = p.constrained();
  n.requires_grad = true;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Op op, std::vector<Var> inputs, Matrix value, Backward backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape() != this) throw std::invalid_argument("Tape::record: input from another tape");
    if (nodes_[static_cast<std::size_t>(in.id())].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Tape::accumulate(Var target, const Matrix& delta) {
  Node& n = nodes_[static_cast<std::size_t>(target.id())];
  if (!n.requires_grad) return;
  if (delta.rows() != n.value.rows() || delta.cols() != n.value.cols()) {
    throw DimensionMismatch(std::string("Tape::accumulate: adjoint ") + shape_str(delta) +
                            " for node " + std::string(op_name(n.op)) + " of shape " +
                            shape_str(n.value));
  }
  if (n.has_adjoint) {
    n.adjoint += delta;
  } else {
    n.adjoint = delta;
    n.has_adjoint = true;
  }
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("Tape::backward: root from another tape");
  const Matrix& rv = value(root.id());
  if (rv.rows() != 1 || rv.cols() != 1) {
    throw DimensionMismatch("Tape::backward: root must be scalar, got " + shape_str(rv));
  }
  for (Node& n : nodes_) {
    n.has_adjoint = false;
    n.adjoint.resize(0, 0);
  }
  accumulate(root, Matrix::Ones(1, 1));
  for (int i = root.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_adjoint || !n.requires_grad) continue;
    if (g_fault.active && n.op == g_fault.op) n.adjoint *= g_fault.factor;
    if (n.param != nullptr) {
      n.param->grad() += n.adjoint.cwiseProduct(n.param->transform_derivative());
      continue;
    }
    // Backward functions only touch adjoints of earlier nodes and never
    // append, so references into nodes_ stay valid.
    if (n.backward) n.backward(*this, n.adjoint, n.value);
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace ad {

namespace {

enum class BinaryKind { add, subtract, multiply, divide };

Var binary(Op op, BinaryKind kind, Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const char* name = op_name(op).data();
  const Index rows = broadcast_dim(av.rows(), bv.rows(), name);
  const Index cols = broadcast_dim(av.cols(), bv.cols(), name);
  const Matrix ae = expand(av, rows, cols);
  const Matrix be = expand(bv, rows, cols);
  Matrix out;
  switch (kind) {
    case BinaryKind::add: out = ae + be; break;
    case BinaryKind::subtract: out = ae - be; break;
    case BinaryKind::multiply: out = ae.cwiseProduct(be); break;
    case BinaryKind::divide: out = ae.cwiseQuotient(be); break;
  }
  return t.record(op, {a, b}, std::move(out), [a, b, kind, rows, cols](Tape& tape, const Matrix& g, const Matrix&) {
    const Matrix& av = a.value();
    const Matrix& bv = b.value();
    const bool need_a = tape.requires_grad(a);
    const bool need_b = tape.requires_grad(b);
    switch (kind) {
      case BinaryKind::add:
        if (need_a) tape.accumulate(a, reduce_to(g, av.rows(), av.cols()));
        if (need_b) tape.accumulate(b, reduce_to(g, bv.rows(), bv.cols()));
        break;
      case BinaryKind::subtract:
        if (need_a) tape.accumulate(a, reduce_to(g, av.rows(), av.cols()));
        if (need_b) tape.accumulate(b, reduce_to(-g, bv.rows(), bv.cols()));
        break;
      case BinaryKind::multiply: {
        if (need_a) {
          tape.accumulate(a, reduce_to(g.cwiseProduct(expand(bv, rows, cols)), av.rows(), av.cols()));
        }
        if (need_b) {
          tape.accumulate(b, reduce_to(g.cwiseProduct(expand(av, rows, cols)), bv.rows(), bv.cols()));
        }
        break;
      }
      case BinaryKind::divide: {
        const Matrix be = expand(bv, rows, cols);
        if (need_a) tape.accumulate(a, reduce_to(g.cwiseQuotient(be), av.rows(), av.cols()));
        if (need_b) {
          const Matrix ae = expand(av, rows, cols);
          Matrix gb = -g.cwiseProduct(ae).cwiseQuotient(be.cwiseProduct(be));
          tape.accumulate(b, reduce_to(gb, bv.rows(), bv.cols()));
        }
        break;
      }
    }
  });
}

}  // namespace

Var add(Var a, Var b) { return binary(Op::add, BinaryKind::add, a, b); }
Var subtract(Var a, Var b) { return binary(Op::subtract, BinaryKind::subtract, a, b); }
Var multiply(Var a, Var b) { return binary(Op::multiply, BinaryKind::multiply, a, b); }
Var divide(Var a, Var b) { return binary(Op::divide, BinaryKind::divide, a, b); }

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionMismatch("matmul: " + shape_str(av) + " times " + shape_str(bv));
  }
  Matrix out = av * bv;
  return t.record(Op::matmul, {a, b}, std::move(out), [a, b](Tape& tape, const Matrix& g, const Matrix&) {
    if (tape.requires_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.requires_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().transpose();
  return t.record(Op::transpose, {a}, std::move(out),
                  [a](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, g.transpose()); });
}

Var negate(Var a) {
  Tape& t = tape_of(a);
  Matrix out = -a.value();
  return t.record(Op::negate, {a}, std::move(out),
                  [a](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, -g); });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  Matrix out = a.value() * factor;
  return t.record(Op::scale, {a}, std::move(out),
                  [a, factor](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, g * factor); });
}

Var shift(Var a, double offset) {
  Tape& t = tape_of(a);
  Matrix out = a.value().array() + offset;
  return t.record(Op::shift, {a}, std::move(out),
                  [a](Tape& tape, const Matrix& g, const Matrix&) { tape.accumulate(a, g); });
}

Var relu(Var a) {
  return unary(
      Op::relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      Op::softplus, a, [](double x) { return hbnn::softplus(x); },
      [](double x) { return softplus_derivative(x); });
}

Var exp(Var a) {
  return unary(
      Op::exp, a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(
      Op::log, a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      Op::square, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var sqrt(Var a) {
  // The derivative is taken as 0 at exactly 0 instead of +inf.
  return unary(
      Op::sqrt, a, [](double x) { return std::sqrt(x); },
      [](double x) { return x > 0.0 ? 0.5 / std::sqrt(x) : 0.0; });
}

Var sin(Var a) {
  return unary(
      Op::sin, a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

Var cos(Var a) {
  return unary(
      Op::cos, a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

Var acos(Var a) {
  return unary(
      Op::acos, a, [](double x) { return std::acos(std::clamp(x, -1.0, 1.0)); },
      [](double x) { return std::abs(x) < 1.0 ? -1.0 / std::sqrt(1.0 - x * x) : 0.0; });
}

Var pow_int(Var a, int exponent) {
  if (exponent < 1) throw std::invalid_argument("pow_int: exponent must be >= 1");
  Tape& t = tape_of(a);
  Matrix out = a.value().array().pow(static_cast<double>(exponent));
  return t.record(Op::pow_int, {a}, std::move(out), [a, exponent](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix d = exponent == 1 ? Matrix(Matrix::Ones(a.rows(), a.cols()))
                             : Matrix(exponent * a.value().array().pow(exponent - 1.0));
    tape.accumulate(a, g.cwiseProduct(d));
  });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  return t.record(Op::sum, {a}, std::move(out), [a](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const Index n = a.value().size();
  if (n == 0) throw DimensionMismatch("mean: empty input");
  Matrix out = Matrix::Constant(1, 1, a.value().mean());
  return t.record(Op::mean, {a}, std::move(out), [a, n](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / static_cast<double>(n)));
  });
}

Var row_sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().rowwise().sum();
  return t.record(Op::row_sum, {a}, std::move(out), [a](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g.replicate(1, a.cols()));
  });
}

Var col_sum(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().colwise().sum();
  return t.record(Op::col_sum, {a}, std::move(out), [a](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, g.replicate(a.rows(), 1));
  });
}

Var slice_cols(Var a, Index start, Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw DimensionMismatch("slice_cols: range outside " + shape_str(a.value()));
  }
  Matrix out = a.value().middleCols(start, count);
  return t.record(Op::slice_cols, {a}, std::move(out), [a, start, count](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    tape.accumulate(a, full);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Tape& t = tape_of(parts.front());
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != &t) throw std::invalid_argument("concat_cols: inputs on different tapes");
    if (p.rows() != rows) throw DimensionMismatch("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return t.record(Op::concat_cols, parts, std::move(out), [parts](Tape& tape, const Matrix& g, const Matrix&) {
    Index off = 0;
    for (const Var& p : parts) {
      if (tape.requires_grad(p)) tape.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

Var diag_part(Var a) {
  Tape& t = tape_of(a);
  require_square(a.value(), "diag_part");
  Matrix out = a.value().diagonal();
  return t.record(Op::diag_part, {a}, std::move(out), [a](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix full = Matrix::Zero(a.rows(), a.cols());
    full.diagonal() = g.col(0);
    tape.accumulate(a, full);
  });
}

Var set_diagonal(Var a, double value) {
  Tape& t = tape_of(a);
  require_square(a.value(), "set_diagonal");
  Matrix out = a.value();
  out.diagonal().setConstant(value);
  return t.record(Op::set_diagonal, {a}, std::move(out), [a](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix ga = g;
    ga.diagonal().setZero();
    tape.accumulate(a, ga);
  });
}

Var add_scaled_identity(Var a, double factor) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  require_square(av, "add_scaled_identity");
  const Index m = av.rows();
  const double mean_diag = m > 0 ? av.diagonal().mean() : 0.0;
  const bool scaled = mean_diag > 0.0;
  Matrix out = av;
  out.diagonal().array() += factor * (scaled ? mean_diag : 1.0);
  return t.record(Op::add_scaled_identity, {a}, std::move(out),
                  [a, factor, scaled, m](Tape& tape, const Matrix& g, const Matrix&) {
                    Matrix ga = g;
                    if (scaled) ga.diagonal().array() += factor * g.trace() / static_cast<double>(m);
                    tape.accumulate(a, ga);
                  });
}

Var lower_softplus_diag(Var raw) {
  Tape& t = tape_of(raw);
  const Matrix& rv = raw.value();
  require_square(rv, "lower_softplus_diag");
  Matrix out = rv.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < rv.rows(); ++i) out(i, i) = hbnn::softplus(rv(i, i));
  return t.record(Op::lower_softplus_diag, {raw}, std::move(out), [raw](Tape& tape, const Matrix& g, const Matrix&) {
    const Matrix& rv = raw.value();
    Matrix gr = g.triangularView<Eigen::StrictlyLower>();
    for (Index i = 0; i < rv.rows(); ++i) gr(i, i) = g(i, i) * softplus_derivative(rv(i, i));
    tape.accumulate(raw, gr);
  });
}

Var squared_distance(Var x, Var x2) {
  Tape& t = tape_of(x, x2);
  const Matrix& xv = x.value();
  const Matrix& x2v = x2.value();
  if (xv.cols() != x2v.cols()) {
    throw DimensionMismatch("squared_distance: feature dimensions " + std::to_string(xv.cols()) +
                            " and " + std::to_string(x2v.cols()) + " differ");
  }
  const bool same = x.id() == x2.id();
  const Vector n1 = xv.rowwise().squaredNorm();
  const Vector n2 = x2v.rowwise().squaredNorm();
  Matrix out = -2.0 * xv * x2v.transpose();
  out.colwise() += n1;
  out.rowwise() += n2.transpose();
  // Entries clamped to zero get no gradient.
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped = out.array() < 0.0;
  out = out.cwiseMax(0.0);
  if (same) out.diagonal().setZero();
  return t.record(Op::squared_distance, {x, x2}, std::move(out),
                  [x, x2, same, clamped](Tape& tape, const Matrix& g, const Matrix&) {
                    Matrix gm = clamped.select(Matrix::Zero(g.rows(), g.cols()), g);
                    if (same) gm.diagonal().setZero();
                    const Matrix& xv = x.value();
                    const Matrix& x2v = x2.value();
                    if (tape.requires_grad(x)) {
                      Matrix gx = 2.0 * (gm.rowwise().sum().asDiagonal() * xv) - 2.0 * gm * x2v;
                      tape.accumulate(x, gx);
                    }
                    if (tape.requires_grad(x2)) {
                      Matrix gx2 = 2.0 * (gm.colwise().sum().transpose().asDiagonal() * x2v) -
                                   2.0 * gm.transpose() * xv;
                      tape.accumulate(x2, gx2);
                    }
                  });
}

Var floor_min(Var a, double floor) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clipped = av.array() < floor;
  t.diagnostics().variance_clips += static_cast<std::size_t>(clipped.count());
  Matrix out = av.cwiseMax(floor);
  return t.record(Op::floor_min, {a}, std::move(out), [a, clipped](Tape& tape, const Matrix& g, const Matrix&) {
    tape.accumulate(a, clipped.select(Matrix::Zero(g.rows(), g.cols()), g));
  });
}

Var cholesky(Var a) {
  Tape& t = tape_of(a);
  LowerTriangular l = hbnn::cholesky(a.value());
  Matrix out = l.matrix();
  return t.record(Op::cholesky, {a}, std::move(out), [a, l](Tape& tape, const Matrix& g, const Matrix&) {
    // With P = Φ(Lᵀ tril(Ḡ)), Ā = L⁻ᵀ P L⁻¹, symmetrized.
    const Matrix p = phi(l.matrix().transpose() * tril(g));
    const Matrix s = hbnn::solve_lower_transposed(l, hbnn::solve_lower_transposed(l, p.transpose()).transpose());
    tape.accumulate(a, 0.5 * (s + s.transpose()));
  });
}

JitteredFactor jittered_cholesky(Var a) {
  Tape& t = tape_of(a);
  const JitteredCholesky found = hbnn::jittered_cholesky(a.value());
  const double factor = kJitterSchedule[found.schedule_index];
  TapeDiagnostics& diag = t.diagnostics();
  diag.max_jitter = std::max(diag.max_jitter, found.jitter);
  if (found.schedule_index > 0) ++diag.jitter_escalations;
  return JitteredFactor{cholesky(add_scaled_identity(a, factor)), found.jitter};
}

Var solve_lower(Var l, Var b) {
  Tape& t = tape_of(l, b);
  const LowerTriangular lt = LowerTriangular::from_matrix(l.value());
  Matrix out = hbnn::solve_lower(lt, b.value());
  return t.record(Op::solve_lower, {l, b}, std::move(out), [l, b, lt](Tape& tape, const Matrix& g, const Matrix& y) {
    const Matrix gb = hbnn::solve_lower_transposed(lt, g);
    if (tape.requires_grad(b)) tape.accumulate(b, gb);
    if (tape.requires_grad(l)) tape.accumulate(l, -tril(gb * y.transpose()));
  });
}

Var solve_lower_transposed(Var l, Var b) {
  Tape& t = tape_of(l, b);
  const LowerTriangular lt = LowerTriangular::from_matrix(l.value());
  Matrix out = hbnn::solve_lower_transposed(lt, b.value());
  return t.record(Op::solve_lower_transposed, {l, b}, std::move(out),
                  [l, b, lt](Tape& tape, const Matrix& g, const Matrix& y) {
                    const Matrix gb = hbnn::solve_lower(lt, g);
                    if (tape.requires_grad(b)) tape.accumulate(b, gb);
                    if (tape.requires_grad(l)) tape.accumulate(l, -tril(y * gb.transpose()));
                  });
}

Var log_det_from_chol(Var l) {
  Tape& t = tape_of(l);
  const LowerTriangular lt = LowerTriangular::from_matrix(l.value());
  Matrix out = Matrix::Constant(1, 1, hbnn::log_det_from_chol(lt));
  return t.record(Op::log_det_from_chol, {l}, std::move(out), [l](Tape& tape, const Matrix& g, const Matrix&) {
    Matrix gl = Matrix::Zero(l.rows(), l.cols());
    gl.diagonal() = 2.0 * g(0, 0) * l.value().diagonal().cwiseInverse();
    tape.accumulate(l, gl);
  });
}

}  // namespace ad

namespace testing {

ScopedAdjointFault::ScopedAdjointFault(Op op, double factor)
    : prev_active_(g_fault.active), prev_op_(g_fault.op), prev_factor_(g_fault.factor) {
  g_fault = FaultState{true, op, factor};
}

ScopedAdjointFault::~ScopedAdjointFault() { g_fault = FaultState{prev_active_, prev_op_, prev_factor_}; }

}  // namespace testing

}  // namespace hbnn
