#pragma once

// Define-by-run reverse-mode differentiation over dense matrices.
//
// A Tape records every operation of one forward pass. Values are Eigen
// matrices; a scalar is a 1x1 matrix. Parameters live outside the tape and
// receive gradients with respect to their *unconstrained* values when
// Tape::backward runs.

#include "hbnn/numerics.hpp"

#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace hbnn {

enum class Transform { identity, softplus };

/// A trainable matrix. The optimizer sees the unconstrained value; models
/// see the constrained one (softplus-transformed parameters are positive).
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Matrix unconstrained, Transform transform = Transform::identity);

  /// Softplus-constrained parameter holding the given positive values.
  static Parameter positive(std::string name, const Matrix& constrained);
  static Parameter positive(std::string name, double constrained);

  const std::string& name() const { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }
  Transform transform() const { return transform_; }

  const Matrix& unconstrained() const { return value_; }
  Matrix& unconstrained() { return value_; }
  void set_unconstrained(const Matrix& value);

  Matrix constrained() const;
  void set_constrained(const Matrix& value);
  /// d constrained / d unconstrained, elementwise.
  Matrix transform_derivative() const;

  const Matrix& grad() const { return grad_; }
  Matrix& grad() { return grad_; }
  void zero_grad() { grad_.setZero(); }

  Index rows() const { return value_.rows(); }
  Index cols() const { return value_.cols(); }

 private:
  std::string name_;
  Matrix value_;
  Matrix grad_;
  Transform transform_ = Transform::identity;
};

using ParameterList = std::vector<Parameter*>;

void zero_grads(std::span<Parameter* const> params);

enum class Op {
  constant,
  parameter,
  add,
  subtract,
  multiply,
  divide,
  matmul,
  transpose,
  negate,
  scale,
  shift,
  relu,
  softplus,
  exp,
  log,
  square,
  sqrt,
  sin,
  cos,
  acos,
  pow_int,
  sum,
  mean,
  row_sum,
  col_sum,
  slice_cols,
  concat_cols,
  diag_part,
  set_diagonal,
  add_scaled_identity,
  lower_softplus_diag,
  squared_distance,
  floor_min,
  cholesky,
  solve_lower,
  solve_lower_transposed,
  log_det_from_chol,
};

std::string_view op_name(Op op);

/// Diagnostics gathered while recording; copied into training reports.
struct TapeDiagnostics {
  std::size_t variance_clips = 0;  // entries raised to the variance floor
  double max_jitter = 0.0;         // largest absolute jitter used
  std::size_t jitter_escalations = 0;  // factorizations needing more than the first jitter
};

class Tape;

/// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  /// Receives the node's adjoint and its own forward value, and pushes
  /// contributions into inputs via Tape::accumulate.
  using Backward = std::function<void(Tape&, const Matrix& adjoint, const Matrix& value)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  /// Leaf holding the constrained value of p; the same Parameter always
  /// maps to the same node on one tape.
  Var param(Parameter& p);

  /// Appends a node. `inputs` are the nodes the backward function may
  /// accumulate into.
  Var record(Op op, std::vector<Var> inputs, Matrix value, Backward backward);

  /// Reverse sweep from a 1x1 root. Parameter gradients are accumulated
  /// (not overwritten).
  void backward(Var root);

  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }
  /// Adds `delta` into the adjoint of `target` (no-op when the target does
  /// not depend on any parameter).
  void accumulate(Var target, const Matrix& delta);

  std::size_t size() const { return nodes_.size(); }
  TapeDiagnostics& diagnostics() { return diagnostics_; }
  const TapeDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  struct Node {
    Op op = Op::constant;
    Matrix value;
    Matrix adjoint;
    bool has_adjoint = false;
    bool requires_grad = false;
    Parameter* param = nullptr;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  TapeDiagnostics diagnostics_;
};

namespace ad {

// Elementwise binary operations broadcast a 1x1, 1xC or Rx1 operand
// against the other operand.
Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var multiply(Var a, Var b);
Var divide(Var a, Var b);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var negate(Var a);
Var scale(Var a, double factor);
Var shift(Var a, double offset);

Var relu(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var sqrt(Var a);
Var sin(Var a);
Var cos(Var a);
/// arccos of the input clamped to [-1, 1]; zero derivative where clamped
/// or at the endpoints.
Var acos(Var a);
Var pow_int(Var a, int exponent);

Var sum(Var a);
Var mean(Var a);
/// N x C -> N x 1.
Var row_sum(Var a);
/// N x C -> 1 x C.
Var col_sum(Var a);

Var slice_cols(Var a, Index start, Index count);
Var concat_cols(const std::vector<Var>& parts);
/// Square M x M -> M x 1.
Var diag_part(Var a);
/// Square matrix with its diagonal overwritten by `value` (no gradient flows
/// to the overwritten entries).
Var set_diagonal(Var a, double value);
/// A + factor * s * I with s = mean(diag(A)) when positive, else s = 1.
/// This is the jitter applied before a Cholesky factorization.
Var add_scaled_identity(Var a, double factor);
/// Strictly-lower part of `raw` plus softplus of its diagonal: a Cholesky
/// factor parameterized without constraints.
Var lower_softplus_diag(Var raw);
/// Pairwise squared Euclidean distances between rows of x and rows of x2
/// via ‖x‖² + ‖x′‖² − 2x·x′, clamped at zero. When x and x2 are the same
/// node the diagonal is exactly zero.
Var squared_distance(Var x, Var x2);
/// max(a, floor); increments the tape's variance-clip counter per clipped
/// entry.
Var floor_min(Var a, double floor);

Var cholesky(Var a);
/// Cholesky of A + jitter, walking kJitterSchedule. Returns the factor and
/// the absolute jitter used.
struct JitteredFactor {
  Var factor;
  double jitter;
};
JitteredFactor jittered_cholesky(Var a);
Var solve_lower(Var l, Var b);
Var solve_lower_transposed(Var l, Var b);
Var log_det_from_chol(Var l);

}  // namespace ad

namespace testing {

/// While alive, the adjoint of every node with the given op is multiplied
/// by `factor` before it is propagated. Used to check that gradient
/// verification catches broken adjoints. Thread-local.
class ScopedAdjointFault {
 public:
  ScopedAdjointFault(Op op, double factor);
  ~ScopedAdjointFault();
  ScopedAdjointFault(const ScopedAdjointFault&) = delete;
  ScopedAdjointFault& operator=(const ScopedAdjointFault&) = delete;

 private:
  bool prev_active_;
  Op prev_op_;
  double prev_factor_;
};

}  // namespace testing

}  // namespace hbnn
