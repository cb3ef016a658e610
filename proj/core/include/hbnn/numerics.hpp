#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hbnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Base class for failures caused by the numbers themselves (non-PD
/// matrices, non-finite values) as opposed to malformed inputs.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a Cholesky pivot is not strictly positive.
class NotPositiveDefinite : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Raised when operand shapes do not conform.
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Lower-triangular Cholesky factor with a strictly positive diagonal.
/// Only numerics::cholesky and friends construct it.
class LowerTriangular {
 public:
  LowerTriangular() = default;

  const Matrix& matrix() const { return factor_; }
  Index dim() const { return factor_.rows(); }

  /// Wraps an existing factor; throws if it is not square lower-triangular
  /// with a positive diagonal.
  static LowerTriangular from_matrix(Matrix factor);

 private:
  explicit LowerTriangular(Matrix factor) : factor_(std::move(factor)) {}
  Matrix factor_;

  friend LowerTriangular cholesky(const Matrix& a);
};

/// Multipliers of mean(diag(A)) tried in order by jittered_cholesky.
inline constexpr std::array<double, 5> kJitterSchedule{1e-6, 1e-5, 1e-4, 1e-3, 1e-2};

struct JitteredCholesky {
  LowerTriangular factor;
  double jitter = 0.0;         // absolute value added to the diagonal
  std::size_t schedule_index;  // position in kJitterSchedule that succeeded
};

LowerTriangular cholesky(const Matrix& a);

/// Smallest diagonal shift from kJitterSchedule (scaled by mean(diag(A)),
/// or by 1 when that mean is not positive) that makes A factorizable.
JitteredCholesky jittered_cholesky(const Matrix& a);

/// Scale used by the jitter schedule for this matrix.
double jitter_scale(const Matrix& a);

/// X with L X = B.
Matrix solve_lower(const LowerTriangular& l, const Matrix& b);
/// X with Lᵀ X = B.
Matrix solve_lower_transposed(const LowerTriangular& l, const Matrix& b);

double log_det_from_chol(const LowerTriangular& l);

bool all_finite(const Matrix& m);
void require_finite(const Matrix& m, std::string_view what);

/// Softplus ln(1 + eˣ) with the overflow-safe branches used throughout.
double softplus(double x);
/// Derivative of softplus, the logistic sigmoid.
double softplus_derivative(double x);
/// y > 0 such that softplus(softplus_inverse(y)) == y (up to rounding).
double softplus_inverse(double y);

/// Seeded random stream.
///
/// Algorithm: std::mt19937_64 (bit-exact across conforming standard
/// libraries) seeded with splitmix64(seed) ^ splitmix64(stream). Uniforms
/// take the top 53 bits; normals use the Box–Muller transform with the
/// second draw of each pair cached. No std::*_distribution is used because
/// their output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  /// Number of 64-bit words consumed so far.
  std::uint64_t position() const { return position_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi);
  double standard_normal();
  /// rows × cols i.i.d. N(0, 1), filled in row-major order.
  Matrix standard_normal(Index rows, Index cols);
  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n);

  /// Independent stream derived from this generator's seed.
  Rng derive(std::uint64_t stream) const { return Rng(seed_, stream); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uint64_t position_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace hbnn
