#include "hbnn/numerics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace hbnn {

namespace {

constexpr double kSymmetryTolerance = 1e-10;
constexpr double kTwoPi = 6.283185307179586476925286766559;

void require_symmetric(const Matrix& a) {
  if (a.rows() != a.cols()) {
    std::ostringstream msg;
    msg << "cholesky: matrix is " << a.rows() << "x" << a.cols() << ", expected square";
    throw DimensionMismatch(msg.str());
  }
  if (a.size() == 0) return;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= kSymmetryTolerance * scale)) {
    throw std::invalid_argument("cholesky: matrix is not symmetric");
  }
}

}  // namespace

LowerTriangular LowerTriangular::from_matrix(Matrix factor) {
  if (factor.rows() != factor.cols()) {
    throw DimensionMismatch("LowerTriangular: factor must be square");
  }
  for (Index j = 0; j < factor.cols(); ++j) {
    if (!(factor(j, j) > 0.0)) {
      throw std::invalid_argument("LowerTriangular: diagonal must be strictly positive");
    }
    for (Index i = 0; i < j; ++i) {
      if (factor(i, j) != 0.0) {
        throw std::invalid_argument("LowerTriangular: nonzero entry above the diagonal");
      }
    }
  }
  return LowerTriangular(std::move(factor));
}

LowerTriangular cholesky(const Matrix& a) {
  require_symmetric(a);
  require_finite(a, "cholesky input");
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("cholesky: non-positive pivot");
  }
  Matrix l = llt.matrixL();
  for (Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) {
      throw NotPositiveDefinite("cholesky: non-positive pivot");
    }
  }
  return LowerTriangular(std::move(l));
}

double jitter_scale(const Matrix& a) {
  if (a.rows() == 0) return 1.0;
  const double mean_diag = a.diagonal().mean();
  return mean_diag > 0.0 ? mean_diag : 1.0;
}

JitteredCholesky jittered_cholesky(const Matrix& a) {
  require_symmetric(a);
  const double scale = jitter_scale(a);
  for (std::size_t i = 0; i < kJitterSchedule.size(); ++i) {
    const double jitter = kJitterSchedule[i] * scale;
    Matrix shifted = a;
    shifted.diagonal().array() += jitter;
    try {
      return JitteredCholesky{cholesky(shifted), jitter, i};
    } catch (const NotPositiveDefinite&) {
    }
  }
  std::ostringstream msg;
  msg << "jittered_cholesky: not positive definite after jitter "
      << kJitterSchedule.back() * scale;
  throw NotPositiveDefinite(msg.str());
}

Matrix solve_lower(const LowerTriangular& l, const Matrix& b) {
  if (b.rows() != l.dim()) {
    throw DimensionMismatch("solve_lower: factor and right-hand side rows differ");
  }
  return l.matrix().triangularView<Eigen::Lower>().solve(b);
}

Matrix solve_lower_transposed(const LowerTriangular& l, const Matrix& b) {
  if (b.rows() != l.dim()) {
    throw DimensionMismatch("solve_lower_transposed: factor and right-hand side rows differ");
  }
  return l.matrix().transpose().triangularView<Eigen::Upper>().solve(b);
}

double log_det_from_chol(const LowerTriangular& l) {
  return 2.0 * l.matrix().diagonal().array().log().sum();
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(what) + ": non-finite value");
  }
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double softplus_derivative(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be positive");
  if (y > 30.0) return y;
  if (y < std::exp(-30.0)) return std::log(y);
  return std::log(std::expm1(y));
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), engine_(splitmix64(seed) ^ splitmix64(~stream)) {}

std::uint64_t Rng::next_u64() {
  ++position_;
  return engine_();
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::standard_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the logarithm finite.
  const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = kTwoPi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Matrix Rng::standard_normal(Index rows, Index cols) {
  Matrix out(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) out(i, j) = standard_normal();
  }
  return out;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // Rejection sampling avoids modulo bias.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace hbnn
