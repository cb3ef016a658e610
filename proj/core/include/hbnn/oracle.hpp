#pragma once

// Reference implementations used to check the main code paths. Apart from
// numerics, nothing here calls into the layer, kernel or autodiff code;
// formulas are re-derived on purpose.

#include "hbnn/kernels.hpp"

#include <functional>
#include <span>

namespace hbnn::oracle {

struct ExactGPResult {
  Vector mean;
  Vector variance;
  double log_marginal_likelihood = 0.0;
};

/// Kernel matrix evaluated entry by entry from the kernel's current
/// hyperparameter values.
Matrix reference_kernel(const Kernel& kernel, const Matrix& x, const Matrix& x2);

/// Conjugate GP regression with zero prior mean and noise variance
/// `noise`. The jitter schedule applies to K + noise·I.
ExactGPResult exact_gp_regression(const Kernel& kernel, const Matrix& x, const Vector& y, double noise,
                                  const Matrix& x_star);

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

using Sampler = std::function<Vector(Rng&)>;
using LogDensity = std::function<double(const Vector&)>;

/// Mean and standard error of ln q(x) − ln p(x) over x ~ q.
MonteCarloEstimate mc_kl(const Sampler& sample_q, const LogDensity& logpdf_q, const LogDensity& logpdf_p,
                         std::size_t n_samples, Rng& rng);

/// Log-density of N(mean, cov) at x.
double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& cov);
/// Sampler for N(mean, cov).
Sampler gaussian_sampler(const Vector& mean, const Matrix& cov);

struct QuadratureRule {
  Vector nodes;
  Vector weights;
};

/// Gauss–Hermite rule for ∫ e^{−t²} f(t) dt.
QuadratureRule gauss_hermite_rule(std::size_t nodes);

/// E[f(t)] for t ~ N(mean, variance).
double gauss_hermite_expectation(const std::function<double(double)>& f, double mean, double variance,
                                 std::size_t nodes = 20);

/// Central differences of `loss` with respect to every unconstrained entry
/// of every parameter. Parameters are restored afterwards.
std::vector<Matrix> finite_diff_grad(const std::function<double()>& loss, std::span<Parameter* const> params,
                                     double step = 1e-5);

}  // namespace hbnn::oracle
