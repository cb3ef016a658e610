#pragma once

#include "hbnn/kernels.hpp"

namespace hbnn {

/// Per-point predictive moments, N x P each.
struct GaussianMarginals {
  Matrix mean;
  Matrix variance;
};

/// Marginal moments still attached to a tape.
struct MarginalVars {
  Var mean;
  Var variance;
};

/// mean + sqrt(variance) ⊙ ε, ε ~ N(0, I) drawn from rng.
Var reparameterize(const MarginalVars& marginals, Rng& rng);

enum class MeanFunction { zero, identity };

/// Lower bound applied to every propagated marginal variance.
inline constexpr double kVarianceFloor = 1e-12;

/// Sparse variational Gaussian-process layer.
///
/// P independent latent functions share one kernel and one set of M
/// inducing inputs Z. Each output p has its own q(u_p) = N(m_p, S_p) with
/// S_p = L_p L_pᵀ, stored directly (not whitened). The prior on u is
/// N(μ(Z), K_uu), where K_uu always carries the jitter chosen by
/// jittered_cholesky.
class GPLayer {
 public:
  /// m_u starts at zero and each L_p at 0.1 · chol(K_uu), a shrunk prior.
  GPLayer(Kernel kernel, const Matrix& inducing_points, Index num_latent,
          MeanFunction mean_function = MeanFunction::zero);

  Index num_inducing() const { return inducing_.rows(); }
  Index input_dim() const { return inducing_.cols(); }
  Index num_latent() const { return num_latent_; }
  MeanFunction mean_function() const { return mean_function_; }

  Kernel& kernel() { return kernel_; }
  const Kernel& kernel() const { return kernel_; }
  Parameter& inducing_points() { return inducing_; }
  const Parameter& inducing_points() const { return inducing_; }
  Parameter& q_mu() { return q_mu_; }
  const Parameter& q_mu() const { return q_mu_; }
  /// Raw (unconstrained) factor of S_p: strictly-lower part as stored,
  /// diagonal through softplus.
  Parameter& q_sqrt(Index p) { return q_sqrt_.at(static_cast<std::size_t>(p)); }
  const Parameter& q_sqrt(Index p) const { return q_sqrt_.at(static_cast<std::size_t>(p)); }

  /// Sets L_p to the given lower-triangular factor with positive diagonal.
  void set_q_sqrt(Index p, const Matrix& factor);
  /// Lower-triangular L_p (constrained view).
  Matrix q_sqrt_factor(Index p) const;
  /// Cholesky factor of the jittered prior covariance K_uu at the current
  /// hyperparameters and inducing points.
  Matrix prior_cholesky();
  /// μ(Z), M x P.
  Matrix prior_mean();
  /// Sets q(u) equal to the prior: m_p = μ(Z), L_p = chol(K_uu).
  void set_to_prior();
  /// Re-initializes q(u) to the shrunk prior used at construction.
  void reset_variational();

  MarginalVars predict_marginals(Var x);
  /// Moments of f(X) | u = u_values (M x P).
  MarginalVars conditional_given_u(Var x, Var u_values);
  /// mean + sqrt(variance) ⊙ ε with ε drawn from rng.
  Var sample(Var x, Rng& rng);
  /// Σ_p KL(N(m_p, S_p) ‖ N(μ(Z), K_uu)).
  Var kl_to_prior(Tape& tape);

  GaussianMarginals predict_marginals(const Matrix& x);
  GaussianMarginals conditional_given_u(const Matrix& x, const Matrix& u_values);
  Matrix sample(const Matrix& x, Rng& rng);
  double kl_to_prior();

  ParameterList parameters();
  void set_name_prefix(const std::string& prefix);

 private:
  struct Prior {
    Var z;
    Var chol;      // L with L Lᵀ = K_uu + jitter
    Var mean;      // μ(Z), M x P
  };
  Prior prior(Tape& tape);
  Var mean_at(Var x);
  Var q_sqrt_var(Tape& tape, Index p);

  Kernel kernel_;
  Parameter inducing_;
  Parameter q_mu_;
  std::vector<Parameter> q_sqrt_;
  Index num_latent_;
  MeanFunction mean_function_;
};

}  // namespace hbnn
