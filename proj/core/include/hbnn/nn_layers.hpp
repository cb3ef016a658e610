#pragma once

#include "hbnn/gp_layer.hpp"

namespace hbnn {

enum class Activation { linear, relu };

std::string_view activation_name(Activation a);

/// h = Γ(H Wᵀ + b), W is D_out x D_in, b is stored as a 1 x D_out row.
class DenseLayer {
 public:
  /// Glorot-uniform W, limit sqrt(6 / (D_in + D_out)), and b = 0.
  DenseLayer(Index input_dim, Index output_dim, Activation activation, Rng& rng);
  DenseLayer(Matrix weights, Matrix bias, Activation activation);

  Index input_dim() const { return weights_.cols(); }
  Index output_dim() const { return weights_.rows(); }
  Activation activation() const { return activation_; }

  Var forward(Var h);
  Matrix forward(const Matrix& h);

  Parameter& weights() { return weights_; }
  Parameter& bias() { return bias_; }
  ParameterList parameters() { return {&weights_, &bias_}; }
  void set_name_prefix(const std::string& prefix);

 private:
  Parameter weights_;
  Parameter bias_;
  Activation activation_;
};

Var apply_activation(Var pre, Activation activation);

/// Dense layer with a factorized Gaussian posterior over every weight and
/// bias, N(μ, σ²) with σ = softplus(ρ), and a standard-normal prior.
/// One weight sample is drawn per forward call.
class VariationalDenseLayer {
 public:
  /// Means use He-style scaling, ρ starts at softplus⁻¹(0.01).
  VariationalDenseLayer(Index input_dim, Index output_dim, double kl_weight, Activation activation,
                        Rng& rng);

  Index input_dim() const { return weight_mean_.cols(); }
  Index output_dim() const { return weight_mean_.rows(); }
  double kl_weight() const { return kl_weight_; }
  Activation activation() const { return activation_; }

  /// Reparameterized draw W = μ + σ ⊙ ε (same for b), then Γ(H Wᵀ + b).
  Var forward_sample(Var h, Rng& rng);
  /// Forward pass with the posterior means.
  Var forward_mean(Var h);
  /// Σ KL(N(μ, σ²) ‖ N(0, 1)) over all entries, unweighted.
  Var kl(Tape& tape);
  double kl();

  Parameter& weight_mean() { return weight_mean_; }
  Parameter& weight_scale() { return weight_scale_; }
  Parameter& bias_mean() { return bias_mean_; }
  Parameter& bias_scale() { return bias_scale_; }
  ParameterList parameters() { return {&weight_mean_, &weight_scale_, &bias_mean_, &bias_scale_}; }
  void set_name_prefix(const std::string& prefix);

 private:
  Parameter weight_mean_;
  Parameter weight_scale_;  // softplus-constrained standard deviations
  Parameter bias_mean_;
  Parameter bias_scale_;
  double kl_weight_;
  Activation activation_;
};

inline constexpr double kHeadStdFloor = 1e-6;

/// Interprets a 2-column input as [mean, raw scale] with
/// std = softplus(raw scale) + 1e-6.
class GaussianHead {
 public:
  struct Decoded {
    Var mean;  // N x 1
    Var std;   // N x 1
  };
  Decoded decode(Var raw) const;
  /// Mean over rows of −ln N(y_i; μ_i, σ_i²).
  Var negative_loglik(Var raw, Var y) const;
  double negative_loglik(const Matrix& raw, const Matrix& y) const;
};

/// Homoscedastic Gaussian observation noise with a trainable variance.
class GaussianLikelihood {
 public:
  explicit GaussianLikelihood(double variance = 1e-3);

  double variance() const { return variance_.constrained()(0, 0); }
  void set_variance(double v) { variance_.set_constrained(Matrix::Constant(1, 1, v)); }
  Parameter& variance_parameter() { return variance_; }

  /// Σ_n E_{f ~ N(m_n, v_n)} ln N(y_n; f, σ²), in closed form.
  Var variational_expectation(const MarginalVars& marginals, Var y);
  double variational_expectation(const GaussianMarginals& marginals, const Matrix& y);

  ParameterList parameters() { return {&variance_}; }
  void set_name_prefix(const std::string& prefix) { variance_.set_name(prefix + "variance"); }

 private:
  Parameter variance_;
};

}  // namespace hbnn
