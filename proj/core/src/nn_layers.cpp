#include "hbnn/nn_layers.hpp"

#include <cmath>
#include <numbers>

namespace hbnn {

namespace {

const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

Matrix he_normal(Index rows, Index cols, Rng& rng) {
  return rng.standard_normal(rows, cols) * std::sqrt(2.0 / static_cast<double>(cols));
}

Matrix glorot_uniform(Index rows, Index cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-limit, limit);
  }
  return w;
}

Var affine(Var h, Var w, Var b) {
  if (h.cols() != w.cols()) {
    throw DimensionMismatch("dense: input has " + std::to_string(h.cols()) + " columns, layer expects " +
                            std::to_string(w.cols()));
  }
  return ad::add(ad::matmul(h, ad::transpose(w)), b);
}

}  // namespace

std::string_view activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "linear";
}

Var apply_activation(Var pre, Activation activation) {
  return activation == Activation::relu ? ad::relu(pre) : pre;
}

DenseLayer::DenseLayer(Index input_dim, Index output_dim, Activation activation, Rng& rng)
    : DenseLayer(glorot_uniform(output_dim, input_dim, rng), Matrix::Zero(1, output_dim), activation) {}

DenseLayer::DenseLayer(Matrix weights, Matrix bias, Activation activation)
    : weights_("W", std::move(weights)), bias_("b", std::move(bias)), activation_(activation) {
  if (bias_.rows() != 1 || bias_.cols() != weights_.rows()) {
    throw DimensionMismatch("DenseLayer: bias must be 1 x D_out");
  }
}

Var DenseLayer::forward(Var h) {
  Tape& t = *h.tape();
  return apply_activation(affine(h, t.param(weights_), t.param(bias_)), activation_);
}

Matrix DenseLayer::forward(const Matrix& h) {
  Tape t;
  return forward(t.constant(h)).value();
}

void DenseLayer::set_name_prefix(const std::string& prefix) {
  weights_.set_name(prefix + "W");
  bias_.set_name(prefix + "b");
}

VariationalDenseLayer::VariationalDenseLayer(Index input_dim, Index output_dim, double kl_weight,
                                             Activation activation, Rng& rng)
    : weight_mean_("W_mean", he_normal(output_dim, input_dim, rng)),
      weight_scale_(Parameter::positive("W_scale", Matrix::Constant(output_dim, input_dim, 0.01))),
      bias_mean_("b_mean", Matrix::Zero(1, output_dim)),
      bias_scale_(Parameter::positive("b_scale", Matrix::Constant(1, output_dim, 0.01))),
      kl_weight_(kl_weight),
      activation_(activation) {
  if (!(kl_weight > 0.0)) throw std::invalid_argument("VariationalDenseLayer: kl_weight must be positive");
}

Var VariationalDenseLayer::forward_sample(Var h, Rng& rng) {
  Tape& t = *h.tape();
  Var w_eps = t.constant(rng.standard_normal(output_dim(), input_dim()));
  Var b_eps = t.constant(rng.standard_normal(1, output_dim()));
  Var w = ad::add(t.param(weight_mean_), ad::multiply(t.param(weight_scale_), w_eps));
  Var b = ad::add(t.param(bias_mean_), ad::multiply(t.param(bias_scale_), b_eps));
  return apply_activation(affine(h, w, b), activation_);
}

Var VariationalDenseLayer::forward_mean(Var h) {
  Tape& t = *h.tape();
  return apply_activation(affine(h, t.param(weight_mean_), t.param(bias_mean_)), activation_);
}

Var VariationalDenseLayer::kl(Tape& tape) {
  // ½(σ² + μ² − 1 − ln σ²) per entry.
  auto term = [&tape](Parameter& mean, Parameter& scale) {
    Var mu = tape.param(mean);
    Var sigma = tape.param(scale);
    Var var = ad::square(sigma);
    Var inner = ad::subtract(ad::add(var, ad::square(mu)), ad::log(var));
    return ad::scale(ad::shift(inner, -1.0), 0.5);
  };
  return ad::add(ad::sum(term(weight_mean_, weight_scale_)), ad::sum(term(bias_mean_, bias_scale_)));
}

double VariationalDenseLayer::kl() {
  Tape t;
  return kl(t).scalar();
}

void VariationalDenseLayer::set_name_prefix(const std::string& prefix) {
  weight_mean_.set_name(prefix + "W_mean");
  weight_scale_.set_name(prefix + "W_scale");
  bias_mean_.set_name(prefix + "b_mean");
  bias_scale_.set_name(prefix + "b_scale");
}

GaussianHead::Decoded GaussianHead::decode(Var raw) const {
  if (raw.cols() != 2) {
    throw DimensionMismatch("GaussianHead: expected 2 input columns, got " + std::to_string(raw.cols()));
  }
  Var mean = ad::slice_cols(raw, 0, 1);
  Var std = ad::shift(ad::softplus(ad::slice_cols(raw, 1, 1)), kHeadStdFloor);
  return Decoded{mean, std};
}

Var GaussianHead::negative_loglik(Var raw, Var y) const {
  Decoded d = decode(raw);
  if (y.rows() != raw.rows() || y.cols() != 1) throw DimensionMismatch("GaussianHead: targets must be N x 1");
  // ½ln(2π) + ln σ + ½((y − μ)/σ)²
  Var z = ad::divide(ad::subtract(y, d.mean), d.std);
  Var per_point = ad::add(ad::log(d.std), ad::scale(ad::square(z), 0.5));
  return ad::shift(ad::mean(per_point), 0.5 * kLogTwoPi);
}

double GaussianHead::negative_loglik(const Matrix& raw, const Matrix& y) const {
  Tape t;
  return negative_loglik(t.constant(raw), t.constant(y)).scalar();
}

GaussianLikelihood::GaussianLikelihood(double variance)
    : variance_(Parameter::positive("likelihood.variance", variance)) {}

Var GaussianLikelihood::variational_expectation(const MarginalVars& marginals, Var y) {
  Tape& t = *y.tape();
  if (marginals.mean.cols() != 1) throw DimensionMismatch("variational_expectation: expects one latent output");
  if (y.rows() != marginals.mean.rows() || y.cols() != 1) {
    throw DimensionMismatch("variational_expectation: targets must be N x 1 matching the marginals");
  }
  const double n = static_cast<double>(y.rows());
  Var s2 = t.param(variance_);
  // Σ_n [−½ln(2πσ²) − ((y_n − m_n)² + v_n) / (2σ²)]
  Var sq = ad::add(ad::square(ad::subtract(y, marginals.mean)), marginals.variance);
  Var quad = ad::divide(ad::sum(sq), ad::scale(s2, 2.0));
  Var norm = ad::scale(ad::shift(ad::log(s2), kLogTwoPi), -0.5 * n);
  return ad::subtract(norm, quad);
}

double GaussianLikelihood::variational_expectation(const GaussianMarginals& marginals, const Matrix& y) {
  Tape t;
  MarginalVars m{t.constant(marginals.mean), t.constant(marginals.variance)};
  return variational_expectation(m, t.constant(y)).scalar();
}

}  // namespace hbnn
