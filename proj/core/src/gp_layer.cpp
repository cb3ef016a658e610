#include "hbnn/gp_layer.hpp"

#include <stdexcept>

namespace hbnn {

namespace {

Matrix raw_from_factor(const Matrix& factor) {
  if (factor.rows() != factor.cols()) throw DimensionMismatch("q_sqrt: factor must be square");
  if (!factor.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().isZero(0.0)) {
    throw std::invalid_argument("q_sqrt: factor must be lower-triangular");
  }
  Matrix raw = factor.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < factor.rows(); ++i) raw(i, i) = softplus_inverse(factor(i, i));
  return raw;
}

}  // namespace

GPLayer::GPLayer(Kernel kernel, const Matrix& inducing_points, Index num_latent,
                 MeanFunction mean_function)
    : kernel_(std::move(kernel)),
      inducing_("inducing_points", inducing_points),
      q_mu_("q_mu", Matrix::Zero(inducing_points.rows(), num_latent)),
      num_latent_(num_latent),
      mean_function_(mean_function) {
  if (inducing_points.rows() < 1) throw std::invalid_argument("GPLayer: need at least one inducing point");
  if (num_latent < 1) throw std::invalid_argument("GPLayer: need at least one latent output");
  if (mean_function == MeanFunction::identity && inducing_points.cols() != num_latent) {
    throw DimensionMismatch("GPLayer: identity mean function needs input width == num_latent");
  }
  const Index m = inducing_points.rows();
  for (Index p = 0; p < num_latent; ++p) {
    q_sqrt_.emplace_back("q_sqrt" + std::to_string(p), Matrix::Identity(m, m));
  }
  reset_variational();
}

void GPLayer::set_q_sqrt(Index p, const Matrix& factor) {
  if (factor.rows() != num_inducing()) throw DimensionMismatch("set_q_sqrt: wrong factor size");
  q_sqrt(p).set_unconstrained(raw_from_factor(factor));
}

Matrix GPLayer::q_sqrt_factor(Index p) const {
  const Matrix& raw = q_sqrt(p).unconstrained();
  Matrix out = raw.triangularView<Eigen::StrictlyLower>();
  for (Index i = 0; i < raw.rows(); ++i) out(i, i) = softplus(raw(i, i));
  return out;
}

Matrix GPLayer::prior_cholesky() {
  Tape t;
  return prior(t).chol.value();
}

Matrix GPLayer::prior_mean() {
  Tape t;
  return prior(t).mean.value();
}

void GPLayer::set_to_prior() {
  Tape t;
  Prior pr = prior(t);
  q_mu_.set_unconstrained(pr.mean.value());
  for (Index p = 0; p < num_latent_; ++p) set_q_sqrt(p, pr.chol.value());
}

void GPLayer::reset_variational() {
  Tape t;
  Prior pr = prior(t);
  q_mu_.set_unconstrained(Matrix::Zero(num_inducing(), num_latent_));
  for (Index p = 0; p < num_latent_; ++p) set_q_sqrt(p, 0.1 * pr.chol.value());
}

GPLayer::Prior GPLayer::prior(Tape& tape) {
  Var z = tape.param(inducing_);
  Var kuu = kernel_.matrix(z, z);
  Var chol = ad::jittered_cholesky(kuu).factor;
  return Prior{z, chol, mean_at(z)};
}

Var GPLayer::mean_at(Var x) {
  if (mean_function_ == MeanFunction::identity) {
    if (x.cols() != num_latent_) throw DimensionMismatch("GPLayer: identity mean needs width == num_latent");
    return x;
  }
  return x.tape()->constant(Matrix::Zero(x.rows(), num_latent_));
}

Var GPLayer::q_sqrt_var(Tape& tape, Index p) { return ad::lower_softplus_diag(tape.param(q_sqrt(p))); }

MarginalVars GPLayer::predict_marginals(Var x) {
  Tape& t = *x.tape();
  if (x.cols() != input_dim()) {
    throw DimensionMismatch("GPLayer: input has " + std::to_string(x.cols()) + " columns, expected " +
                            std::to_string(input_dim()));
  }
  Prior pr = prior(t);
  Var kuf = kernel_.matrix(pr.z, x);
  Var a = ad::solve_lower(pr.chol, kuf);                       // L⁻¹ K_uf
  Var alpha = ad::solve_lower(pr.chol, ad::subtract(t.param(q_mu_), pr.mean));
  Var mean = ad::add(mean_at(x), ad::matmul(ad::transpose(a), alpha));

  Var w = ad::solve_lower_transposed(pr.chol, a);              // K_uu⁻¹ K_uf
  Var prior_var = ad::subtract(kernel_.diag(x), ad::transpose(ad::col_sum(ad::square(a))));
  std::vector<Var> columns;
  columns.reserve(static_cast<std::size_t>(num_latent_));
  for (Index p = 0; p < num_latent_; ++p) {
    Var b = ad::matmul(ad::transpose(q_sqrt_var(t, p)), w);   // L_pᵀ K_uu⁻¹ K_uf
    Var var_p = ad::add(prior_var, ad::transpose(ad::col_sum(ad::square(b))));
    columns.push_back(ad::floor_min(var_p, kVarianceFloor));
  }
  Var variance = num_latent_ == 1 ? columns.front() : ad::concat_cols(columns);
  return MarginalVars{mean, variance};
}

MarginalVars GPLayer::conditional_given_u(Var x, Var u_values) {
  Tape& t = *x.tape();
  if (u_values.rows() != num_inducing() || u_values.cols() != num_latent_) {
    throw DimensionMismatch("conditional_given_u: u must be M x P");
  }
  if (x.cols() != input_dim()) throw DimensionMismatch("conditional_given_u: wrong input width");
  Prior pr = prior(t);
  Var a = ad::solve_lower(pr.chol, kernel_.matrix(pr.z, x));
  Var alpha = ad::solve_lower(pr.chol, ad::subtract(u_values, pr.mean));
  Var mean = ad::add(mean_at(x), ad::matmul(ad::transpose(a), alpha));
  Var var = ad::floor_min(
      ad::subtract(kernel_.diag(x), ad::transpose(ad::col_sum(ad::square(a)))), kVarianceFloor);
  if (num_latent_ > 1) var = ad::multiply(var, t.constant(Matrix::Ones(1, num_latent_)));
  return MarginalVars{mean, var};
}

Var reparameterize(const MarginalVars& marginals, Rng& rng) {
  Tape& t = *marginals.mean.tape();
  Var eps = t.constant(rng.standard_normal(marginals.mean.rows(), marginals.mean.cols()));
  return ad::add(marginals.mean, ad::multiply(ad::sqrt(marginals.variance), eps));
}

Var GPLayer::sample(Var x, Rng& rng) { return reparameterize(predict_marginals(x), rng); }

Var GPLayer::kl_to_prior(Tape& tape) {
  Prior pr = prior(tape);
  const double m = static_cast<double>(num_inducing());
  Var logdet_k = ad::log_det_from_chol(pr.chol);
  Var q_mu = tape.param(q_mu_);
  Var total = tape.constant(0.0);
  for (Index p = 0; p < num_latent_; ++p) {
    Var lp = q_sqrt_var(tape, p);
    Var trace = ad::sum(ad::square(ad::solve_lower(pr.chol, lp)));
    Var diff = ad::subtract(ad::slice_cols(pr.mean, p, 1), ad::slice_cols(q_mu, p, 1));
    Var maha = ad::sum(ad::square(ad::solve_lower(pr.chol, diff)));
    Var inner = ad::add(ad::add(trace, maha), ad::subtract(logdet_k, ad::log_det_from_chol(lp)));
    total = ad::add(total, ad::scale(ad::shift(inner, -m), 0.5));
  }
  return total;
}

GaussianMarginals GPLayer::predict_marginals(const Matrix& x) {
  Tape t;
  MarginalVars m = predict_marginals(t.constant(x));
  return GaussianMarginals{m.mean.value(), m.variance.value()};
}

GaussianMarginals GPLayer::conditional_given_u(const Matrix& x, const Matrix& u_values) {
  Tape t;
  MarginalVars m = conditional_given_u(t.constant(x), t.constant(u_values));
  return GaussianMarginals{m.mean.value(), m.variance.value()};
}

Matrix GPLayer::sample(const Matrix& x, Rng& rng) {
  Tape t;
  return sample(t.constant(x), rng).value();
}

double GPLayer::kl_to_prior() {
  Tape t;
  return kl_to_prior(t).scalar();
}

ParameterList GPLayer::parameters() {
  ParameterList out = kernel_.parameters();
  out.push_back(&inducing_);
  out.push_back(&q_mu_);
  for (Parameter& p : q_sqrt_) out.push_back(&p);
  return out;
}

void GPLayer::set_name_prefix(const std::string& prefix) {
  kernel_.set_name_prefix(prefix + "kernel.");
  inducing_.set_name(prefix + "inducing_points");
  q_mu_.set_name(prefix + "q_mu");
  for (std::size_t p = 0; p < q_sqrt_.size(); ++p) q_sqrt_[p].set_name(prefix + "q_sqrt" + std::to_string(p));
}

}  // namespace hbnn
