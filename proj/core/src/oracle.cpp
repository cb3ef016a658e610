#include "hbnn/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hbnn::oracle {

namespace {

double arc_cosine_entry(int order, double variance, double w, double b, const Eigen::RowVectorXd& x1,
                        const Eigen::RowVectorXd& x2) {
  const double s12 = w * x1.dot(x2) + b;
  const double s11 = w * x1.dot(x1) + b;
  const double s22 = w * x2.dot(x2) + b;
  const double norm = std::sqrt(s11 * s22);
  const double theta = std::acos(std::clamp(s12 / norm, -1.0, 1.0));
  if (order == 0) return variance * (1.0 - theta / std::numbers::pi);
  return variance * norm * (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta)) / std::numbers::pi;
}

}  // namespace

Matrix reference_kernel(const Kernel& kernel, const Matrix& x, const Matrix& x2) {
  if (x.cols() != x2.cols()) throw DimensionMismatch("reference_kernel: feature dimensions differ");
  const auto hp = kernel.hyperparameters();
  Matrix k(x.rows(), x2.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x2.rows(); ++j) {
      const Eigen::RowVectorXd a = x.row(i);
      const Eigen::RowVectorXd b = x2.row(j);
      switch (kernel.kind()) {
        case KernelKind::squared_exponential: {
          const double ell = hp.at("lengthscale");
          k(i, j) = hp.at("variance") * std::exp(-(a - b).squaredNorm() / (2.0 * ell * ell));
          break;
        }
        case KernelKind::arc_cosine:
          k(i, j) = arc_cosine_entry(kernel.integer_setting(), hp.at("variance"), hp.at("weight_variance"),
                                     hp.at("bias_variance"), a, b);
          break;
        case KernelKind::polynomial:
          k(i, j) = hp.at("variance") * std::pow(a.dot(b) + hp.at("offset"), kernel.integer_setting());
          break;
      }
    }
  }
  return k;
}

ExactGPResult exact_gp_regression(const Kernel& kernel, const Matrix& x, const Vector& y, double noise,
                                  const Matrix& x_star) {
  if (!(noise > 0.0)) throw std::invalid_argument("exact_gp_regression: noise variance must be positive");
  if (y.size() != x.rows()) throw DimensionMismatch("exact_gp_regression: y length differs from x rows");
  const Index n = x.rows();
  Matrix ky = reference_kernel(kernel, x, x);
  ky.diagonal().array() += noise;
  LowerTriangular l;
  try {
    l = cholesky(ky);
  } catch (const NotPositiveDefinite&) {
    l = jittered_cholesky(ky).factor;
  }
  const Vector alpha = solve_lower_transposed(l, solve_lower(l, y));
  const Matrix k_star = reference_kernel(kernel, x, x_star);  // N x N*
  const Matrix v = solve_lower(l, k_star);

  ExactGPResult r;
  r.mean = k_star.transpose() * alpha;
  r.variance.resize(x_star.rows());
  for (Index i = 0; i < x_star.rows(); ++i) {
    const double prior = reference_kernel(kernel, x_star.row(i), x_star.row(i))(0, 0);
    r.variance(i) = std::max(0.0, prior - v.col(i).squaredNorm());
  }
  r.log_marginal_likelihood = -0.5 * y.dot(alpha) - 0.5 * log_det_from_chol(l) -
                              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  return r;
}

MonteCarloEstimate mc_kl(const Sampler& sample_q, const LogDensity& logpdf_q, const LogDensity& logpdf_p,
                         std::size_t n_samples, Rng& rng) {
  if (n_samples < 2) throw std::invalid_argument("mc_kl: need at least two samples");
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const Vector x = sample_q(rng);
    const double d = logpdf_q(x) - logpdf_p(x);
    // Welford update.
    const double delta = d - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (d - mean);
  }
  const double var = m2 / static_cast<double>(n_samples - 1);
  return MonteCarloEstimate{mean, std::sqrt(var / static_cast<double>(n_samples))};
}

double gaussian_logpdf(const Vector& x, const Vector& mean, const Matrix& cov) {
  const LowerTriangular l = cholesky(cov);
  const Vector z = solve_lower(l, x - mean);
  return -0.5 * z.squaredNorm() - 0.5 * log_det_from_chol(l) -
         0.5 * static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi);
}

Sampler gaussian_sampler(const Vector& mean, const Matrix& cov) {
  const Matrix l = cholesky(cov).matrix();
  return [mean, l](Rng& rng) -> Vector { return mean + l * rng.standard_normal(mean.size(), 1); };
}

QuadratureRule gauss_hermite_rule(std::size_t nodes) {
  if (nodes < 1) throw std::invalid_argument("gauss_hermite_rule: need at least one node");
  // Newton iteration on the orthonormal Hermite recurrence; roots are
  // symmetric so only the positive half is searched.
  const int n = static_cast<int>(nodes);
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  QuadratureRule rule{Vector(n), Vector(n)};
  double z = 0.0;
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    } else if (i == 1) {
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes(0);
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes(1);
    } else {
      z = 2.0 * z - rule.nodes(i - 2);
    }
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = pim4;
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    rule.nodes(i) = z;
    rule.nodes(n - 1 - i) = -z;
    rule.weights(i) = 2.0 / (pp * pp);
    rule.weights(n - 1 - i) = rule.weights(i);
  }
  return rule;
}

double gauss_hermite_expectation(const std::function<double(double)>& f, double mean, double variance,
                                 std::size_t nodes) {
  if (!(variance >= 0.0)) throw std::invalid_argument("gauss_hermite_expectation: negative variance");
  const QuadratureRule rule = gauss_hermite_rule(nodes);
  const double scale = std::sqrt(2.0 * variance);
  double total = 0.0;
  for (Index i = 0; i < rule.nodes.size(); ++i) total += rule.weights(i) * f(mean + scale * rule.nodes(i));
  return total / std::sqrt(std::numbers::pi);
}

std::vector<Matrix> finite_diff_grad(const std::function<double()>& loss, std::span<Parameter* const> params,
                                     double step) {
  std::vector<Matrix> grads;
  grads.reserve(params.size());
  for (Parameter* p : params) {
    Matrix g(p->rows(), p->cols());
    for (Index i = 0; i < p->rows(); ++i) {
      for (Index j = 0; j < p->cols(); ++j) {
        const double original = p->unconstrained()(i, j);
        p->unconstrained()(i, j) = original + step;
        const double up = loss();
        p->unconstrained()(i, j) = original - step;
        const double down = loss();
        p->unconstrained()(i, j) = original;
        g(i, j) = (up - down) / (2.0 * step);
      }
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace hbnn::oracle
