#include "hbnn/kernels.hpp"

#include <numbers>
#include <stdexcept>

namespace hbnn {

std::string_view kernel_name(KernelKind kind) {
  switch (kind) {
    case KernelKind::squared_exponential: return "squared_exponential";
    case KernelKind::arc_cosine: return "arc_cosine";
    case KernelKind::polynomial: return "polynomial";
  }
  return "unknown";
}

KernelKind parse_kernel_name(std::string_view name) {
  if (name == "squared_exponential") return KernelKind::squared_exponential;
  if (name == "arc_cosine") return KernelKind::arc_cosine;
  if (name == "polynomial") return KernelKind::polynomial;
  throw std::invalid_argument("unknown kernel '" + std::string(name) +
                              "' (expected squared_exponential, arc_cosine or polynomial)");
}

Kernel Kernel::squared_exponential(double variance, double lengthscale) {
  Kernel k(KernelKind::squared_exponential, 0);
  k.params_.emplace_back("variance", Parameter::positive("variance", variance));
  k.params_.emplace_back("lengthscale", Parameter::positive("lengthscale", lengthscale));
  return k;
}

Kernel Kernel::arc_cosine(int order, double variance, double weight_variance, double bias_variance) {
  if (order != 0 && order != 1) throw std::invalid_argument("arc_cosine: order must be 0 or 1");
  Kernel k(KernelKind::arc_cosine, order);
  k.params_.emplace_back("variance", Parameter::positive("variance", variance));
  k.params_.emplace_back("weight_variance", Parameter::positive("weight_variance", weight_variance));
  k.params_.emplace_back("bias_variance", Parameter::positive("bias_variance", bias_variance));
  return k;
}

Kernel Kernel::polynomial(int degree, double offset, double variance) {
  if (degree < 1) throw std::invalid_argument("polynomial: degree must be a positive integer");
  Kernel k(KernelKind::polynomial, degree);
  k.params_.emplace_back("variance", Parameter::positive("variance", variance));
  k.params_.emplace_back("offset", Parameter::positive("offset", offset));
  return k;
}

Kernel Kernel::from_name(std::string_view name) {
  switch (parse_kernel_name(name)) {
    case KernelKind::squared_exponential: return squared_exponential();
    case KernelKind::arc_cosine: return arc_cosine();
    case KernelKind::polynomial: return polynomial();
  }
  throw std::logic_error("unreachable");
}

Parameter& Kernel::get(std::string_view name) {
  for (auto& [key, p] : params_) {
    if (key == name) return p;
  }
  throw std::invalid_argument("kernel " + std::string(kernel_name(kind_)) +
                              " has no hyperparameter '" + std::string(name) + "'");
}

const Parameter& Kernel::get(std::string_view name) const {
  return const_cast<Kernel*>(this)->get(name);
}

Var Kernel::matrix(Var x, Var x2) {
  Tape& t = *x.tape();
  if (x.cols() != x2.cols()) {
    throw DimensionMismatch("kernel_matrix: inputs have " + std::to_string(x.cols()) + " and " +
                            std::to_string(x2.cols()) + " features");
  }
  const bool same = x.id() == x2.id();
  Var variance = t.param(get("variance"));
  Var k;
  switch (kind_) {
    case KernelKind::squared_exponential: {
      Var ell = t.param(get("lengthscale"));
      Var d = ad::squared_distance(x, x2);
      Var scaled = ad::divide(d, ad::scale(ad::square(ell), 2.0));
      k = ad::multiply(variance, ad::exp(ad::negate(scaled)));
      break;
    }
    case KernelKind::arc_cosine: {
      Var w = t.param(get("weight_variance"));
      Var b = t.param(get("bias_variance"));
      Var s = ad::add(ad::multiply(ad::matmul(x, ad::transpose(x2)), w), b);
      Var sx = ad::add(ad::multiply(ad::row_sum(ad::square(x)), w), b);
      Var sx2 = same ? sx : ad::add(ad::multiply(ad::row_sum(ad::square(x2)), w), b);
      Var norm = ad::sqrt(ad::multiply(sx, ad::transpose(sx2)));
      Var cosine = ad::divide(s, norm);
      if (same) cosine = ad::set_diagonal(cosine, 1.0);
      Var theta = ad::acos(cosine);
      if (integer_setting_ == 0) {
        k = ad::multiply(variance, ad::shift(ad::scale(theta, -1.0 / std::numbers::pi), 1.0));
        break;
      }
      // J(θ) = sin θ + (π − θ) cos θ; divided by π last so that J(0)/π is 1.
      Var j = ad::add(ad::sin(theta),
                      ad::multiply(ad::shift(ad::negate(theta), std::numbers::pi), ad::cos(theta)));
      Var j_over_pi = ad::divide(j, t.constant(std::numbers::pi));
      k = ad::multiply(ad::multiply(variance, norm), j_over_pi);
      break;
    }
    case KernelKind::polynomial: {
      Var c = t.param(get("offset"));
      Var inner = ad::matmul(x, ad::transpose(x2));
      k = ad::multiply(variance, ad::pow_int(ad::add(inner, c), integer_setting_));
      break;
    }
  }
  // Summation order differs between (i, j) and (j, i); averaging with the
  // transpose makes K(X, X) exactly symmetric and leaves the diagonal as is.
  return same ? ad::scale(ad::add(k, ad::transpose(k)), 0.5) : k;
}

Var Kernel::diag(Var x) {
  Tape& t = *x.tape();
  Var variance = t.param(get("variance"));
  Var ones = t.constant(Matrix::Ones(x.rows(), 1));
  switch (kind_) {
    case KernelKind::squared_exponential:
      return ad::multiply(ones, variance);
    case KernelKind::arc_cosine: {
      if (integer_setting_ == 0) return ad::multiply(ones, variance);
      Var w = t.param(get("weight_variance"));
      Var b = t.param(get("bias_variance"));
      Var sx = ad::add(ad::multiply(ad::row_sum(ad::square(x)), w), b);
      return ad::multiply(variance, sx);
    }
    case KernelKind::polynomial: {
      // Same arithmetic path as matrix(x, x) so the diagonal agrees exactly.
      Var c = t.param(get("offset"));
      Var inner = ad::diag_part(ad::matmul(x, ad::transpose(x)));
      return ad::multiply(variance, ad::pow_int(ad::add(inner, c), integer_setting_));
    }
  }
  throw std::logic_error("unreachable");
}

Matrix Kernel::matrix(const Matrix& x, const Matrix& x2) {
  Tape t;
  return matrix(t.constant(x), t.constant(x2)).value();
}

Matrix Kernel::matrix(const Matrix& x) {
  Tape t;
  Var xv = t.constant(x);
  return matrix(xv, xv).value();
}

Vector Kernel::diag(const Matrix& x) {
  Tape t;
  return diag(t.constant(x)).value().col(0);
}

ParameterList Kernel::parameters() {
  ParameterList out;
  for (auto& [key, p] : params_) out.push_back(&p);
  return out;
}

std::map<std::string, double> Kernel::hyperparameters() const {
  std::map<std::string, double> out;
  for (const auto& [key, p] : params_) out[key] = p.constrained()(0, 0);
  return out;
}

void Kernel::set_hyperparameter(std::string_view name, double value) {
  if (!(value > 0.0)) {
    throw std::invalid_argument("kernel hyperparameter '" + std::string(name) + "' must be positive");
  }
  get(name).set_constrained(Matrix::Constant(1, 1, value));
}

double Kernel::hyperparameter(std::string_view name) const { return get(name).constrained()(0, 0); }

void Kernel::set_name_prefix(const std::string& prefix) {
  for (auto& [key, p] : params_) p.set_name(prefix + key);
}

}  // namespace hbnn
