#pragma once

#include "hbnn/autodiff.hpp"

#include <map>
#include <string>
#include <string_view>

namespace hbnn {

enum class KernelKind { squared_exponential, arc_cosine, polynomial };

std::string_view kernel_name(KernelKind kind);
/// Accepts "squared_exponential", "arc_cosine" or "polynomial".
KernelKind parse_kernel_name(std::string_view name);

/// Positive-definite covariance function with trainable hyperparameters.
///
///   squared_exponential  σ² exp(−‖x−x′‖² / (2ℓ²)), one shared lengthscale
///   arc_cosine           Cho–Saul arc-cosine kernel of order 0 or 1 on the
///                        weighted inner product s(x,x′) = w·(x·x′) + b
///   polynomial           σ² (x·x′ + c)^d with fixed integer degree d
///
/// Continuous hyperparameters are softplus-constrained Parameters.
class Kernel {
 public:
  static Kernel squared_exponential(double variance = 1.0, double lengthscale = 1.0);
  static Kernel arc_cosine(int order = 0, double variance = 1.0, double weight_variance = 1.0,
                           double bias_variance = 1.0);
  static Kernel polynomial(int degree = 3, double offset = 1.0, double variance = 1.0);
  /// Kernel of the named kind with default hyperparameters.
  static Kernel from_name(std::string_view name);

  KernelKind kind() const { return kind_; }
  std::string_view name() const { return kernel_name(kind_); }
  /// Arc-cosine order or polynomial degree; 0 for squared exponential.
  int integer_setting() const { return integer_setting_; }

  /// K(X, X2). Passing the same node twice yields an exactly symmetric
  /// matrix with an exact diagonal.
  Var matrix(Var x, Var x2);
  /// k(x_i, x_i) as an N x 1 column.
  Var diag(Var x);

  Matrix matrix(const Matrix& x, const Matrix& x2);
  Matrix matrix(const Matrix& x);
  Vector diag(const Matrix& x);

  ParameterList parameters();
  /// Constrained hyperparameter values by name ("variance", "lengthscale",
  /// "weight_variance", "bias_variance", "offset").
  std::map<std::string, double> hyperparameters() const;
  /// Throws std::invalid_argument for unknown names or non-positive values.
  void set_hyperparameter(std::string_view name, double value);
  double hyperparameter(std::string_view name) const;

  /// Prefixes every hyperparameter Parameter name (e.g. "layer3.kernel.").
  void set_name_prefix(const std::string& prefix);

 private:
  Kernel(KernelKind kind, int integer_setting) : kind_(kind), integer_setting_(integer_setting) {}
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;

  KernelKind kind_;
  int integer_setting_;
  // Ordered by insertion; names are the short hyperparameter names.
  std::vector<std::pair<std::string, Parameter>> params_;
};

}  // namespace hbnn
