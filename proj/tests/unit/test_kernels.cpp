#include "hbnn/kernels.hpp"
#include "hbnn/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

namespace hbnn {
namespace {

Matrix row(std::initializer_list<double> values) {
  Matrix m(1, static_cast<Index>(values.size()));
  Index j = 0;
  for (double v : values) m(0, j++) = v;
  return m;
}

std::vector<Kernel> kernel_zoo() {
  return {Kernel::squared_exponential(1.3, 0.7), Kernel::arc_cosine(0, 1.1, 0.8, 0.4),
          Kernel::arc_cosine(1, 0.9, 1.4, 0.6), Kernel::polynomial(2, 0.5, 1.2), Kernel::polynomial(3, 1.0, 0.7)};
}

TEST(SquaredExponential, Examples) {
  Kernel k = Kernel::squared_exponential(1.0, 1.0);
  EXPECT_NEAR(k.matrix(row({0.3, -1.0}), row({0.3, -1.0}))(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(k.matrix(row({0.0, 0.0}), row({0.6, 0.8}))(0, 0), 0.6065306597126334, 1e-12);
  Kernel k2 = Kernel::squared_exponential(2.5, 0.5);
  EXPECT_NEAR(k2.matrix(row({0.0}), row({0.5}))(0, 0), 2.5 * std::exp(-0.5), 1e-12);
}

TEST(Polynomial, LinearIsInnerProduct) {
  Rng rng(1);
  Kernel k = Kernel::polynomial(1, 1e-300, 1.0);
  const Matrix x = rng.standard_normal(4, 3);
  const Matrix x2 = rng.standard_normal(5, 3);
  EXPECT_TRUE(k.matrix(x, x2).isApprox(x * x2.transpose(), 1e-12));
}

TEST(Polynomial, DiagAtZero) {
  Kernel k = Kernel::polynomial(2, 1.0, 1.0);
  EXPECT_NEAR(k.diag(row({0.0}))(0), 1.0, 1e-15);
}

TEST(ArcCosine, OrderZeroOrthogonalInputs) {
  const Matrix e1 = row({1.0, 0.0});
  const Matrix e2 = row({0.0, 1.0});
  // With the bias term vanishing, θ = π/2 and k = σ²(1 − 1/2).
  Kernel no_bias = Kernel::arc_cosine(0, 1.0, 1.0, 1e-300);
  EXPECT_NEAR(no_bias.matrix(e1, e2)(0, 0), 0.5, 1e-12);
  Kernel scaled = Kernel::arc_cosine(0, 3.0, 1.0, 1e-300);
  EXPECT_NEAR(scaled.matrix(e1, e2)(0, 0), 1.5, 1e-12);
  // With every variance at 1 the bias enters: s = 1, s11 = s22 = 2, θ = π/3.
  Kernel unit = Kernel::arc_cosine(0, 1.0, 1.0, 1.0);
  EXPECT_NEAR(unit.matrix(e1, e2)(0, 0), 2.0 / 3.0, 1e-12);
}

TEST(ArcCosine, OrderOneClosedForm) {
  Kernel k = Kernel::arc_cosine(1, 1.0, 1.0, 1.0);
  const Matrix e1 = row({1.0, 0.0});
  const Matrix e2 = row({0.0, 1.0});
  const double theta = std::numbers::pi / 3.0;
  const double expected = 2.0 * (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta)) / std::numbers::pi;
  EXPECT_NEAR(k.matrix(e1, e2)(0, 0), expected, 1e-12);
  // θ = 0 on the diagonal: k(x, x) = σ² s(x, x).
  EXPECT_NEAR(k.diag(e1)(0), 2.0, 1e-12);
}

TEST(ArcCosine, OrderValidated) {
  EXPECT_THROW(Kernel::arc_cosine(2), std::invalid_argument);
  EXPECT_THROW(Kernel::polynomial(0), std::invalid_argument);
}

TEST(Kernel, MatchesEntrywiseReference) {
  Rng rng(2);
  for (Kernel& k : kernel_zoo()) {
    const Matrix x = rng.standard_normal(5, 2);
    const Matrix x2 = rng.standard_normal(4, 2);
    EXPECT_LT((k.matrix(x, x2) - oracle::reference_kernel(k, x, x2)).cwiseAbs().maxCoeff(), 1e-12) << k.name();
  }
}

TEST(Kernel, SymmetricAndDiagConsistent) {
  Rng rng(3);
  for (Kernel& k : kernel_zoo()) {
    const Matrix x = rng.standard_normal(6, 3);
    const Matrix kxx = k.matrix(x);
    EXPECT_EQ(kxx, kxx.transpose()) << k.name();
    EXPECT_EQ(k.diag(x), kxx.diagonal()) << k.name();
  }
}

TEST(Kernel, PositiveSemidefinite) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    for (Kernel& k : kernel_zoo()) {
      const Index n = 1 + static_cast<Index>(rng.uniform_index(8));
      const Matrix kxx = k.matrix(rng.standard_normal(n, 2));
      const double lambda_min = Eigen::SelfAdjointEigenSolver<Matrix>(kxx).eigenvalues()(0);
      EXPECT_GE(lambda_min, -1e-8) << k.name();
    }
  }
}

TEST(SquaredExponential, Stationary) {
  Rng rng(5);
  Kernel k = Kernel::squared_exponential(1.7, 0.9);
  const Matrix x = rng.standard_normal(6, 2);
  const Matrix shifted = x.rowwise() + row({3.0, -2.0}).row(0);
  EXPECT_LT((k.matrix(x) - k.matrix(shifted)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Kernel, DimensionMismatch) {
  Kernel k = Kernel::squared_exponential();
  EXPECT_THROW(k.matrix(Matrix::Ones(2, 2), Matrix::Ones(2, 3)), DimensionMismatch);
}

TEST(Kernel, DefaultsAndNames) {
  Kernel se = Kernel::from_name("squared_exponential");
  EXPECT_EQ(se.hyperparameter("variance"), 1.0);
  EXPECT_EQ(se.hyperparameter("lengthscale"), 1.0);
  Kernel poly = Kernel::from_name("polynomial");
  EXPECT_EQ(poly.integer_setting(), 3);
  EXPECT_EQ(poly.hyperparameter("offset"), 1.0);
  EXPECT_EQ(Kernel::from_name("arc_cosine").integer_setting(), 0);
  EXPECT_THROW(parse_kernel_name("rbf"), std::invalid_argument);
  EXPECT_EQ(parse_kernel_name(kernel_name(KernelKind::arc_cosine)), KernelKind::arc_cosine);
}

TEST(Kernel, HyperparametersPositive) {
  Kernel k = Kernel::squared_exponential();
  EXPECT_THROW(k.set_hyperparameter("variance", 0.0), std::invalid_argument);
  EXPECT_THROW(k.set_hyperparameter("offset", 1.0), std::invalid_argument);
  k.set_hyperparameter("lengthscale", 0.2);
  EXPECT_NEAR(k.hyperparameter("lengthscale"), 0.2, 1e-14);
  for (Parameter* p : k.parameters()) EXPECT_EQ(p->transform(), Transform::softplus);
}

TEST(Kernel, NamePrefix) {
  Kernel k = Kernel::arc_cosine();
  k.set_name_prefix("layer3.kernel.");
  std::vector<std::string> names;
  for (Parameter* p : k.parameters()) names.push_back(p->name());
  EXPECT_EQ(names, (std::vector<std::string>{"layer3.kernel.variance", "layer3.kernel.weight_variance",
                                             "layer3.kernel.bias_variance"}));
}

TEST(Kernel, TapeAndMatrixPathsAgree) {
  Rng rng(6);
  for (Kernel& k : kernel_zoo()) {
    const Matrix x = rng.standard_normal(4, 2);
    Tape t;
    Var xv = t.constant(x);
    EXPECT_EQ(k.matrix(xv, xv).value(), k.matrix(x)) << k.name();
    EXPECT_EQ(k.diag(xv).value().col(0), k.diag(x)) << k.name();
  }
}

}  // namespace
}  // namespace hbnn
