#include "hbnn/gradcheck.hpp"

#include "hbnn/oracle.hpp"

#include <cmath>

namespace hbnn {

namespace {

// Fixed random weighting so that every output entry reaches the loss with a
// distinct coefficient.
Var weighted_sum(Var v, std::uint64_t key) {
  Rng rng(key, 99);
  return ad::sum(ad::multiply(v, v.tape()->constant(rng.standard_normal(v.rows(), v.cols()))));
}

Matrix random_lower(Index m, Rng& rng) {
  Matrix l = 0.3 * rng.standard_normal(m, m);
  l = l.triangularView<Eigen::Lower>();
  for (Index i = 0; i < m; ++i) l(i, i) = 0.5 + rng.uniform();
  return l;
}

void randomize_gp(GPLayer& gp, Rng& rng) {
  gp.q_mu().unconstrained() = rng.standard_normal(gp.num_inducing(), gp.num_latent());
  for (Index p = 0; p < gp.num_latent(); ++p) gp.set_q_sqrt(p, random_lower(gp.num_inducing(), rng));
}

void randomize_vdense(VariationalDenseLayer& layer, Rng& rng) {
  auto positive = [&rng](Parameter& p) {
    Matrix v(p.rows(), p.cols());
    for (Index i = 0; i < v.size(); ++i) v(i) = 0.1 + 0.4 * rng.uniform();
    p.set_constrained(v);
  };
  positive(layer.weight_scale());
  positive(layer.bias_scale());
  layer.bias_mean().unconstrained() = 0.3 * rng.standard_normal(1, layer.output_dim());
}

ParameterList concat(std::initializer_list<ParameterList> lists) {
  ParameterList out;
  for (const ParameterList& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

}  // namespace

bool GradcheckReport::passed() const {
  for (const GradcheckEntry& e : entries) {
    if (!e.passed) return false;
  }
  return !entries.empty();
}

double gradient_relative_error(const Matrix& analytic, const Matrix& numeric, double scale) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw DimensionMismatch("gradient_relative_error: shapes differ");
  }
  const double floor = 1e-4 * std::max(1.0, scale);
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic(i);
    const double f = numeric(i);
    const double err = std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
    if (!std::isfinite(err)) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, err);
  }
  return worst;
}

GradcheckEntry check_gradient(std::string component, const std::function<Var(Tape&)>& build,
                              const ParameterList& params, double tolerance) {
  zero_grads(params);
  {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
  }
  std::vector<Matrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad());

  const std::vector<Matrix> numeric = oracle::finite_diff_grad(
      [&build] {
        Tape tape;
        return build(tape).scalar();
      },
      params);

  double scale = 0.0;
  for (const Matrix& f : numeric) {
    if (f.size() > 0) scale = std::max(scale, f.cwiseAbs().maxCoeff());
  }
  GradcheckEntry entry{std::move(component), 0.0, 0, false};
  for (std::size_t i = 0; i < params.size(); ++i) {
    entry.max_rel_error = std::max(entry.max_rel_error, gradient_relative_error(analytic[i], numeric[i], scale));
    entry.entries += static_cast<std::size_t>(numeric[i].size());
  }
  entry.passed = entry.max_rel_error < tolerance;
  return entry;
}

GradcheckReport run_gradcheck(std::uint64_t seed, double tolerance) {
  GradcheckReport report;
  report.tolerance = tolerance;
  Rng rng(seed, 11);
  auto add = [&](GradcheckEntry e) { report.entries.push_back(std::move(e)); };

  // Inputs are parameters too, so gradients into feature extractors are covered.
  Parameter x("x", rng.standard_normal(4, 3));
  Parameter x1("x1", rng.standard_normal(4, 1));

  {
    DenseLayer dense(3, 3, Activation::relu, rng);
    dense.bias().unconstrained() = 0.2 * rng.standard_normal(1, 3);
    add(check_gradient(
        "dense", [&](Tape& t) { return weighted_sum(dense.forward(t.param(x)), 1); },
        concat({dense.parameters(), {&x}}), tolerance));
  }
  {
    VariationalDenseLayer vd(3, 2, 0.25, Activation::relu, rng);
    randomize_vdense(vd, rng);
    add(check_gradient(
        "vdense",
        [&](Tape& t) {
          Rng local(seed, 21);
          return ad::add(weighted_sum(vd.forward_sample(t.param(x), local), 2), ad::scale(vd.kl(t), 0.1));
        },
        concat({vd.parameters(), {&x}}), tolerance));
  }

  const std::vector<std::pair<std::string, Kernel>> kernels = {
      {"kernel.squared_exponential", Kernel::squared_exponential(0.8, 1.3)},
      {"kernel.arc_cosine0", Kernel::arc_cosine(0, 1.2, 0.7, 0.4)},
      {"kernel.arc_cosine1", Kernel::arc_cosine(1, 0.9, 1.1, 0.6)},
      {"kernel.polynomial", Kernel::polynomial(3, 0.7, 0.5)},
  };
  Parameter x2("x2", rng.standard_normal(3, 3));
  for (const auto& [name, prototype] : kernels) {
    Kernel k = prototype;
    add(check_gradient(
        name,
        [&](Tape& t) {
          Var a = t.param(x);
          Var b = t.param(x2);
          Var total = ad::add(weighted_sum(k.matrix(a, a), 3), weighted_sum(k.matrix(a, b), 4));
          return ad::add(total, weighted_sum(k.diag(a), 5));
        },
        concat({k.parameters(), {&x, &x2}}), tolerance));
  }

  {
    Parameter b("b", rng.standard_normal(4, 4));
    Parameter rhs("rhs", rng.standard_normal(4, 2));
    add(check_gradient(
        "linalg",
        [&](Tape& t) {
          Var bv = t.param(b);
          Var a = ad::matmul(bv, ad::transpose(bv));
          a = ad::add_scaled_identity(a, 0.5);
          Var l = ad::cholesky(a);
          Var r = t.param(rhs);
          Var total = ad::add(ad::log_det_from_chol(l), weighted_sum(ad::solve_lower(l, r), 6));
          total = ad::add(total, weighted_sum(ad::solve_lower_transposed(l, r), 7));
          return ad::add(total, weighted_sum(ad::jittered_cholesky(a).factor, 8));
        },
        {&b, &rhs}, tolerance));
  }

  {
    GPLayer gp(Kernel::squared_exponential(1.1, 0.9), rng.standard_normal(3, 3), 2, MeanFunction::zero);
    randomize_gp(gp, rng);
    const ParameterList params = concat({gp.parameters(), {&x}});
    add(check_gradient(
        "gp_layer.marginals",
        [&](Tape& t) {
          MarginalVars m = gp.predict_marginals(t.param(x));
          return ad::add(weighted_sum(m.mean, 9), weighted_sum(m.variance, 10));
        },
        params, tolerance));
    add(check_gradient(
        "gp_layer.sample",
        [&](Tape& t) {
          Rng local(seed, 22);
          return weighted_sum(gp.sample(t.param(x), local), 11);
        },
        params, tolerance));
    add(check_gradient("gp_layer.kl", [&](Tape& t) { return gp.kl_to_prior(t); }, gp.parameters(), tolerance));
  }
  {
    GPLayer gp(Kernel::squared_exponential(0.7, 1.4), rng.standard_normal(3, 3), 3, MeanFunction::identity);
    randomize_gp(gp, rng);
    add(check_gradient(
        "gp_layer.identity_mean",
        [&](Tape& t) {
          MarginalVars m = gp.predict_marginals(t.param(x));
          return ad::add(weighted_sum(m.mean, 12), gp.kl_to_prior(t));
        },
        concat({gp.parameters(), {&x}}), tolerance));
  }
  {
    GaussianLikelihood lik(0.3);
    Parameter mean("mean", rng.standard_normal(4, 1));
    Parameter var = Parameter::positive("var", Matrix::Constant(4, 1, 0.4));
    const Matrix y = rng.standard_normal(4, 1);
    add(check_gradient(
        "likelihood.variational_expectation",
        [&](Tape& t) { return lik.variational_expectation(MarginalVars{t.param(mean), t.param(var)}, t.constant(y)); },
        concat({lik.parameters(), {&mean, &var}}), tolerance));
  }

  const Matrix xs = rng.standard_normal(4, 1);
  const Matrix ys = rng.standard_normal(4, 1);
  auto loss_entry = [&](std::string name, Model& model) {
    add(check_gradient(
        std::move(name),
        [&](Tape& t) {
          Rng local(seed, 23);
          return model_loss(model, t.constant(xs), t.constant(ys), local);
        },
        model.parameters(), tolerance));
  };
  {
    std::vector<Layer> layers;
    layers.emplace_back(DenseLayer(1, 3, Activation::relu, rng));
    layers.emplace_back(GPLayer(Kernel::squared_exponential(), rng.standard_normal(2, 3), 1));
    Model model(std::move(layers), LossKind::elbo, 10, GaussianLikelihood(0.2));
    randomize_gp(std::get<GPLayer>(model.layers()[1]), rng);
    loss_entry("loss.elbo", model);
  }
  {
    std::vector<Layer> layers;
    layers.emplace_back(DenseLayer(1, 2, Activation::linear, rng));
    layers.emplace_back(GPLayer(Kernel::squared_exponential(), rng.standard_normal(2, 2), 2, MeanFunction::identity));
    layers.emplace_back(GPLayer(Kernel::squared_exponential(), rng.standard_normal(2, 2), 1));
    Model model(std::move(layers), LossKind::elbo, 10, GaussianLikelihood(0.2));
    randomize_gp(std::get<GPLayer>(model.layers()[1]), rng);
    randomize_gp(std::get<GPLayer>(model.layers()[2]), rng);
    loss_entry("loss.elbo_deep", model);
  }
  {
    std::vector<Layer> layers;
    layers.emplace_back(DenseLayer(1, 3, Activation::relu, rng));
    layers.emplace_back(VariationalDenseLayer(3, 2, 0.1, Activation::linear, rng));
    layers.emplace_back(GaussianHead{});
    Model model(std::move(layers), LossKind::nll, 10);
    randomize_vdense(std::get<VariationalDenseLayer>(model.layers()[1]), rng);
    loss_entry("loss.nll", model);
  }
  {
    std::vector<Layer> layers;
    layers.emplace_back(DenseLayer(1, 3, Activation::relu, rng));
    layers.emplace_back(DenseLayer(3, 1, Activation::linear, rng));
    Model model(std::move(layers), LossKind::mse, 10);
    loss_entry("loss.mse", model);
  }
  return report;
}

}  // namespace hbnn
