#include "hbnn/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>

namespace hbnn {

namespace {

// Stream ids keep training noise, batch order and prediction noise
// independent of each other for one seed.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kPredictStream = 3;

void require_loss(const Model& model, LossKind expected) {
  if (model.loss() != expected) {
    throw ModelError("model is configured for loss " + std::string(loss_name(model.loss())) + ", not " +
                     std::string(loss_name(expected)));
  }
}

void require_targets(Var x, Var y) {
  if (y.cols() != 1 || y.rows() != x.rows()) {
    throw DimensionMismatch("targets must be N x 1 with N matching the inputs");
  }
}

// Σ kl_weight · KL over variational dense layers, or nullopt when none.
std::optional<Var> weighted_weight_kl(Model& model, Tape& tape) {
  std::optional<Var> total;
  for (Layer& layer : model.layers()) {
    if (auto* v = std::get_if<VariationalDenseLayer>(&layer)) {
      Var term = ad::scale(v->kl(tape), v->kl_weight());
      total = total ? ad::add(*total, term) : term;
    }
  }
  return total;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(static_cast<Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = m.row(static_cast<Index>(idx[i]));
  return out;
}

}  // namespace

Var negative_elbo(Model& model, Var x, Var y, Rng& rng) {
  require_loss(model, LossKind::elbo);
  require_targets(x, y);
  Tape& t = *x.tape();
  ForwardOutput out = model.forward(x, rng, ForwardMode::sample);
  const double data_scale = static_cast<double>(model.num_train()) / static_cast<double>(x.rows());
  Var expectation = model.likelihood()->variational_expectation(MarginalVars{out.value, *out.variance}, y);
  Var objective = ad::scale(expectation, data_scale);
  for (Layer& layer : model.layers()) {
    if (auto* gp = std::get_if<GPLayer>(&layer)) objective = ad::subtract(objective, gp->kl_to_prior(t));
  }
  if (auto kl = weighted_weight_kl(model, t)) objective = ad::subtract(objective, *kl);
  return ad::negate(objective);
}

Var negative_loglik_loss(Model& model, Var x, Var y, Rng& rng) {
  require_loss(model, LossKind::nll);
  require_targets(x, y);
  ForwardOutput out = model.forward(x, rng, ForwardMode::sample);
  Var loss = GaussianHead{}.negative_loglik(out.value, y);
  if (auto kl = weighted_weight_kl(model, *x.tape())) loss = ad::add(loss, *kl);
  return loss;
}

Var mse_loss(Model& model, Var x, Var y, Rng* rng) {
  require_loss(model, LossKind::mse);
  require_targets(x, y);
  Rng fallback(0);
  const ForwardMode mode = rng != nullptr ? ForwardMode::sample : ForwardMode::mean;
  ForwardOutput out = model.forward(x, rng != nullptr ? *rng : fallback, mode);
  return ad::mean(ad::square(ad::subtract(out.value, y)));
}

Var model_loss(Model& model, Var x, Var y, Rng& rng) {
  switch (model.loss()) {
    case LossKind::elbo: return negative_elbo(model, x, y, rng);
    case LossKind::nll: return negative_loglik_loss(model, x, y, rng);
    case LossKind::mse: return mse_loss(model, x, y, &rng);
  }
  throw std::logic_error("unreachable");
}

// ---------------------------------------------------------------------------

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {
  if (!(lr >= 0.0)) throw std::invalid_argument("Adam: learning rate must be non-negative");
}

void Adam::step(std::span<Parameter* const> params) {
  if (steps_ == 0) {
    m_.clear();
    v_.clear();
    for (Parameter* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  } else if (params.size() != m_.size()) {
    throw std::invalid_argument("Adam: parameter list changed between steps");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(beta1_, t);
  const double correction2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    const Matrix& g = p.grad();
    if (g.rows() != m_[i].rows() || g.cols() != m_[i].cols()) {
      throw DimensionMismatch("Adam: parameter " + p.name() + " changed shape");
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix m_hat = m_[i] / correction1;
    const Matrix v_hat = v_[i] / correction2;
    Matrix update = lr_ * m_hat.array() / (v_hat.array().sqrt() + epsilon_);
    p.unconstrained() -= update;
  }
}

// ---------------------------------------------------------------------------

TrainingReport fit(Model& model, const Matrix& x, const Matrix& y, const TrainConfig& config) {
  if (x.rows() == 0) throw std::invalid_argument("fit: empty training data");
  if (y.rows() != x.rows() || y.cols() != 1) throw DimensionMismatch("fit: y must be N x 1 matching x");
  if (config.epochs < 1) throw std::invalid_argument("fit: epochs must be >= 1");
  if (!all_finite(x) || !all_finite(y)) throw std::invalid_argument("fit: training data contains non-finite values");

  const auto start = std::chrono::steady_clock::now();
  TrainingReport report;
  report.loss_trace.reserve(config.epochs);

  const std::size_t n = static_cast<std::size_t>(x.rows());
  const std::size_t batch = (config.batch_size == 0 || config.batch_size >= n) ? n : config.batch_size;
  Rng rng(config.seed, kTrainStream);
  Rng shuffle_rng(config.seed, kShuffleStream);
  Adam adam(config.lr);
  ParameterList params = model.parameters();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    try {
      if (batch < n) {
        for (std::size_t i = n - 1; i > 0; --i) {
          std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.uniform_index(i + 1))]);
        }
      }
      double epoch_loss = 0.0;
      std::size_t num_batches = 0;
      for (std::size_t begin = 0; begin < n; begin += batch) {
        const std::size_t count = std::min(batch, n - begin);
        Tape tape;
        Var xb, yb;
        if (batch == n) {
          xb = tape.constant(x);
          yb = tape.constant(y);
        } else {
          std::span<const std::size_t> idx(order.data() + begin, count);
          xb = tape.constant(gather_rows(x, idx));
          yb = tape.constant(gather_rows(y, idx));
        }
        Var loss = model_loss(model, xb, yb, rng);
        const double value = loss.scalar();
        if (!std::isfinite(value)) throw NumericalError("loss is not finite");
        zero_grads(params);
        tape.backward(loss);
        adam.step(params);
        epoch_loss += value;
        ++num_batches;
        const TapeDiagnostics& d = tape.diagnostics();
        report.variance_clips += d.variance_clips;
        report.max_jitter = std::max(report.max_jitter, d.max_jitter);
        report.jitter_escalations += d.jitter_escalations;
      }
      report.loss_trace.push_back(epoch_loss / static_cast<double>(num_batches));
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite("epoch " + std::to_string(epoch + 1) + ": " + e.what());
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch + 1) + ": " + e.what());
    }
  }

  Prediction train_pred = predict(model, x, config.mc_samples_predict, config.seed);
  report.final_metrics = metrics(train_pred, y.col(0));
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Prediction predict(Model& model, const Matrix& x, std::size_t mc_samples, std::uint64_t seed) {
  const Index n = x.rows();
  // Without stochastic hidden layers every pass is identical, so one pass
  // gives the exact moments.
  const std::size_t passes = model.has_stochastic_hidden_layers() ? std::max<std::size_t>(mc_samples, 1) : 1;
  Rng rng(seed, kPredictStream);
  Matrix means(static_cast<Index>(passes), n);
  Vector noise_sum = Vector::Zero(n);
  const GaussianHead head;
  for (std::size_t s = 0; s < passes; ++s) {
    Tape tape;
    ForwardOutput out = model.forward(tape.constant(x), rng, ForwardMode::sample);
    const Index row = static_cast<Index>(s);
    if (std::holds_alternative<GaussianHead>(model.layers().back())) {
      GaussianHead::Decoded d = head.decode(out.value);
      means.row(row) = d.mean.value().col(0).transpose();
      noise_sum += d.std.value().col(0).array().square().matrix();
    } else if (out.variance) {
      means.row(row) = out.value.value().col(0).transpose();
      Vector v = out.variance->value().col(0);
      if (model.likelihood() != nullptr) v.array() += model.likelihood()->variance();
      noise_sum += v;
    } else {
      means.row(row) = out.value.value().col(0).transpose();
    }
  }
  const double count = static_cast<double>(passes);
  Prediction p;
  p.mean = means.colwise().mean().transpose();
  p.variance = noise_sum / count;
  if (passes > 1) {
    const Matrix centered = means.rowwise() - p.mean.transpose();
    p.variance += (centered.array().square().colwise().sum() / count).matrix().transpose();
  }
  const Vector half_width = kZ95 * p.variance.array().sqrt();
  p.lo95 = p.mean - half_width;
  p.hi95 = p.mean + half_width;
  return p;
}

Metrics metrics(const Prediction& prediction, const Vector& y) {
  const Index n = y.size();
  if (n == 0) throw std::invalid_argument("metrics: empty input");
  if (prediction.mean.size() != n || prediction.variance.size() != n) {
    throw DimensionMismatch("metrics: prediction and target lengths differ");
  }
  Metrics m;
  const Vector residual = y - prediction.mean;
  m.rmse = std::sqrt(residual.squaredNorm() / static_cast<double>(n));
  double nlpd = 0.0;
  std::size_t inside = 0;
  for (Index i = 0; i < n; ++i) {
    const double v = prediction.variance(i);
    const double r = residual(i);
    if (v > 0.0) {
      nlpd += 0.5 * std::log(2.0 * std::numbers::pi * v) + r * r / (2.0 * v);
    } else {
      nlpd = std::numeric_limits<double>::infinity();
    }
    if (prediction.lo95(i) <= y(i) && y(i) <= prediction.hi95(i)) ++inside;
  }
  m.nlpd = nlpd / static_cast<double>(n);
  m.coverage_95 = static_cast<double>(inside) / static_cast<double>(n);
  return m;
}

}  // namespace hbnn
