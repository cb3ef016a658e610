#pragma once

#include "hbnn/model.hpp"

#include <span>

namespace hbnn {

// Losses. Each returns a scalar node; `x` is N x D, `y` is N x 1.

/// −[ (N_train/N)·Σ E_q ln p(y|f) − Σ KL_gp − Σ kl_weight·KL_weights ].
Var negative_elbo(Model& model, Var x, Var y, Rng& rng);
/// Mean head NLL plus Σ kl_weight·KL over variational dense layers.
Var negative_loglik_loss(Model& model, Var x, Var y, Rng& rng);
/// Mean squared residual of the model output. Stochastic hidden layers are
/// sampled from `rng` when given, otherwise run at their means.
Var mse_loss(Model& model, Var x, Var y, Rng* rng = nullptr);
/// Dispatches on model.loss().
Var model_loss(Model& model, Var x, Var y, Rng& rng);

/// Adam with bias-corrected moments.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  /// Applies one update from the gradients currently stored in `params`.
  /// The parameter list must have the same order and shapes on every call.
  void step(std::span<Parameter* const> params);

  double lr() const { return lr_; }
  std::size_t steps() const { return steps_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t steps_ = 0;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
};

struct TrainConfig {
  std::size_t epochs = 500;
  double lr = 0.01;
  std::size_t batch_size = 0;  // 0 means full batch
  std::uint64_t seed = 1;
  std::size_t mc_samples_predict = 256;
};

struct Metrics {
  double rmse = 0.0;
  double nlpd = 0.0;  // +inf when any predictive variance is zero
  double coverage_95 = 0.0;
};

struct Prediction {
  Vector mean;
  Vector variance;
  Vector lo95;
  Vector hi95;
};

struct TrainingReport {
  std::vector<double> loss_trace;  // one entry per epoch
  Metrics final_metrics;           // on the training data
  double seconds = 0.0;
  std::size_t variance_clips = 0;
  double max_jitter = 0.0;
  std::size_t jitter_escalations = 0;
};

/// Runs `epochs` passes of Adam over (x, y). Each epoch's trace entry is the
/// mean loss of its batches, evaluated before the corresponding updates.
/// Deterministic given config.seed. NumericalError is rethrown with the
/// epoch number prepended.
TrainingReport fit(Model& model, const Matrix& x, const Matrix& y, const TrainConfig& config);

/// Predictive moments by Monte Carlo over stochastic hidden layers,
/// combined with the terminal noise model (likelihood variance or head
/// std²). Intervals are mean ± 1.96·sqrt(variance).
Prediction predict(Model& model, const Matrix& x, std::size_t mc_samples, std::uint64_t seed);

/// rmse, mean Gaussian NLPD and coverage of [lo95, hi95].
Metrics metrics(const Prediction& prediction, const Vector& y);

inline constexpr double kZ95 = 1.96;

}  // namespace hbnn
