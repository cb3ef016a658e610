#pragma once

#include "hbnn/nn_layers.hpp"

#include <optional>
#include <variant>

namespace hbnn {

using Layer = std::variant<DenseLayer, VariationalDenseLayer, GPLayer, GaussianHead>;

enum class LossKind { mse, nll, elbo };
enum class ForwardMode { sample, mean };

std::string_view loss_name(LossKind loss);

/// Invalid model composition or a loss that does not fit the model.
class ModelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Output of a forward pass. When the last layer is a GP layer, `value`
/// holds its predictive mean and `variance` its marginal variance; when it
/// is a GaussianHead, `value` holds the raw N x 2 head input.
struct ForwardOutput {
  Var value;
  std::optional<Var> variance;
};

/// Ordered stack of layers plus the terminal noise model and loss.
///
/// Composition rules:
///   elbo  last layer is a single-output GP layer and a GaussianLikelihood is set
///   nll   last layer is a GaussianHead, no likelihood
///   mse   last layer is a DenseLayer, no likelihood
/// A GaussianHead may only appear last, and adjacent widths must agree.
class Model {
 public:
  Model(std::vector<Layer> layers, LossKind loss, std::size_t num_train,
        std::optional<GaussianLikelihood> likelihood = std::nullopt);

  Model(const Model&) = default;
  Model(Model&&) = default;
  Model& operator=(const Model&) = default;
  Model& operator=(Model&&) = default;

  LossKind loss() const { return loss_; }
  std::size_t num_train() const { return num_train_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  GaussianLikelihood* likelihood() { return likelihood_ ? &*likelihood_ : nullptr; }
  Index input_dim() const;

  /// True when some layer other than a terminal GP layer or head draws
  /// random numbers during a sample-mode pass.
  bool has_stochastic_hidden_layers() const;
  bool has_noise_model() const;
  std::size_t num_gp_layers() const;

  ForwardOutput forward(Var x, Rng& rng, ForwardMode mode);

  /// Every trainable parameter; pointers stay valid until the layer vector
  /// is modified or the model is moved.
  ParameterList parameters();

 private:
  void validate() const;
  void assign_names();

  std::vector<Layer> layers_;
  LossKind loss_;
  std::size_t num_train_;
  std::optional<GaussianLikelihood> likelihood_;
};

}  // namespace hbnn
