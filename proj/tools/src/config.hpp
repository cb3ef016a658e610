#pragma once

#include "hbnn/training.hpp"
#include "dataset.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hbnn::app {

/// Invalid user configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LayerType { dense, variational_dense, gp, gaussian_head };

struct KernelSpec {
  std::string name = "squared_exponential";
  /// Continuous hyperparameters plus the integer settings "order"
  /// (arc_cosine) and "degree" (polynomial).
  std::map<std::string, double> settings;
};

struct LayerSpec {
  LayerType type = LayerType::dense;
  Index units = 1;  // dense and variational_dense
  Activation activation = Activation::linear;
  std::optional<double> kl_weight;  // variational_dense; defaults to 1/N
  KernelSpec kernel;                // gp
  Index num_latent = 1;             // gp
  MeanFunction mean_function = MeanFunction::zero;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  LossKind loss = LossKind::mse;
  double likelihood_variance = 1e-3;  // elbo only
  double lr = 1e-3;
};

struct RunConfig {
  std::string preset = "hfbnn";
  std::optional<ModelSpec> custom_model;  // set when the config lists layers
  std::optional<std::string> kernel;
  std::map<std::string, double> kernel_settings;
  std::size_t num_inducing = 20;
  std::size_t epochs = 500;
  std::optional<double> lr;
  std::size_t batch_size = 0;
  std::uint64_t seed = 1;
  std::string data = "gen";
  std::size_t n_data = 200;
  std::uint64_t data_seed = 1;
  std::string out = "out";
  std::size_t mc_samples = 256;
  std::optional<double> likelihood_variance;
};

const std::vector<std::string>& preset_names();
/// Layer list, loss and learning rate of a named preset.
ModelSpec preset_spec(const std::string& name);

/// Applies the preset (or custom layer list) and every override in `config`;
/// throws ConfigError for unknown names or invalid values.
ModelSpec resolve_model_spec(const RunConfig& config);
/// Checks every field; throws ConfigError.
void validate(const RunConfig& config);

/// Overlays the fields present in `j` onto `config`. Unknown keys are
/// rejected.
void apply_json(RunConfig& config, const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);
nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);

/// Generated or loaded training data for a config.
Dataset load_data(const RunConfig& config);

/// Instantiates the layers. Inducing inputs start on an even grid over
/// [x_min, x_max] in every input column.
Model build_model(const ModelSpec& spec, Index input_dim, double x_min, double x_max, std::size_t num_train,
                  std::size_t num_inducing, std::uint64_t seed);

}  // namespace hbnn::app
