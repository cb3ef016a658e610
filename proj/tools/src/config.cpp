#include "config.hpp"

#include <fstream>

namespace hbnn::app {

using nlohmann::json;

namespace {

constexpr std::uint64_t kInitStream = 0;

LayerSpec dense(Index units, Activation a) {
  LayerSpec s;
  s.type = LayerType::dense;
  s.units = units;
  s.activation = a;
  return s;
}

LayerSpec vdense(Index units) {
  LayerSpec s;
  s.type = LayerType::variational_dense;
  s.units = units;
  return s;
}

LayerSpec gp(const std::string& kernel) {
  LayerSpec s;
  s.type = LayerType::gp;
  s.kernel.name = kernel;
  if (kernel == "arc_cosine") s.kernel.settings["order"] = 0;
  return s;
}

LayerSpec head() {
  LayerSpec s;
  s.type = LayerType::gaussian_head;
  return s;
}

std::string_view layer_type_name(LayerType t) {
  switch (t) {
    case LayerType::dense: return "dense";
    case LayerType::variational_dense: return "variational_dense";
    case LayerType::gp: return "gp";
    case LayerType::gaussian_head: return "gaussian_head";
  }
  return "unknown";
}

LayerType parse_layer_type(const std::string& s) {
  if (s == "dense") return LayerType::dense;
  if (s == "variational_dense") return LayerType::variational_dense;
  if (s == "gp") return LayerType::gp;
  if (s == "gaussian_head") return LayerType::gaussian_head;
  throw ConfigError("unknown layer type '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "nll") return LossKind::nll;
  if (s == "elbo") return LossKind::elbo;
  throw ConfigError("unknown loss '" + s + "'");
}

MeanFunction parse_mean(const std::string& s) {
  if (s == "zero") return MeanFunction::zero;
  if (s == "identity") return MeanFunction::identity;
  throw ConfigError("unknown mean function '" + s + "'");
}

void check_kernel_name(const std::string& name) {
  try {
    parse_kernel_name(name);
  } catch (const std::invalid_argument&) {
    throw ConfigError("unknown kernel '" + name + "'");
  }
}

Kernel make_kernel(const KernelSpec& spec) {
  const KernelKind kind = parse_kernel_name(spec.name);
  auto integer = [&](const char* key, int fallback) {
    auto it = spec.settings.find(key);
    return it == spec.settings.end() ? fallback : static_cast<int>(it->second);
  };
  Kernel k = kind == KernelKind::arc_cosine   ? Kernel::arc_cosine(integer("order", 0))
             : kind == KernelKind::polynomial ? Kernel::polynomial(integer("degree", 3))
                                              : Kernel::squared_exponential();
  for (const auto& [key, value] : spec.settings) {
    if (key == "order" || key == "degree") continue;
    k.set_hyperparameter(key, value);
  }
  return k;
}

template <class T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::map<std::string, double> settings_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("kernel settings must be an object");
  std::map<std::string, double> out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) throw ConfigError("kernel setting '" + k + "' must be a number");
    out[k] = v.get<double>();
  }
  return out;
}

LayerSpec layer_from_json(const json& j) {
  if (!j.is_object() || !j.contains("type")) throw ConfigError("each layer needs a 'type'");
  LayerSpec s;
  s.type = parse_layer_type(get_as<std::string>(j, "type"));
  for (const auto& [key, value] : j.items()) {
    if (key == "type") continue;
    if (key == "units") {
      s.units = get_as<Index>(j, "units");
    } else if (key == "activation") {
      s.activation = parse_activation(get_as<std::string>(j, "activation"));
    } else if (key == "kl_weight") {
      if (!value.is_null()) s.kl_weight = get_as<double>(j, "kl_weight");
    } else if (key == "kernel") {
      s.kernel.name = get_as<std::string>(j, "kernel");
    } else if (key == "kernel_settings") {
      s.kernel.settings = settings_from_json(value);
    } else if (key == "num_latent") {
      s.num_latent = get_as<Index>(j, "num_latent");
    } else if (key == "mean_function") {
      s.mean_function = parse_mean(get_as<std::string>(j, "mean_function"));
    } else {
      throw ConfigError("unknown layer field '" + key + "'");
    }
  }
  return s;
}

json layer_to_json(const LayerSpec& s) {
  json j;
  j["type"] = layer_type_name(s.type);
  switch (s.type) {
    case LayerType::dense:
      j["units"] = s.units;
      j["activation"] = activation_name(s.activation);
      break;
    case LayerType::variational_dense:
      j["units"] = s.units;
      j["activation"] = activation_name(s.activation);
      j["kl_weight"] = s.kl_weight ? json(*s.kl_weight) : json(nullptr);
      break;
    case LayerType::gp:
      j["kernel"] = s.kernel.name;
      j["kernel_settings"] = s.kernel.settings;
      j["num_latent"] = s.num_latent;
      j["mean_function"] = s.mean_function == MeanFunction::zero ? "zero" : "identity";
      break;
    case LayerType::gaussian_head: break;
  }
  return j;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"dnn",   "hbnn-replace", "hbnn-append",
                                                 "hfbnn", "hfbnn-deep",   "hfbnn-arccosine"};
  return names;
}

ModelSpec preset_spec(const std::string& name) {
  ModelSpec s;
  s.layers = {dense(100, Activation::relu), dense(100, Activation::relu)};
  if (name == "dnn") {
    s.layers.push_back(dense(1, Activation::linear));
    s.loss = LossKind::mse;
    s.lr = 1e-3;
  } else if (name == "hbnn-replace" || name == "hbnn-append") {
    if (name == "hbnn-append") s.layers.push_back(dense(1, Activation::linear));
    s.layers.push_back(vdense(2));
    s.layers.push_back(head());
    s.loss = LossKind::nll;
    s.lr = 1e-3;
  } else if (name == "hfbnn" || name == "hfbnn-deep" || name == "hfbnn-arccosine") {
    s.layers.push_back(dense(1, Activation::linear));
    s.layers.push_back(gp(name == "hfbnn-arccosine" ? "arc_cosine" : "squared_exponential"));
    if (name == "hfbnn-deep") s.layers.push_back(gp("squared_exponential"));
    s.loss = LossKind::elbo;
    s.likelihood_variance = 1e-3;
    s.lr = 1e-2;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return s;
}

ModelSpec resolve_model_spec(const RunConfig& config) {
  ModelSpec s = config.custom_model ? *config.custom_model : preset_spec(config.preset);
  for (LayerSpec& l : s.layers) {
    if (l.type != LayerType::gp) continue;
    if (config.kernel && *config.kernel != l.kernel.name) {
      check_kernel_name(*config.kernel);
      l.kernel.name = *config.kernel;
      l.kernel.settings.clear();
    }
    for (const auto& [k, v] : config.kernel_settings) l.kernel.settings[k] = v;
    check_kernel_name(l.kernel.name);
    try {
      make_kernel(l.kernel);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("kernel settings: ") + e.what());
    }
  }
  if (config.lr) s.lr = *config.lr;
  if (config.likelihood_variance) s.likelihood_variance = *config.likelihood_variance;
  return s;
}

void validate(const RunConfig& config) {
  if (!config.custom_model) {
    const auto& names = preset_names();
    if (std::find(names.begin(), names.end(), config.preset) == names.end()) {
      throw ConfigError("unknown preset '" + config.preset + "'");
    }
  }
  if (config.kernel) check_kernel_name(*config.kernel);
  if (config.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (config.lr && !(*config.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (config.num_inducing < 1) throw ConfigError("num_inducing must be >= 1");
  if (config.mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
  if (config.likelihood_variance && !(*config.likelihood_variance > 0.0)) {
    throw ConfigError("likelihood_variance must be > 0");
  }
  if (config.data == "gen" && config.n_data < 10) throw ConfigError("n_data must be >= 10");
  const ModelSpec spec = resolve_model_spec(config);
  for (const LayerSpec& l : spec.layers) {
    if ((l.type == LayerType::dense || l.type == LayerType::variational_dense) && l.units < 1) {
      throw ConfigError("layer units must be >= 1");
    }
    if (l.type == LayerType::gp && l.num_latent < 1) throw ConfigError("num_latent must be >= 1");
    if (l.kl_weight && !(*l.kl_weight >= 0.0)) throw ConfigError("kl_weight must be >= 0");
  }
  try {
    build_model(spec, 1, 0.0, 1.0, 1, 2, 0);
  } catch (const ModelError& e) {
    throw ConfigError(e.what());
  }
}

void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") {
      c.preset = get_as<std::string>(j, "preset");
    } else if (key == "layers") {
      ModelSpec m = c.custom_model.value_or(ModelSpec{});
      if (!value.is_array()) throw ConfigError("'layers' must be an array");
      m.layers.clear();
      for (const json& l : value) m.layers.push_back(layer_from_json(l));
      c.custom_model = m;
      c.preset = "custom";
    } else if (key == "loss") {
      ModelSpec m = c.custom_model.value_or(ModelSpec{});
      m.loss = parse_loss(get_as<std::string>(j, "loss"));
      c.custom_model = m;
    } else if (key == "kernel") {
      c.kernel = get_as<std::string>(j, "kernel");
    } else if (key == "kernel_settings") {
      c.kernel_settings = settings_from_json(value);
    } else if (key == "num_inducing") {
      c.num_inducing = get_as<std::size_t>(j, "num_inducing");
    } else if (key == "epochs") {
      c.epochs = get_as<std::size_t>(j, "epochs");
    } else if (key == "lr") {
      c.lr = get_as<double>(j, "lr");
    } else if (key == "batch_size") {
      c.batch_size = get_as<std::size_t>(j, "batch_size");
    } else if (key == "seed") {
      c.seed = get_as<std::uint64_t>(j, "seed");
    } else if (key == "data") {
      c.data = get_as<std::string>(j, "data");
    } else if (key == "n_data") {
      c.n_data = get_as<std::size_t>(j, "n_data");
    } else if (key == "data_seed") {
      c.data_seed = get_as<std::uint64_t>(j, "data_seed");
    } else if (key == "out") {
      c.out = get_as<std::string>(j, "out");
    } else if (key == "mc_samples") {
      c.mc_samples = get_as<std::size_t>(j, "mc_samples");
    } else if (key == "likelihood_variance") {
      c.likelihood_variance = get_as<double>(j, "likelihood_variance");
    } else {
      throw ConfigError("unknown config field '" + key + "'");
    }
  }
  if (c.custom_model && c.custom_model->layers.empty()) throw ConfigError("'loss' given without 'layers'");
  if (c.custom_model && j.contains("layers") && !j.contains("loss")) {
    throw ConfigError("'layers' requires a 'loss'");
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + ": " + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  return c;
}

json to_json(const RunConfig& c) {
  json j;
  j["preset"] = c.preset;
  if (c.custom_model) {
    json layers = json::array();
    for (const LayerSpec& l : c.custom_model->layers) layers.push_back(layer_to_json(l));
    j["layers"] = layers;
    j["loss"] = loss_name(c.custom_model->loss);
  }
  j["kernel"] = c.kernel ? json(*c.kernel) : json(nullptr);
  j["kernel_settings"] = c.kernel_settings;
  j["num_inducing"] = c.num_inducing;
  j["epochs"] = c.epochs;
  j["lr"] = c.lr ? json(*c.lr) : json(nullptr);
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["data"] = c.data;
  j["n_data"] = c.n_data;
  j["data_seed"] = c.data_seed;
  j["out"] = c.out;
  j["mc_samples"] = c.mc_samples;
  j["likelihood_variance"] = c.likelihood_variance ? json(*c.likelihood_variance) : json(nullptr);
  return j;
}

json to_json(const ModelSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) layers.push_back(layer_to_json(l));
  return json{{"layers", layers},
              {"loss", loss_name(spec.loss)},
              {"likelihood_variance", spec.likelihood_variance},
              {"lr", spec.lr}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  for (const json& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
  s.loss = parse_loss(j.at("loss").get<std::string>());
  s.likelihood_variance = j.at("likelihood_variance").get<double>();
  s.lr = j.at("lr").get<double>();
  return s;
}

Dataset load_data(const RunConfig& config) {
  if (config.data == "gen") return generate_dataset(config.n_data, config.data_seed);
  try {
    return load_dataset(config.data);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

Model build_model(const ModelSpec& spec, Index input_dim, double x_min, double x_max, std::size_t num_train,
                  std::size_t num_inducing, std::uint64_t seed) {
  Rng rng(seed, kInitStream);
  std::vector<Layer> layers;
  Index width = input_dim;
  const Index m = static_cast<Index>(num_inducing);
  for (const LayerSpec& l : spec.layers) {
    switch (l.type) {
      case LayerType::dense:
        layers.emplace_back(DenseLayer(width, l.units, l.activation, rng));
        width = l.units;
        break;
      case LayerType::variational_dense:
        layers.emplace_back(VariationalDenseLayer(
            width, l.units, l.kl_weight.value_or(1.0 / static_cast<double>(num_train)), l.activation, rng));
        width = l.units;
        break;
      case LayerType::gp: {
        Matrix z(m, width);
        for (Index i = 0; i < m; ++i) {
          const double t = m == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(m - 1);
          z.row(i).setConstant(x_min + t * (x_max - x_min));
        }
        layers.emplace_back(GPLayer(make_kernel(l.kernel), z, l.num_latent, l.mean_function));
        width = l.num_latent;
        break;
      }
      case LayerType::gaussian_head:
        layers.emplace_back(GaussianHead{});
        width = 1;
        break;
    }
  }
  std::optional<GaussianLikelihood> likelihood;
  if (spec.loss == LossKind::elbo) likelihood.emplace(spec.likelihood_variance);
  return Model(std::move(layers), spec.loss, num_train, std::move(likelihood));
}

}  // namespace hbnn::app
