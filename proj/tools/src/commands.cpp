#include "commands.hpp"

#include "csv.hpp"
#include "hbnn/gradcheck.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>

namespace hbnn::app {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json metrics_json(const Metrics& m) {
  // JSON has no infinity; an infinite nlpd is written as null.
  return json{{"rmse", m.rmse},
              {"nlpd", std::isfinite(m.nlpd) ? json(m.nlpd) : json(nullptr)},
              {"coverage_95", m.coverage_95}};
}

json hyperparameters_json(Model& model) {
  json out = json::object();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    if (const auto* gp = std::get_if<GPLayer>(&model.layers()[i])) {
      const std::string prefix = "layer" + std::to_string(i) + ".kernel.";
      out[prefix + "name"] = gp->kernel().name();
      if (gp->kernel().kind() != KernelKind::squared_exponential) {
        out[prefix + (gp->kernel().kind() == KernelKind::arc_cosine ? "order" : "degree")] =
            gp->kernel().integer_setting();
      }
      for (const auto& [k, v] : gp->kernel().hyperparameters()) out[prefix + k] = v;
    }
  }
  if (model.likelihood() != nullptr) out["likelihood.variance"] = model.likelihood()->variance();
  return out;
}

json parameters_json(Model& model) {
  json out = json::object();
  for (Parameter* p : model.parameters()) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(p->unconstrained().size()));
    for (Index r = 0; r < p->rows(); ++r) {
      for (Index c = 0; c < p->cols(); ++c) values.push_back(p->unconstrained()(r, c));
    }
    out[p->name()] = json{{"rows", p->rows()}, {"cols", p->cols()}, {"values", values}};
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

template <class F>
int guarded(std::ostream& log, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    log << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace

Grid parse_grid(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) parts.push_back(part);
  if (parts.size() != 3) throw ConfigError("--grid expects min,max,count");
  Grid g;
  try {
    g.min = parse_double(parts[0]);
    g.max = parse_double(parts[1]);
    const double count = parse_double(parts[2]);
    if (count < 0 || count != std::floor(count)) throw std::invalid_argument("count must be a non-negative integer");
    g.count = static_cast<std::size_t>(count);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("--grid: ") + e.what());
  }
  if (!std::isfinite(g.min) || !std::isfinite(g.max) || g.max < g.min) throw ConfigError("--grid: need min <= max");
  return g;
}

Grid default_grid(double x_min, double x_max) {
  const double r = x_max - x_min;
  return Grid{x_min - 0.5 * r, x_max + 0.5 * r, 200};
}

Matrix grid_points(const Grid& g) {
  Matrix x(static_cast<Index>(g.count), 1);
  for (std::size_t i = 0; i < g.count; ++i) {
    const double t = g.count == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(g.count - 1);
    x(static_cast<Index>(i), 0) = g.count == 1 ? g.min : g.min + t * (g.max - g.min);
  }
  return x;
}

void write_predictions(const fs::path& path, const Matrix& x, const Prediction& p) {
  CsvTable t{{"x", "pred_mean", "pred_var", "lo95", "hi95"}, {}};
  for (Index i = 0; i < x.rows(); ++i) t.rows.push_back({x(i, 0), p.mean(i), p.variance(i), p.lo95(i), p.hi95(i)});
  write_csv(path, t);
}

json train_to_directory(const RunConfig& config, const Dataset& data, const fs::path& dir) {
  validate(config);
  const ModelSpec spec = resolve_model_spec(config);
  const double x_min = data.x.minCoeff();
  const double x_max = data.x.maxCoeff();
  const auto n = static_cast<std::size_t>(data.x.rows());
  Model model = build_model(spec, data.x.cols(), x_min, x_max, n, config.num_inducing, config.seed);

  TrainConfig tc;
  tc.epochs = config.epochs;
  tc.lr = spec.lr;
  tc.batch_size = config.batch_size;
  tc.seed = config.seed;
  tc.mc_samples_predict = config.mc_samples;
  const TrainingReport report = fit(model, data.x, data.y, tc);

  ensure_directory(dir);
  CsvTable trace{{"epoch", "loss"}, {}};
  for (std::size_t e = 0; e < report.loss_trace.size(); ++e) {
    trace.rows.push_back({static_cast<double>(e + 1), report.loss_trace[e]});
  }
  write_csv(dir / "loss_trace.csv", trace);

  json summary;
  summary["preset"] = config.preset;
  summary["config"] = to_json(config);
  summary["model"] = to_json(spec);
  summary["hyperparameters"] = hyperparameters_json(model);
  summary["seed"] = config.seed;
  summary["final_loss"] = report.loss_trace.back();
  summary["metrics"] = metrics_json(report.final_metrics);
  summary["seconds"] = report.seconds;
  summary["diagnostics"] = json{{"variance_clips", report.variance_clips},
                                {"max_jitter", report.max_jitter},
                                {"jitter_escalations", report.jitter_escalations}};
  summary["data"] = json{{"source", config.data}, {"n_train", n}, {"x_min", x_min}, {"x_max", x_max}};
  summary["parameters"] = parameters_json(model);
  write_json(dir / "model_summary.json", summary);
  return summary;
}

LoadedModel load_trained_model(const fs::path& dir) {
  const fs::path path = dir / "model_summary.json";
  std::ifstream in(path);
  if (!in) throw ConfigError("missing model artifacts: " + path.string());
  try {
    json summary = json::parse(in);
    const ModelSpec spec = model_spec_from_json(summary.at("model"));
    const json& data = summary.at("data");
    const json& cfg = summary.at("config");
    Model model = build_model(spec, 1, data.at("x_min").get<double>(), data.at("x_max").get<double>(),
                              data.at("n_train").get<std::size_t>(), cfg.at("num_inducing").get<std::size_t>(),
                              summary.at("seed").get<std::uint64_t>());
    const json& params = summary.at("parameters");
    for (Parameter* p : model.parameters()) {
      const json& entry = params.at(p->name());
      const auto rows = entry.at("rows").get<Index>();
      const auto cols = entry.at("cols").get<Index>();
      const auto values = entry.at("values").get<std::vector<double>>();
      if (rows != p->rows() || cols != p->cols() || values.size() != static_cast<std::size_t>(rows * cols)) {
        throw ConfigError("parameter " + p->name() + " has the wrong shape");
      }
      Matrix v(rows, cols);
      for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) v(r, c) = values[static_cast<std::size_t>(r * cols + c)];
      }
      p->set_unconstrained(v);
    }
    return LoadedModel{std::move(model), std::move(summary)};
  } catch (const json::exception& e) {
    throw ConfigError("corrupt model artifacts in " + path.string() + ": " + e.what());
  }
}

int cmd_generate_data(std::size_t n, std::uint64_t seed, const std::string& out_path, std::ostream& log) {
  return guarded(log, [&] {
    if (n < 10) throw ConfigError("--n must be at least 10");
    save_dataset(out_path, generate_dataset(n, seed));
    log << "wrote " << n << " rows to " << out_path << '\n';
    return kExitOk;
  });
}

int cmd_train(const RunConfig& config, std::ostream& log) {
  return guarded(log, [&] {
    validate(config);
    const Dataset data = load_data(config);
    const json summary = train_to_directory(config, data, config.out);
    log << "trained " << config.preset << " for " << config.epochs << " epochs: final loss "
        << format_double(summary["final_loss"].get<double>()) << ", rmse "
        << format_double(summary["metrics"]["rmse"].get<double>()) << " -> " << config.out << '\n';
    return kExitOk;
  });
}

int cmd_predict(const fs::path& model_dir, const std::optional<Grid>& grid, std::size_t mc_samples,
                std::uint64_t seed, std::ostream& log) {
  return guarded(log, [&] {
    if (mc_samples < 1) throw ConfigError("--mc-samples must be >= 1");
    LoadedModel loaded = load_trained_model(model_dir);
    const json& data = loaded.summary.at("data");
    const Grid g = grid.value_or(default_grid(data.at("x_min").get<double>(), data.at("x_max").get<double>()));
    const Matrix x = grid_points(g);
    Prediction p;
    if (x.rows() > 0) {
      p = predict(loaded.model, x, mc_samples, seed);
    }
    write_predictions(model_dir / "predictions.csv", x, p);
    log << "wrote " << g.count << " predictions to " << (model_dir / "predictions.csv").string() << '\n';
    return kExitOk;
  });
}

int cmd_compare(const RunConfig& base, const std::vector<std::string>& presets, std::ostream& log) {
  return guarded(log, [&] {
    if (presets.empty()) throw ConfigError("no presets requested");
    for (const std::string& name : presets) {
      RunConfig c = base;
      c.custom_model.reset();
      c.preset = name;
      validate(c);
    }
    const Dataset data = load_data(base);
    const fs::path root = base.out;
    ensure_directory(root);

    // Presets are independent (own model, own RNG streams, own directory).
    std::vector<std::future<json>> jobs;
    for (const std::string& name : presets) {
      jobs.push_back(std::async(std::launch::async, [&base, &data, &root, name] {
        try {
          RunConfig c = base;
          c.custom_model.reset();
          c.preset = name;
          const fs::path dir = root / name;
          const json summary = train_to_directory(c, data, dir);
          LoadedModel loaded = load_trained_model(dir);
          const Grid g = default_grid(data.x.minCoeff(), data.x.maxCoeff());
          const Matrix x = grid_points(g);
          write_predictions(dir / "predictions.csv", x, predict(loaded.model, x, c.mc_samples, c.seed));
          json entry = summary.at("metrics");
          entry["final_loss"] = summary.at("final_loss");
          entry["seconds"] = summary.at("seconds");
          return entry;
        } catch (const std::exception& e) {
          return json{{"error", e.what()}};
        }
      }));
    }
    json comparison = json::object();
    bool any_failed = false;
    for (std::size_t i = 0; i < presets.size(); ++i) {
      comparison[presets[i]] = jobs[i].get();
      const bool failed = comparison[presets[i]].contains("error");
      any_failed = any_failed || failed;
      log << presets[i] << ": " << comparison[presets[i]].dump() << '\n';
    }
    write_json(root / "comparison.json", comparison);
    log << "wrote " << (root / "comparison.json").string() << '\n';
    return any_failed ? kExitNumerical : kExitOk;
  });
}

int cmd_gradcheck(std::uint64_t seed, double tolerance, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(seed, tolerance);
  std::size_t width = 0;
  for (const auto& e : report.entries) width = std::max(width, e.component.size());
  for (const auto& e : report.entries) {
    std::ostringstream line;
    line << e.component << std::string(width + 2 - e.component.size(), ' ') << "max_rel_error=";
    line.precision(3);
    line << std::scientific << e.max_rel_error << "  entries=" << e.entries << "  " << (e.passed ? "ok" : "FAIL");
    out << line.str() << '\n';
  }
  out << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << tolerance << ", "
      << report.entries.size() << " components)\n";
  return report.passed() ? kExitOk : 1;
}

namespace {

Op parse_op(const std::string& name) {
  for (int i = 0; i <= static_cast<int>(Op::log_det_from_chol); ++i) {
    if (op_name(static_cast<Op>(i)) == name) return static_cast<Op>(i);
  }
  throw ConfigError("unknown op '" + name + "'");
}

// Flags shared by train and compare.
struct RunFlags {
  std::string config_path;
  std::optional<std::string> preset, data, kernel, out;
  std::optional<std::uint64_t> seed, data_seed;
  std::optional<std::size_t> epochs, num_inducing, mc_samples, batch_size, n;
  std::optional<double> lr;

  void attach(CLI::App* cmd, bool with_preset) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    if (with_preset) cmd->add_option("--preset", preset, "Model preset");
    cmd->add_option("--data", data, "'gen' or a CSV file with header x,y");
    cmd->add_option("--seed", seed, "Seed for initialization and training");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--num-inducing", num_inducing, "Inducing points per GP layer");
    cmd->add_option("--kernel", kernel, "squared_exponential, arc_cosine or polynomial");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--mc-samples", mc_samples, "Monte Carlo passes for prediction");
    cmd->add_option("--batch-size", batch_size, "Minibatch size (0 = full batch)");
    cmd->add_option("--n", n, "Size of the generated dataset");
    cmd->add_option("--data-seed", data_seed, "Seed of the generated dataset");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    if (preset) {
      c.preset = *preset;
      c.custom_model.reset();
    }
    if (data) c.data = *data;
    if (kernel) c.kernel = *kernel;
    if (out) c.out = *out;
    if (seed) c.seed = *seed;
    if (data_seed) c.data_seed = *data_seed;
    if (epochs) c.epochs = *epochs;
    if (num_inducing) c.num_inducing = *num_inducing;
    if (mc_samples) c.mc_samples = *mc_samples;
    if (batch_size) c.batch_size = *batch_size;
    if (n) c.n_data = *n;
    if (lr) c.lr = *lr;
    return c;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Hybrid neural network and Gaussian process regression"};
  app.require_subcommand(1);

  std::size_t gen_n = 200;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "data.csv";
  auto* gen = app.add_subcommand("generate-data", "Write the synthetic regression set as CSV");
  gen->add_option("--n", gen_n, "Number of rows")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV path")->capture_default_str();

  RunFlags train_flags;
  auto* train = app.add_subcommand("train", "Train one model");
  train_flags.attach(train, true);

  std::string predict_dir = "out";
  std::string grid_text;
  std::size_t predict_mc = 256;
  std::uint64_t predict_seed = 1;
  auto* pred = app.add_subcommand("predict", "Predict on a grid from a trained model directory");
  pred->add_option("--out", predict_dir, "Directory written by train")->capture_default_str();
  pred->add_option("--grid", grid_text, "min,max,count");
  pred->add_option("--mc-samples", predict_mc, "Monte Carlo passes")->capture_default_str();
  pred->add_option("--seed", predict_seed, "Prediction seed")->capture_default_str();

  RunFlags compare_flags;
  std::string compare_presets;
  auto* compare = app.add_subcommand("compare", "Train every preset on the same data");
  compare_flags.attach(compare, false);
  compare->add_option("--presets", compare_presets, "Comma-separated presets (default: all)");

  std::uint64_t gc_seed = 0;
  double gc_tol = 1e-4;
  std::string fault_op;
  double fault_factor = 1.5;
  auto* gc = app.add_subcommand("gradcheck", "Compare gradients with finite differences");
  gc->add_option("--seed", gc_seed, "Seed for the random instances")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "Maximum relative error")->capture_default_str();
  gc->add_option("--inject-fault", fault_op)->group("");
  gc->add_option("--fault-factor", fault_factor)->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (gen->parsed()) return cmd_generate_data(gen_n, gen_seed, gen_out, std::cerr);
  if (train->parsed()) {
    return guarded(std::cerr, [&] { return cmd_train(train_flags.resolve(), std::cerr); });
  }
  if (pred->parsed()) {
    return guarded(std::cerr, [&] {
      std::optional<Grid> grid;
      if (!grid_text.empty()) grid = parse_grid(grid_text);
      return cmd_predict(predict_dir, grid, predict_mc, predict_seed, std::cerr);
    });
  }
  if (compare->parsed()) {
    return guarded(std::cerr, [&] {
      const std::vector<std::string> presets =
          compare_presets.empty() ? preset_names() : split_list(compare_presets);
      return cmd_compare(compare_flags.resolve(), presets, std::cerr);
    });
  }
  if (gc->parsed()) {
    if (fault_op.empty()) return cmd_gradcheck(gc_seed, gc_tol, std::cout);
    return guarded(std::cerr, [&] {
      testing::ScopedAdjointFault fault(parse_op(fault_op), fault_factor);
      return cmd_gradcheck(gc_seed, gc_tol, std::cout);
    });
  }
  return kExitConfig;
}

}  // namespace hbnn::app
