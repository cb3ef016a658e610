#pragma once

#include "config.hpp"

#include <filesystem>
#include <iosfwd>

namespace hbnn::app {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

struct Grid {
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

/// Parses "min,max,count"; throws ConfigError.
Grid parse_grid(const std::string& text);
/// [x_min − r/2, x_max + r/2] with r = x_max − x_min, 200 points.
Grid default_grid(double x_min, double x_max);
Matrix grid_points(const Grid& grid);

/// Writes predictions.csv rows for the given inputs (first column is x).
void write_predictions(const std::filesystem::path& path, const Matrix& x, const Prediction& p);

/// Trains one model and writes model_summary.json and loss_trace.csv into
/// `dir`. Returns the summary. Throws ConfigError or NumericalError.
nlohmann::json train_to_directory(const RunConfig& config, const Dataset& data, const std::filesystem::path& dir);

/// Rebuilds a trained model from `dir`/model_summary.json.
struct LoadedModel {
  Model model;
  nlohmann::json summary;
};
LoadedModel load_trained_model(const std::filesystem::path& dir);

int cmd_generate_data(std::size_t n, std::uint64_t seed, const std::string& out_path, std::ostream& log);
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_predict(const std::filesystem::path& model_dir, const std::optional<Grid>& grid, std::size_t mc_samples,
                std::uint64_t seed, std::ostream& log);
int cmd_compare(const RunConfig& base, const std::vector<std::string>& presets, std::ostream& log);
int cmd_gradcheck(std::uint64_t seed, double tolerance, std::ostream& out);

/// Full command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace hbnn::app
