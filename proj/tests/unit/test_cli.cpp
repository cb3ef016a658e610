#include "commands.hpp"
#include "config.hpp"
#include "csv.hpp"
#include "dataset.hpp"
#include "../support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>

namespace hbnn::app {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using test_support::read_file;
using test_support::scratch_dir;

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(HBNN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

TEST(Csv, FormatDoubleRoundTrips) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.standard_normal() * std::pow(10.0, rng.uniform(-300.0, 300.0));
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(parse_double(format_double(std::numeric_limits<double>::denorm_min())),
            std::numeric_limits<double>::denorm_min());
  EXPECT_THROW(parse_double("1.5x"), std::invalid_argument);
  EXPECT_THROW(parse_double(""), std::invalid_argument);
}

TEST(Csv, TableRoundTrip) {
  const fs::path dir = scratch_dir("csv_round_trip");
  const CsvTable t{{"a", "b", "c"}, {{1.0, -2.5, 1e-17}, {0.1, 3.0, -0.0}}};
  write_csv(dir / "t.csv", t);
  const CsvTable back = read_csv(dir / "t.csv");
  EXPECT_EQ(back.header, t.header);
  EXPECT_EQ(back.rows, t.rows);
}

TEST(Csv, MalformedInputRejected) {
  const fs::path dir = scratch_dir("csv_malformed");
  std::ofstream(dir / "short.csv") << "x,y\n1,2\n3\n";
  EXPECT_THROW(read_csv(dir / "short.csv"), std::invalid_argument);
  std::ofstream(dir / "text.csv") << "x,y\n1,abc\n";
  EXPECT_THROW(read_csv(dir / "text.csv"), std::invalid_argument);
  EXPECT_THROW(read_csv(dir / "missing.csv"), std::runtime_error);
}

TEST(Dataset, GeneratedShapeAndRange) {
  const Dataset d = generate_dataset(200, 1);
  ASSERT_EQ(d.x.rows(), 200);
  EXPECT_GE(d.x.minCoeff(), 0.0);
  EXPECT_LE(d.x.maxCoeff(), 1.0);
  EXPECT_THROW(generate_dataset(5, 1), std::invalid_argument);
}

TEST(Dataset, NoiseAtZero) {
  Rng rng(11);
  const int n = 10000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double y = generator_target(0.0, rng);
    sum += y;
    sum_sq += y * y;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sum_sq / n - mean * mean);
  EXPECT_GE(sd, 0.045);
  EXPECT_LE(sd, 0.055);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = scratch_dir("dataset_round_trip");
  const Dataset d = generate_dataset(30, 4);
  save_dataset(dir / "d.csv", d);
  const Dataset back = load_dataset(dir / "d.csv");
  EXPECT_EQ(back.x, d.x);
  EXPECT_EQ(back.y, d.y);
}

TEST(Presets, LayerLists) {
  const auto types = [](const ModelSpec& s) {
    std::vector<LayerType> t;
    for (const LayerSpec& l : s.layers) t.push_back(l.type);
    return t;
  };
  using enum LayerType;
  EXPECT_EQ(types(preset_spec("dnn")), (std::vector<LayerType>{dense, dense, dense}));
  EXPECT_EQ(types(preset_spec("hbnn-replace")),
            (std::vector<LayerType>{dense, dense, variational_dense, gaussian_head}));
  EXPECT_EQ(types(preset_spec("hbnn-append")),
            (std::vector<LayerType>{dense, dense, dense, variational_dense, gaussian_head}));
  EXPECT_EQ(types(preset_spec("hfbnn")), (std::vector<LayerType>{dense, dense, dense, gp}));
  EXPECT_EQ(types(preset_spec("hfbnn-deep")), (std::vector<LayerType>{dense, dense, dense, gp, gp}));
  EXPECT_EQ(preset_spec("hfbnn-arccosine").layers.back().kernel.name, "arc_cosine");
  EXPECT_EQ(preset_spec("hfbnn").layers.back().kernel.name, "squared_exponential");

  const ModelSpec dnn = preset_spec("dnn");
  EXPECT_EQ(dnn.layers[0].units, 100);
  EXPECT_EQ(dnn.layers[0].activation, Activation::relu);
  EXPECT_EQ(dnn.layers[2].units, 1);
  EXPECT_EQ(dnn.layers[2].activation, Activation::linear);
  EXPECT_EQ(dnn.loss, LossKind::mse);
  EXPECT_EQ(preset_spec("hbnn-replace").loss, LossKind::nll);
  EXPECT_EQ(preset_spec("hbnn-replace").layers[2].units, 2);
  EXPECT_EQ(preset_spec("hfbnn").loss, LossKind::elbo);
  EXPECT_EQ(preset_spec("hfbnn").likelihood_variance, 1e-3);
  EXPECT_THROW(preset_spec("bnn"), ConfigError);
}

TEST(Presets, DeepGPLayersAreIndependent) {
  RunConfig c;
  c.preset = "hfbnn-deep";
  Model m = build_model(resolve_model_spec(c), 1, 0.0, 1.0, 20, 5, 1);
  EXPECT_EQ(m.num_gp_layers(), 2u);
  std::set<std::string> names;
  std::set<const Parameter*> seen;
  for (Parameter* p : m.parameters()) {
    EXPECT_TRUE(names.insert(p->name()).second) << p->name();
    EXPECT_TRUE(seen.insert(p).second) << p->name();
  }
  EXPECT_TRUE(names.contains("layer3.q_mu"));
  EXPECT_TRUE(names.contains("layer4.q_mu"));
  EXPECT_TRUE(names.contains("layer3.kernel.lengthscale"));
  EXPECT_TRUE(names.contains("layer4.kernel.lengthscale"));
}

TEST(Config, KernelOverride) {
  RunConfig c;
  c.kernel = "polynomial";
  EXPECT_EQ(resolve_model_spec(c).layers.back().kernel.name, "polynomial");
  c.kernel = "rbf";
  EXPECT_THROW(resolve_model_spec(c), ConfigError);
}

TEST(Config, JsonOverlay) {
  RunConfig c;
  apply_json(c, json{{"preset", "dnn"}, {"epochs", 7}, {"lr", 0.5}});
  EXPECT_EQ(c.preset, "dnn");
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(resolve_model_spec(c).lr, 0.5);
  EXPECT_THROW(apply_json(c, json{{"epoch", 3}}), ConfigError);
  EXPECT_THROW(apply_json(c, json{{"epochs", "three"}}), ConfigError);
  EXPECT_THROW(apply_json(c, json::array()), ConfigError);
}

TEST(Config, CustomLayersRoundTrip) {
  const ModelSpec s = preset_spec("hfbnn-deep");
  const ModelSpec back = model_spec_from_json(to_json(s));
  ASSERT_EQ(back.layers.size(), s.layers.size());
  EXPECT_EQ(back.loss, s.loss);
  EXPECT_EQ(to_json(back), to_json(s));
}

TEST(Config, Validation) {
  RunConfig c;
  EXPECT_NO_THROW(validate(c));
  c.mc_samples = 0;
  EXPECT_THROW(validate(c), ConfigError);
  c = RunConfig{};
  c.num_inducing = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Grid, ParseAndDefault) {
  const Grid g = parse_grid("-1,2,4");
  EXPECT_EQ(g.min, -1.0);
  EXPECT_EQ(g.max, 2.0);
  EXPECT_EQ(g.count, 4u);
  EXPECT_EQ(grid_points(g).col(0), (Vector(4) << -1.0, 0.0, 1.0, 2.0).finished());
  EXPECT_THROW(parse_grid("1,2"), ConfigError);
  EXPECT_THROW(parse_grid("a,2,3"), ConfigError);
  const Grid d = default_grid(0.0, 1.0);
  EXPECT_EQ(d.min, -0.5);
  EXPECT_EQ(d.max, 1.5);
  EXPECT_EQ(d.count, 200u);
}

TEST(CliProcess, GenerateDataDeterministic) {
  const fs::path dir = scratch_dir("cli_generate");
  ASSERT_EQ(run("generate-data --n 200 --seed 1 --out " + (dir / "a.csv").string(), dir / "log"), 0);
  ASSERT_EQ(run("generate-data --n 200 --seed 1 --out " + (dir / "b.csv").string(), dir / "log"), 0);
  const std::string a = read_file(dir / "a.csv");
  EXPECT_EQ(a, read_file(dir / "b.csv"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 201);
  EXPECT_EQ(a.substr(0, 4), "x,y\n");
  const CsvTable t = read_csv(dir / "a.csv");
  EXPECT_EQ(t.rows.size(), 200u);
  EXPECT_EQ(run("generate-data --n 5 --seed 1 --out " + (dir / "c.csv").string(), dir / "log"), 2);
}

TEST(CliProcess, ConfigErrorsExitTwo) {
  const fs::path dir = scratch_dir("cli_config_errors");
  EXPECT_EQ(run("train --preset nope --epochs 1 --out " + dir.string(), dir / "log"), 2);
  EXPECT_EQ(run("train --preset hfbnn --kernel rbf --epochs 1 --out " + dir.string(), dir / "log"), 2);
  std::ofstream(dir / "bad.json") << R"({"preset": "dnn", "learning_rate": 0.1})";
  EXPECT_EQ(run("train --config " + (dir / "bad.json").string() + " --out " + dir.string(), dir / "log"), 2);
  EXPECT_EQ(run("train --preset dnn --epochs 1 --data " + (dir / "none.csv").string() + " --out " + dir.string(),
                dir / "log"),
            2);
  EXPECT_EQ(run("predict --out " + (dir / "missing").string(), dir / "log"), 2);
}

TEST(CliProcess, OverflowingDataExitsThree) {
  const fs::path dir = scratch_dir("cli_numerical");
  std::ofstream(dir / "huge.csv") << "x,y\n1e200,0\n-1e200,1\n5e199,0.5\n";
  EXPECT_EQ(run("train --preset dnn --epochs 3 --data " + (dir / "huge.csv").string() + " --out " +
                    (dir / "model").string(),
                dir / "log"),
            3);
}

TEST(CliProcess, TrainThenPredict) {
  const fs::path dir = scratch_dir("cli_train_predict");
  const fs::path model = dir / "model";
  ASSERT_EQ(run("train --preset dnn --epochs 2 --n 40 --seed 3 --out " + model.string(), dir / "log"), 0)
      << read_file(dir / "log");
  const json summary = read_json(model / "model_summary.json");
  EXPECT_EQ(summary.at("preset"), "dnn");
  EXPECT_TRUE(summary.at("metrics").contains("rmse"));
  const std::string trace = read_file(model / "loss_trace.csv");
  EXPECT_EQ(trace.substr(0, 11), "epoch,loss\n");
  EXPECT_EQ(read_csv(model / "loss_trace.csv").rows.size(), 2u);

  ASSERT_EQ(run("predict --out " + model.string() + " --grid -0.5,1.5,25", dir / "log"), 0) << read_file(dir / "log");
  const CsvTable p = read_csv(model / "predictions.csv");
  EXPECT_EQ(p.header, (std::vector<std::string>{"x", "pred_mean", "pred_var", "lo95", "hi95"}));
  ASSERT_EQ(p.rows.size(), 25u);
  for (const auto& r : p.rows) {
    EXPECT_EQ(r[2], 0.0);
    EXPECT_LE(r[3], r[1]);
    EXPECT_LE(r[1], r[4]);
  }

  ASSERT_EQ(run("predict --out " + model.string() + " --grid 0,1,0", dir / "log"), 0);
  EXPECT_EQ(read_file(model / "predictions.csv"), "x,pred_mean,pred_var,lo95,hi95\n");
}

TEST(CliProcess, FlagsOverrideConfigFile) {
  const fs::path dir = scratch_dir("cli_override");
  std::ofstream(dir / "c.json") << R"({"preset": "dnn", "epochs": 50, "n_data": 30})";
  ASSERT_EQ(run("train --config " + (dir / "c.json").string() + " --epochs 2 --out " + (dir / "m").string(),
                dir / "log"),
            0)
      << read_file(dir / "log");
  EXPECT_EQ(read_csv(dir / "m" / "loss_trace.csv").rows.size(), 2u);
  EXPECT_EQ(read_json(dir / "m" / "model_summary.json").at("data").at("n_train"), 30);
}

TEST(CliProcess, CompareWritesRequestedPresets) {
  const fs::path dir = scratch_dir("cli_compare");
  ASSERT_EQ(run("compare --presets dnn,hfbnn --epochs 2 --n 40 --mc-samples 8 --out " + dir.string(), dir / "log"),
            0)
      << read_file(dir / "log");
  const json c = read_json(dir / "comparison.json");
  std::set<std::string> keys;
  for (const auto& [k, v] : c.items()) {
    keys.insert(k);
    for (const char* field : {"rmse", "nlpd", "coverage_95", "final_loss", "seconds"}) {
      EXPECT_TRUE(v.contains(field)) << k << " " << field;
    }
  }
  EXPECT_EQ(keys, (std::set<std::string>{"dnn", "hfbnn"}));
  for (const char* preset : {"dnn", "hfbnn"}) {
    for (const char* file : {"loss_trace.csv", "predictions.csv"}) {
      EXPECT_NO_THROW(read_csv(dir / preset / file)) << preset << "/" << file;
    }
  }
}

TEST(CliProcess, Gradcheck) {
  const fs::path dir = scratch_dir("cli_gradcheck");
  ASSERT_EQ(run("gradcheck --seed 1", dir / "log"), 0) << read_file(dir / "log");
  const std::string report = read_file(dir / "log");
  EXPECT_NE(report.find("gradcheck passed"), std::string::npos);
  std::size_t components = 0;
  for (std::size_t pos = report.find("entries="); pos != std::string::npos; pos = report.find("entries=", pos + 1)) {
    ++components;
  }
  EXPECT_GE(components, 6u);
  EXPECT_NE(run("gradcheck --seed 1 --inject-fault cholesky", dir / "log"), 0);
}

}  // namespace
}  // namespace hbnn::app
