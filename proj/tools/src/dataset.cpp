#include "dataset.hpp"

#include "csv.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hbnn::app {

namespace {
constexpr std::uint64_t kDataStream = 5;
}

double generator_noise_std(double x) { return 0.05 + 0.3 * x; }

double generator_target(double x, Rng& rng) {
  return 0.6 * std::sin(4.0 * std::numbers::pi * x) + 0.3 * x + generator_noise_std(x) * rng.standard_normal();
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw std::invalid_argument("generate: n must be at least 10");
  Rng rng(seed, kDataStream);
  Dataset d{Matrix(static_cast<Index>(n), 1), Matrix(static_cast<Index>(n), 1)};
  for (Index i = 0; i < static_cast<Index>(n); ++i) {
    const double x = rng.uniform();
    d.x(i, 0) = x;
    d.y(i, 0) = generator_target(x, rng);
  }
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  if (t.header != std::vector<std::string>{"x", "y"}) {
    throw std::invalid_argument(path.string() + ": expected header 'x,y'");
  }
  if (t.rows.empty()) throw std::invalid_argument(path.string() + ": no data rows");
  Dataset d{Matrix(static_cast<Index>(t.rows.size()), 1), Matrix(static_cast<Index>(t.rows.size()), 1)};
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const double x = t.rows[i][0];
    const double y = t.rows[i][1];
    if (!std::isfinite(x) || !std::isfinite(y)) {
      throw std::invalid_argument(path.string() + ": non-finite value in row " + std::to_string(i + 1));
    }
    d.x(static_cast<Index>(i), 0) = x;
    d.y(static_cast<Index>(i), 0) = y;
  }
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  CsvTable t{{"x", "y"}, {}};
  t.rows.reserve(static_cast<std::size_t>(data.x.rows()));
  for (Index i = 0; i < data.x.rows(); ++i) t.rows.push_back({data.x(i, 0), data.y(i, 0)});
  write_csv(path, t);
}

}  // namespace hbnn::app
