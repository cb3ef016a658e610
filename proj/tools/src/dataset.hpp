#pragma once

#include "hbnn/numerics.hpp"

#include <filesystem>

namespace hbnn::app {

/// 1-D regression data; x and y are N x 1.
struct Dataset {
  Matrix x;
  Matrix y;
};

/// Noise standard deviation of the synthetic task at x.
double generator_noise_std(double x);
/// One draw of y at a fixed x.
double generator_target(double x, Rng& rng);
/// x ~ U[0, 1], y = 0.6 sin(4πx) + 0.3x + ε with heteroscedastic ε.
/// Requires n ≥ 10.
Dataset generate_dataset(std::size_t n, std::uint64_t seed);

/// Reads a CSV with header `x,y`.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& data);

}  // namespace hbnn::app
