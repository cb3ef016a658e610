#pragma once

#include "hbnn/gradcheck.hpp"
#include "hbnn/oracle.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace hbnn::test_support {

/// Lower-triangular factor with diagonal in [0.3, 1.3].
inline Matrix random_lower(Index m, Rng& rng, double off_scale = 0.3) {
  Matrix l = off_scale * rng.standard_normal(m, m);
  l = l.triangularView<Eigen::Lower>();
  for (Index i = 0; i < m; ++i) l(i, i) = 0.3 + rng.uniform();
  return l;
}

inline Kernel random_kernel(Rng& rng) {
  const std::uint64_t pick = rng.uniform_index(4);
  Kernel k = pick == 0   ? Kernel::squared_exponential(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0))
             : pick == 1 ? Kernel::arc_cosine(0, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.5))
             : pick == 2 ? Kernel::arc_cosine(1, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.2, 1.5))
                         : Kernel::polynomial(2, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0));
  return k;
}

/// Random q(u) on an existing layer.
inline void randomize_variational(GPLayer& gp, Rng& rng) {
  gp.q_mu().unconstrained() = rng.standard_normal(gp.num_inducing(), gp.num_latent());
  for (Index p = 0; p < gp.num_latent(); ++p) gp.set_q_sqrt(p, random_lower(gp.num_inducing(), rng));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("hbnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace hbnn::test_support
