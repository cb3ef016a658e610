#pragma once

#include "hbnn/training.hpp"

namespace hbnn {

struct GradcheckEntry {
  std::string component;
  double max_rel_error = 0.0;
  std::size_t entries = 0;  // number of parameter entries compared
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 0.0;
  bool passed() const;
};

/// |a − f| / max(|a|, |f|, 1e-4 · max(1, ‖f‖∞)), maximized over entries.
/// The floor keeps entries that are zero up to rounding from dominating.
double gradient_relative_error(const Matrix& analytic, const Matrix& numeric, double scale);

/// Compares tape gradients of `build` against central differences over
/// every entry of `params`. `build` must be deterministic.
GradcheckEntry check_gradient(std::string component, const std::function<Var(Tape&)>& build,
                              const ParameterList& params, double tolerance);

/// Small randomized instances of every layer type, kernel and loss.
GradcheckReport run_gradcheck(std::uint64_t seed = 0, double tolerance = 1e-4);

}  // namespace hbnn
