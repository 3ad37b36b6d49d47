#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "aman/autodiff.hpp"

namespace aman {

// Builds a scalar loss from parameters bound into the given graph.
using LossFn = std::function<Var(Graph&, const ModelParams&)>;

struct GradCheckOptions {
  Real eps = 1e-4;
  // 0 checks every coordinate; otherwise a seeded sample of this many per tensor.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
  // Test hook: added to every analytic gradient entry before comparison.
  Real corrupt_analytic = 0.0;
};

struct GradCheckResult {
  Real max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
};

// max_i |analytic - numeric| / max(1, |numeric|) with central differences.
GradCheckResult finite_diff_check(const LossFn& f, const ModelParams& params,
                                  const GradCheckOptions& opts = {});

}  // namespace aman
