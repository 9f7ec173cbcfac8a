#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lmpt {

struct GradCheckResult {
  std::string name;
  double error = 0.0;  // max relative error against central differences
  bool pass = false;
};

/// Finite-difference check of every differentiable op, the composite layers,
/// and an end-to-end tiny model (two stages, widths 8/16, 32 points, 3 classes).
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed = 0, double tolerance = 1e-4);

}  // namespace lmpt
