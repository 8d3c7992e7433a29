#pragma once

// Randomized gradient checks of every loss, shared by the CLI and tests.
// Instances draw raw Gaussian rows; the checked functions normalize them on
// the tape so the derivative includes the normalization.

#include <cstdint>
#include <string>
#include <vector>

#include "cyclecl/gradcheck.hpp"

namespace cyclecl {

struct GradientCase {
  std::string loss;  // intra_image, intra_video, cycle, combined
  std::uint64_t seed = 0;
  GradcheckReport report;
};

struct GradientSuiteResult {
  std::vector<GradientCase> cases;

  // Worst error per loss name, in first-seen order.
  std::vector<std::pair<std::string, double>> worst_by_loss() const;
  double worst() const;
};

// `trials` random instances per loss, seeds derived from base_seed. Shapes
// stay within n <= 8, d <= 16, |U| <= 32, remainder <= 32.
GradientSuiteResult run_gradient_suite(std::uint64_t base_seed, int trials,
                                       double step = 1e-4);

}  // namespace cyclecl
