#ifndef FCT_GRADCHECK_SUITE_HPP
#define FCT_GRADCHECK_SUITE_HPP

// Finite-difference oracle over every differentiable primitive and the
// composite blocks, in f64 on small seeded inputs.

#include <functional>
#include <string>
#include <vector>

#include "fct/grad_check.hpp"

namespace fct {

struct GradcheckCase {
  std::string name;
  GradCheckReport report;
  bool passed = false;
  double seconds = 0.0;
};

/// tiny checks Wide-Focus ablation rows 0, 4 and 9; small checks all ten.
enum class SuiteScale { tiny, small };

struct SuiteOptions {
  std::uint64_t seed = 7;
  SuiteScale scale = SuiteScale::tiny;
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Run only cases whose name contains this substring.
  std::string filter;
  std::function<void(const GradcheckCase&)> on_case;
};

std::vector<GradcheckCase> run_gradcheck_suite(const SuiteOptions& opts);

/// Gradient check of Wide-Focus ablation row `row` (0..9) at 1x16x16x8.
GradcheckCase gradcheck_wide_focus_row(int row, std::uint64_t seed, double step = 1e-5, double tolerance = 1e-4);

}  // namespace fct

#endif  // FCT_GRADCHECK_SUITE_HPP
