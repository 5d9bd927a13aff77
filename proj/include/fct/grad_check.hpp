#ifndef FCT_GRAD_CHECK_HPP
#define FCT_GRAD_CHECK_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "fct/autodiff.hpp"

namespace fct {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t components_checked = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Check at most this many components per input (0 = all). The subset is
  /// a deterministic function of `seed`.
  std::size_t max_components = 0;
  std::uint64_t seed = 0;
};

using ScalarFunction = std::function<Var(const std::vector<Var>& inputs)>;

/// Compares tape gradients of a scalar function with central differences
/// (f(x+h e_i) - f(x-h e_i)) / 2h. Everything is evaluated in f64. The
/// error of a component is |a-b| / max(|a|, |b|, 1e-8).
/// Throws NumericalError if f produces a non-finite value.
GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs, GradCheckOptions options = {});

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step = 1e-5);

}  // namespace fct

#endif  // FCT_GRAD_CHECK_HPP
