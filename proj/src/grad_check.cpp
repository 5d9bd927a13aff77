#include "fct/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fct {

namespace {

double eval_scalar(const ScalarFunction& f, const std::vector<Tensor>& inputs) {
  std::vector<Var> vars(inputs.begin(), inputs.end());
  const Var out = f(vars);
  if (out.value().numel() != 1) throw ShapeError("grad_check: function must be scalar, got " + shape_str(out.shape()));
  const double v = out.value().to(DType::f64).item();
  if (!std::isfinite(v)) throw NumericalError("grad_check: function value is not finite");
  return v;
}

std::vector<std::int64_t> pick_components(std::int64_t n, const GradCheckOptions& options, std::size_t input) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (options.max_components == 0 || idx.size() <= options.max_components) return idx;
  std::mt19937_64 rng(options.seed * 0x9E3779B97F4A7C15ull + input);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(options.max_components);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const ScalarFunction& f, const std::vector<Tensor>& inputs_in, GradCheckOptions options) {
  std::vector<Tensor> inputs;
  inputs.reserve(inputs_in.size());
  for (const auto& t : inputs_in) inputs.push_back(t.to(DType::f64).clone());

  // analytic route
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    const Var loss = f(leaves);
    if (!std::isfinite(loss.value().to(DType::f64).item())) throw NumericalError("grad_check: function value is not finite");
    if (loss.requires_grad()) tape.backward(loss);
    for (const auto& l : leaves) analytic.push_back(tape.grad(l).to(DType::f64));
  }

  // numeric route
  GradCheckReport report;
  const double h = options.step;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto a = analytic[i].data<double>();
    for (std::int64_t j : pick_components(inputs[i].numel(), options, i)) {
      const auto k = static_cast<std::size_t>(j);
      auto buf = inputs[i].mutable_data<double>();
      const double orig = buf[k];
      buf[k] = orig + h;
      const double fp = eval_scalar(f, inputs);
      buf = inputs[i].mutable_data<double>();
      buf[k] = orig - h;
      const double fm = eval_scalar(f, inputs);
      buf = inputs[i].mutable_data<double>();
      buf[k] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(a[k] - numeric) / std::max({std::abs(a[k]), std::abs(numeric), 1e-8});
      ++report.components_checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(report.max_rel_error, err);
        report.worst_input = i;
        report.worst_index = j;
        report.worst_analytic = a[k];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step) {
  GradCheckOptions options;
  options.step = step;
  return grad_check([&f](const std::vector<Var>& v) { return f(v[0]); }, {x}, options).max_rel_error;
}

}  // namespace fct
