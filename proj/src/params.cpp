#include "fct/params.hpp"

#include <cmath>
#include <numbers>

namespace fct {

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

ParamRef ParamRegistry::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ValueError("duplicate parameter name " + name);
  index_.emplace(name, values_.size());
  names_.push_back(std::move(name));
  values_.push_back(std::move(value));
  return ParamRef{values_.size() - 1};
}

std::optional<ParamRef> ParamRegistry::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return ParamRef{it->second};
}

const Tensor& ParamRegistry::get(std::string_view name) const {
  auto ref = find(name);
  if (!ref) throw ValueError("unknown parameter " + std::string(name));
  return values_[ref->index];
}

void ParamRegistry::set(ParamRef ref, Tensor value) {
  auto& slot = values_.at(ref.index);
  if (slot.shape() != value.shape())
    throw ShapeError("parameter " + names_[ref.index] + ": shape " + shape_str(value.shape()) + " does not match " +
                     shape_str(slot.shape()));
  slot = std::move(value);
}

std::int64_t ParamRegistry::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

std::int64_t ParamRegistry::parameter_count(std::string_view prefix) const {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (names_[i].starts_with(prefix)) n += values_[i].numel();
  return n;
}

ParamRegistry ParamRegistry::to(DType dtype) const {
  ParamRegistry out;
  for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].to(dtype));
  return out;
}

Binding::Binding(const ParamRegistry& registry, Tape* tape) {
  vars_.reserve(registry.size());
  for (const auto& v : registry.values()) vars_.push_back(tape ? tape->leaf(v) : Var(v));
}

Binding Binding::meta(const ParamRegistry& registry) {
  Binding b;
  for (const auto& v : registry.values()) b.vars_.emplace_back(Tensor::meta(v.shape(), v.dtype()));
  return b;
}

Tensor init_kernel(const Shape& shape, Rng& rng, Init init) {
  if (shape.size() != 4) throw ShapeError("init_kernel: expected rank-4 kernel shape, got " + shape_str(shape));
  if (init == Init::zeros) return Tensor::zeros(shape);
  const double fan_in = static_cast<double>(shape[0] * shape[1] * shape[2]);
  const double bound = 1.0 / std::sqrt(fan_in);
  std::vector<float> w(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(shape, std::move(w));
}

Conv2d::Conv2d(ParamRegistry& registry, const std::string& name, Conv2dSpec spec, Rng& rng, Init init) : spec_(spec) {
  if (spec.in_channels < 1 || spec.out_channels < 1 || spec.groups < 1 || spec.in_channels % spec.groups ||
      spec.out_channels % spec.groups)
    throw ValueError(name + ": groups=" + std::to_string(spec.groups) + " must divide C_in=" +
                     std::to_string(spec.in_channels) + " and C_out=" + std::to_string(spec.out_channels));
  if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride < 1 || spec.dilation_h < 1 || spec.dilation_w < 1)
    throw ValueError(name + ": kernel, stride and dilation must be >= 1");
  kernel_ = registry.add(name + ".kernel",
                         init_kernel({spec.kernel_h, spec.kernel_w, spec.in_channels / spec.groups, spec.out_channels}, rng, init));
  if (spec.bias) bias_ = registry.add(name + ".bias", Tensor::zeros({spec.out_channels}));
}

ConvParams Conv2d::bind(const Binding& params) const {
  ConvParams p;
  p.kernel = params[kernel_];
  if (spec_.bias) p.bias = params[bias_];
  p.stride_h = p.stride_w = spec_.stride;
  p.dilation_h = spec_.dilation_h;
  p.dilation_w = spec_.dilation_w;
  p.groups = spec_.groups;
  p.padding = spec_.padding;
  return p;
}

Var Conv2d::operator()(const Binding& params, const Var& x) const { return conv2d(x, bind(params)); }

LayerNorm::LayerNorm(ParamRegistry& registry, const std::string& name, int channels, double epsilon) : epsilon_(epsilon) {
  if (!(epsilon > 0.0)) throw ValueError(name + ": epsilon must be > 0");
  gamma_ = registry.add(name + ".gamma", Tensor::ones({channels}));
  beta_ = registry.add(name + ".beta", Tensor::zeros({channels}));
}

Var LayerNorm::operator()(const Binding& params, const Var& x) const {
  return layer_norm(x, NormParams{params[gamma_], params[beta_], epsilon_});
}

}  // namespace fct
