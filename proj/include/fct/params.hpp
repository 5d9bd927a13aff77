#ifndef FCT_PARAMS_HPP
#define FCT_PARAMS_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fct/autodiff.hpp"
#include "fct/nn.hpp"
#include "fct/random.hpp"

namespace fct {

struct ParamRef {
  std::size_t index = 0;
};

/// All trainable parameters of a model, keyed by dotted hierarchical names
/// and iterated in registration order.
class ParamRegistry {
public:
  ParamRef add(std::string name, Tensor value);

  const Tensor& operator[](ParamRef ref) const { return values_.at(ref.index); }
  const Tensor& get(std::string_view name) const;
  std::optional<ParamRef> find(std::string_view name) const;
  /// Replaces a value; the shape must not change.
  void set(ParamRef ref, Tensor value);
  Tensor& mutable_value(ParamRef ref) { return values_.at(ref.index); }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Tensor>& values() const { return values_; }

  /// Sum of element counts.
  std::int64_t parameter_count() const;
  /// Element count of parameters whose name starts with `prefix`.
  std::int64_t parameter_count(std::string_view prefix) const;

  ParamRegistry to(DType dtype) const;

private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameter values as Vars for one forward pass: tape leaves when training,
/// constants for inference, shape-only for profiling.
class Binding {
public:
  explicit Binding(const ParamRegistry& registry, Tape* tape = nullptr);
  explicit Binding(std::vector<Var> vars) : vars_(std::move(vars)) {}
  static Binding meta(const ParamRegistry& registry);

  const Var& operator[](ParamRef ref) const { return vars_.at(ref.index); }
  const std::vector<Var>& vars() const { return vars_; }

private:
  Binding() = default;
  std::vector<Var> vars_;
};

enum class Init { uniform_fan_in, zeros };

/// Kernel of shape [K_h, K_w, C_in/groups, C_out], uniform in
/// +-1/sqrt(fan_in) with fan_in = K_h*K_w*C_in/groups.
Tensor init_kernel(const Shape& shape, Rng& rng, Init init = Init::uniform_fan_in);

struct Conv2dSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 3;
  int kernel_w = 3;
  int stride = 1;
  int dilation_h = 1;
  int dilation_w = 1;
  int groups = 1;
  Padding padding = Padding::same;
  bool bias = true;
};

class Conv2d {
public:
  Conv2d() = default;
  Conv2d(ParamRegistry& registry, const std::string& name, Conv2dSpec spec, Rng& rng, Init init = Init::uniform_fan_in);

  Var operator()(const Binding& params, const Var& x) const;
  ConvParams bind(const Binding& params) const;

  const Conv2dSpec& spec() const { return spec_; }
  ParamRef kernel() const { return kernel_; }
  /// Only meaningful when spec().bias is set.
  ParamRef bias() const { return bias_; }

private:
  Conv2dSpec spec_;
  ParamRef kernel_, bias_;
};

class LayerNorm {
public:
  LayerNorm() = default;
  LayerNorm(ParamRegistry& registry, const std::string& name, int channels, double epsilon = 1e-6);

  Var operator()(const Binding& params, const Var& x) const;
  ParamRef gamma() const { return gamma_; }
  ParamRef beta() const { return beta_; }

private:
  ParamRef gamma_, beta_;
  double epsilon_ = 1e-6;
};

}  // namespace fct

#endif  // FCT_PARAMS_HPP
