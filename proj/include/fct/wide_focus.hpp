#ifndef FCT_WIDE_FOCUS_HPP
#define FCT_WIDE_FOCUS_HPP

// Wide-Focus: parallel dilated convolution branches summed and aggregated by
// a spatial convolution, used in place of the transformer MLP.

#include <string>
#include <vector>

#include "fct/params.hpp"

namespace fct {

enum class HeadType { mlp, conv1d, conv2d };

const char* head_type_name(HeadType t);
HeadType parse_head_type(const std::string& s);

struct WideFocusConfig {
  HeadType head_type = HeadType::conv2d;
  std::vector<int> dilations{1, 2, 3};
  int kernel = 3;
  /// Optional per-branch kernel sizes overriding `kernel`; same length as dilations.
  std::vector<int> kernels;

  int branches() const { return static_cast<int>(dilations.size()); }
  int branch_kernel(int i) const { return kernels.empty() ? kernel : kernels.at(static_cast<std::size_t>(i)); }
  void validate() const;
  std::string label() const;

  /// The ten ablation configurations, in table order: MLP; Conv1D with 1..4
  /// branches; Conv2D with 1..4 branches; Conv2D with kernels 3 and 4.
  static WideFocusConfig ablation_row(int row);
  static constexpr int kAblationRows = 10;
};

class WideFocus {
public:
  WideFocus() = default;
  WideFocus(ParamRegistry& registry, const std::string& name, int channels, WideFocusConfig cfg, Rng& rng,
            Init init = Init::uniform_fan_in);

  /// WF(z): shape preserving.
  Var operator()(const Binding& params, const Var& z) const;
  /// Output of branch i alone (conv + gelu), before summation.
  Var branch(const Binding& params, const Var& z, int i) const;
  /// WF(z) + z.
  Var residual(const Binding& params, const Var& z) const;

  const WideFocusConfig& config() const { return cfg_; }
  const std::vector<Conv2d>& branch_convs() const { return branches_; }
  const Conv2d& aggregate_conv() const { return aggregate_; }

private:
  Var to_sequence(const Var& z) const;
  void check_extent(const Shape& s) const;

  WideFocusConfig cfg_;
  int channels_ = 0;
  std::vector<Conv2d> branches_;
  Conv2d aggregate_;
};

}  // namespace fct

#endif  // FCT_WIDE_FOCUS_HPP
