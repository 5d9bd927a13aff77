#include "fct/wide_focus.hpp"

namespace fct {

const char* head_type_name(HeadType t) {
  switch (t) {
    case HeadType::mlp: return "mlp";
    case HeadType::conv1d: return "conv1d";
    case HeadType::conv2d: return "conv2d";
  }
  return "?";
}

HeadType parse_head_type(const std::string& s) {
  if (s == "mlp") return HeadType::mlp;
  if (s == "conv1d") return HeadType::conv1d;
  if (s == "conv2d") return HeadType::conv2d;
  throw ValueError("unknown wide-focus head_type '" + s + "' (expected mlp, conv1d or conv2d)");
}

void WideFocusConfig::validate() const {
  if (head_type == HeadType::mlp) return;
  if (dilations.empty()) throw ValueError("wide_focus: at least one branch is required");
  if (!kernels.empty() && kernels.size() != dilations.size())
    throw ValueError("wide_focus: kernels has " + std::to_string(kernels.size()) + " entries for " +
                     std::to_string(dilations.size()) + " branches");
  for (int i = 0; i < branches(); ++i) {
    if (dilations[static_cast<std::size_t>(i)] < 1) throw ValueError("wide_focus: dilations must be >= 1");
    if (branch_kernel(i) < 1) throw ValueError("wide_focus: kernel sizes must be >= 1");
  }
}

std::string WideFocusConfig::label() const {
  if (head_type == HeadType::mlp) return "mlp";
  std::string s = std::string(head_type_name(head_type)) + " B=" + std::to_string(branches());
  if (!kernels.empty()) {
    s += " k=";
    for (std::size_t i = 0; i < kernels.size(); ++i) s += (i ? "," : "") + std::to_string(kernels[i]);
  } else {
    s += " D=";
    for (std::size_t i = 0; i < dilations.size(); ++i) s += (i ? "," : "") + std::to_string(dilations[i]);
  }
  return s;
}

WideFocusConfig WideFocusConfig::ablation_row(int row) {
  if (row < 0 || row >= kAblationRows) throw ValueError("wide_focus: ablation row must be in [0, 10)");
  WideFocusConfig c;
  if (row == 0) {
    c.head_type = HeadType::mlp;
    c.dilations = {};
    return c;
  }
  if (row == 9) {
    c.dilations = {1, 1};
    c.kernels = {3, 4};
    return c;
  }
  c.head_type = row <= 4 ? HeadType::conv1d : HeadType::conv2d;
  const int b = row <= 4 ? row : row - 4;
  c.dilations.clear();
  for (int d = 1; d <= b; ++d) c.dilations.push_back(d);
  return c;
}

WideFocus::WideFocus(ParamRegistry& registry, const std::string& name, int channels, WideFocusConfig cfg, Rng& rng,
                     Init init)
    : cfg_(std::move(cfg)), channels_(channels) {
  cfg_.validate();
  if (channels < 1) throw ValueError(name + ": channels must be >= 1");
  Conv2dSpec base;
  base.in_channels = base.out_channels = channels;
  if (cfg_.head_type == HeadType::mlp) {
    base.kernel_h = base.kernel_w = 1;
    branches_.emplace_back(registry, name + ".fc1", base, rng, init);
    aggregate_ = Conv2d(registry, name + ".fc2", base, rng, init);
    return;
  }
  const bool seq = cfg_.head_type == HeadType::conv1d;
  for (int i = 0; i < cfg_.branches(); ++i) {
    Conv2dSpec s = base;
    const int k = cfg_.branch_kernel(i);
    s.kernel_w = k;
    s.kernel_h = seq ? 1 : k;
    s.dilation_w = cfg_.dilations[static_cast<std::size_t>(i)];
    s.dilation_h = seq ? 1 : s.dilation_w;
    s.padding = k % 2 == 0 ? Padding::same_top_left : Padding::same;
    branches_.emplace_back(registry, name + ".branch" + std::to_string(i), s, rng, init);
  }
  Conv2dSpec agg = base;
  agg.kernel_h = seq ? 1 : 3;
  agg.kernel_w = 3;
  aggregate_ = Conv2d(registry, name + ".aggregate", agg, rng, init);
}

Var WideFocus::to_sequence(const Var& z) const {
  const auto& s = z.shape();
  return reshape(z, {s[0], 1, s[1] * s[2], s[3]});
}

void WideFocus::check_extent(const Shape& s) const {
  if (s.size() != 4 || s[3] != channels_)
    throw ShapeError("wide_focus: expected (N, H, W, " + std::to_string(channels_) + "), got " + shape_str(s));
  const bool seq = cfg_.head_type == HeadType::conv1d;
  const std::int64_t h = seq ? 1 : s[1];
  const std::int64_t w = seq ? s[1] * s[2] : s[2];
  for (const auto& conv : branches_) {
    const auto& sp = conv.spec();
    // a reach beyond the input leaves the outer taps reading only padding; an
    // extent of 1 is exempt since the kernel then degenerates to its 1-D centre
    const std::int64_t reach_h = (sp.kernel_h - 1) * sp.dilation_h / 2;
    const std::int64_t reach_w = (sp.kernel_w - 1) * sp.dilation_w / 2;
    if (reach_h >= h && h > 1 && sp.kernel_h > 1)
      throw ShapeError("wide_focus: dilated kernel (" + std::to_string(sp.kernel_h) + ", D=" + std::to_string(sp.dilation_h) +
                       ") exceeds input height " + std::to_string(h));
    if (reach_w >= w && w > 1 && sp.kernel_w > 1)
      throw ShapeError("wide_focus: dilated kernel (" + std::to_string(sp.kernel_w) + ", D=" + std::to_string(sp.dilation_w) +
                       ") exceeds input width " + std::to_string(w));
  }
}

Var WideFocus::branch(const Binding& params, const Var& z, int i) const {
  check_extent(z.shape());
  const Var in = cfg_.head_type == HeadType::conv1d ? to_sequence(z) : z;
  const Var out = gelu(branches_.at(static_cast<std::size_t>(i))(params, in));
  return reshape(out, z.shape());
}

Var WideFocus::operator()(const Binding& params, const Var& z) const {
  check_extent(z.shape());
  const Var in = cfg_.head_type == HeadType::conv1d ? to_sequence(z) : z;
  Var acc = gelu(branches_[0](params, in));
  for (std::size_t i = 1; i < branches_.size(); ++i) acc = add(acc, gelu(branches_[i](params, in)));
  return reshape(gelu(aggregate_(params, acc)), z.shape());
}

Var WideFocus::residual(const Binding& params, const Var& z) const { return add((*this)(params, z), z); }

}  // namespace fct
