#include "fct/gradcheck_suite.hpp"

#include <chrono>

#include "fct/fct_layer.hpp"
#include "fct/losses.hpp"
#include "fct/model.hpp"

namespace fct {

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(s, std::move(v));
}

/// sum(out * w) with w a fixed pseudo-random tensor, so every output
/// component contributes a distinct weight.
Var probe(const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(mul(out, Var(random_tensor(out.shape(), rng))));
}

/// Parameters in f64 with a small random perturbation so zero biases and
/// unit gains do not hide errors.
std::vector<Tensor> perturbed_params(const ParamRegistry& reg, Rng& rng) {
  std::vector<Tensor> out;
  for (const auto& v : reg.values()) {
    std::vector<double> x = v.to_vector();
    for (auto& e : x) e += rng.uniform(-0.1, 0.1);
    out.push_back(Tensor::from(v.shape(), std::move(x)));
  }
  return out;
}

struct Case {
  std::string name;
  std::function<GradCheckReport(std::uint64_t seed, const GradCheckOptions&)> run;
};

GradCheckReport check_unary(const Shape& s, std::uint64_t seed, const GradCheckOptions& o,
                            const std::function<Var(const Var&)>& op, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  const Tensor x = random_tensor(s, rng, lo, hi);
  return grad_check([&](const std::vector<Var>& in) { return probe(op(in[0]), seed + 1); }, {x}, o);
}

GradCheckReport check_binary(const Shape& sa, const Shape& sb, std::uint64_t seed, const GradCheckOptions& o,
                             const std::function<Var(const Var&, const Var&)>& op, double blo = -1.0, double bhi = 1.0) {
  Rng rng(seed);
  const Tensor a = random_tensor(sa, rng);
  const Tensor b = random_tensor(sb, rng, blo, bhi);
  return grad_check([&](const std::vector<Var>& in) { return probe(op(in[0], in[1]), seed + 1); }, {a, b}, o);
}

GradCheckReport check_conv(const Shape& x, const Shape& k, int stride, int dilation, int groups, Padding pad,
                           std::uint64_t seed, const GradCheckOptions& o) {
  Rng rng(seed);
  const Tensor xt = random_tensor(x, rng);
  const Tensor kt = random_tensor(k, rng);
  const Tensor bt = random_tensor({k[3]}, rng);
  return grad_check(
      [&](const std::vector<Var>& in) {
        ConvParams p;
        p.kernel = in[1];
        p.bias = in[2];
        p.stride_h = p.stride_w = stride;
        p.dilation_h = p.dilation_w = dilation;
        p.groups = groups;
        p.padding = pad;
        return probe(conv2d(in[0], p), seed + 1);
      },
      {xt, kt, bt}, o);
}

/// Checks a parameterized block: inputs are [x, params...].
template <typename Build, typename Apply>
GradCheckReport check_module(const Shape& x_shape, std::uint64_t seed, const GradCheckOptions& o, Build&& build,
                             Apply&& apply) {
  ParamRegistry reg;
  Rng init(mix_seed(seed, 1));
  auto module = build(reg, init);
  Rng rng(mix_seed(seed, 2));
  std::vector<Tensor> inputs{random_tensor(x_shape, rng)};
  for (auto& p : perturbed_params(reg, rng)) inputs.push_back(std::move(p));
  return grad_check(
      [&](const std::vector<Var>& in) {
        const Binding b(std::vector<Var>(in.begin() + 1, in.end()));
        return probe(apply(module, b, in[0]), seed + 3);
      },
      inputs, o);
}

std::vector<Case> make_cases() {
  std::vector<Case> c;
  auto add_case = [&](std::string name, auto fn) { c.push_back(Case{std::move(name), fn}); };

  add_case("matmul", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_binary({2, 3, 4}, {2, 4, 5}, s, o, [](const Var& a, const Var& b) { return matmul(a, b); });
  });
  add_case("add_broadcast", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_binary({2, 3, 4}, {4}, s, o, [](const Var& a, const Var& b) { return add(a, b); });
  });
  add_case("sub_scalar_broadcast", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_binary({2, 3}, {}, s, o, [](const Var& a, const Var& b) { return sub(a, b); });
  });
  add_case("mul", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_binary({2, 3, 4}, {2, 3, 4}, s, o, [](const Var& a, const Var& b) { return mul(a, b); });
  });
  add_case("div", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_binary({2, 3}, {2, 3}, s, o, [](const Var& a, const Var& b) { return div(a, b); }, 0.5, 1.5);
  });
  add_case("sum_axes", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 3, 4}, s, o, [](const Var& x) { return sum(x, {1}); });
  });
  add_case("mean_axes", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 3, 4}, s, o, [](const Var& x) { return mean(x, {0, 2}); });
  });
  add_case("max_axes", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 3, 4}, s, o, [](const Var& x) { return max(x, {2}); });
  });
  add_case("permute", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 3, 4, 2}, s, o, [](const Var& x) { return permute(x, {0, 2, 1, 3}); });
  });
  add_case("conv2d_same", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({1, 5, 5, 3}, {3, 3, 3, 4}, 1, 1, 1, Padding::same, s, o);
  });
  add_case("conv2d_stride2_valid", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({2, 6, 6, 2}, {3, 3, 2, 3}, 2, 1, 1, Padding::valid, s, o);
  });
  add_case("conv2d_stride2_same", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({1, 5, 6, 2}, {3, 3, 2, 2}, 2, 1, 1, Padding::same, s, o);
  });
  add_case("conv2d_dilated", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({1, 7, 7, 2}, {3, 3, 2, 2}, 1, 2, 1, Padding::same, s, o);
  });
  add_case("conv2d_grouped", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({1, 4, 4, 4}, {3, 3, 2, 6}, 1, 1, 2, Padding::same, s, o);
  });
  add_case("conv2d_depthwise", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({2, 5, 5, 3}, {3, 3, 1, 3}, 1, 1, 3, Padding::same, s, o);
  });
  add_case("conv2d_even_kernel", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({1, 6, 6, 2}, {4, 4, 2, 2}, 1, 1, 1, Padding::same_top_left, s, o);
  });
  add_case("conv2d_pointwise", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_conv({1, 4, 4, 3}, {1, 1, 3, 5}, 1, 1, 1, Padding::same, s, o);
  });
  add_case("layer_norm", [](std::uint64_t s, const GradCheckOptions& o) {
    Rng rng(s);
    const Tensor x = random_tensor({2, 3, 3, 5}, rng);
    const Tensor g = random_tensor({5}, rng, 0.5, 1.5);
    const Tensor b = random_tensor({5}, rng);
    return grad_check([&](const std::vector<Var>& in) { return probe(layer_norm(in[0], NormParams{in[1], in[2], 1e-6}), s + 1); },
                      {x, g, b}, o);
  });
  add_case("max_pool2d", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 4, 6, 3}, s, o, [](const Var& x) { return max_pool2d(x); });
  });
  add_case("avg_pool2d", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({1, 8, 8, 2}, s, o, [](const Var& x) { return avg_pool2d(x, 4); });
  });
  add_case("gelu", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 3, 4}, s, o, [](const Var& x) { return gelu(x); }, -3.0, 3.0);
  });
  add_case("softmax_last", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 3, 5}, s, o, [](const Var& x) { return softmax(x, -1); }, -3.0, 3.0);
  });
  add_case("softmax_middle", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 4, 3}, s, o, [](const Var& x) { return softmax(x, 1); }, -3.0, 3.0);
  });
  add_case("log_softmax", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({3, 4}, s, o, [](const Var& x) { return log_softmax(x, -1); }, -3.0, 3.0);
  });
  add_case("upsample_nearest", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({1, 3, 2, 2}, s, o, [](const Var& x) { return upsample_nearest(x, 2); });
  });
  add_case("concat_slice", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_binary({1, 3, 3, 2}, {1, 3, 3, 3}, s, o,
                        [](const Var& a, const Var& b) { return slice_channels(concat_channels(a, b), 1, 4); });
  });
  add_case("reshape", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_unary({2, 6}, s, o, [](const Var& x) { return mul(reshape(x, {3, 4}), reshape(x, {3, 4})); });
  });
  add_case("attention", [](std::uint64_t s, const GradCheckOptions& o) {
    Rng rng(s);
    const Tensor q = random_tensor({1, 2, 5, 3}, rng);
    const Tensor k = random_tensor({1, 2, 4, 3}, rng);
    const Tensor v = random_tensor({1, 2, 4, 3}, rng);
    return grad_check([&](const std::vector<Var>& in) { return probe(scaled_dot_product_attention(in[0], in[1], in[2], 0.7), s + 1); },
                      {q, k, v}, o);
  });
  add_case("convolutional_attention", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_module(
        {1, 4, 4, 4}, s, o,
        [](ParamRegistry& reg, Rng& rng) { return ConvAttention(reg, "attn", AttentionConfig{4, 2}, rng); },
        [](const ConvAttention& m, const Binding& b, const Var& x) { return m.forward(b, x).z_attn; });
  });
  add_case("convolutional_attention_kv_stride2", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_module(
        {1, 4, 4, 4}, s, o,
        [](ParamRegistry& reg, Rng& rng) {
          AttentionConfig a{4, 2};
          a.kv_stride = 2;
          return ConvAttention(reg, "attn", a, rng);
        },
        [](const ConvAttention& m, const Binding& b, const Var& x) { return m.forward(b, x).z_attn; });
  });
  add_case("wide_focus_residual", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_module(
        {1, 6, 6, 4}, s, o, [](ParamRegistry& reg, Rng& rng) { return WideFocus(reg, "wf", 4, WideFocusConfig{}, rng); },
        [](const WideFocus& m, const Binding& b, const Var& x) { return m.residual(b, x); });
  });
  // 3 input channels: a LayerNorm over 2 channels maps every pixel to about
  // (+-1, -+1), so its input gradient is O(epsilon) and drowns in rounding noise.
  add_case("fct_encoder_layer", [](std::uint64_t s, const GradCheckOptions& o) {
    return check_module(
        {1, 8, 8, 3}, s, o,
        [](ParamRegistry& reg, Rng& rng) {
          FctLayerConfig c;
          c.in_channels = 3;
          c.filters = 4;
          c.attention = AttentionConfig{4, 2};
          return FctLayer(reg, "enc", c, rng);
        },
        [](const FctLayer& m, const Binding& b, const Var& x) { return m.forward(b, x).y; });
  });
  add_case("fct_decoder_layer", [](std::uint64_t s, const GradCheckOptions& o) {
    Rng rng(mix_seed(s, 9));
    const Tensor skip = random_tensor({1, 4, 4, 2}, rng);
    return check_module(
        {1, 2, 2, 3}, s, o,
        [](ParamRegistry& reg, Rng& r) {
          FctLayerConfig c;
          c.in_channels = 3;
          c.skip_channels = 2;
          c.filters = 4;
          c.variant = LayerVariant::decoder;
          c.attention = AttentionConfig{4, 2};
          return FctLayer(reg, "dec", c, r);
        },
        [skip](const FctLayer& m, const Binding& b, const Var& x) { return m.forward(b, x, Var(skip)).y; });
  });
  add_case("combined_loss", [](std::uint64_t s, const GradCheckOptions& o) {
    Rng rng(s);
    const Tensor logits = random_tensor({1, 4, 4, 3}, rng, -2.0, 2.0);
    const Tensor half = random_tensor({1, 2, 2, 3}, rng, -2.0, 2.0);
    Labels target(1, 4, 4);
    for (auto& v : target.data) v = static_cast<std::int32_t>(rng.integer(0, 2));
    return grad_check(
        [&](const std::vector<Var>& in) { return combined_loss({ScaleOutput{1, in[0]}, ScaleOutput{2, in[1]}}, target); },
        {logits, half}, o);
  });
  return c;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<GradcheckCase> run_gradcheck_suite(const SuiteOptions& opts) {
  std::vector<GradcheckCase> results;
  const auto cases = make_cases();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    if (!opts.filter.empty() && cases[i].name.find(opts.filter) == std::string::npos) continue;
    GradCheckOptions o;
    o.step = opts.step;
    o.seed = mix_seed(opts.seed, i, 1);
    const auto t0 = std::chrono::steady_clock::now();
    GradcheckCase r;
    r.name = cases[i].name;
    r.report = cases[i].run(mix_seed(opts.seed, i), o);
    r.seconds = elapsed(t0);
    r.passed = r.report.max_rel_error < opts.tolerance;
    if (opts.on_case) opts.on_case(r);
    results.push_back(std::move(r));
  }
  for (int row = 0; row < WideFocusConfig::kAblationRows; ++row) {
    const std::string name = "wide_focus_row" + std::to_string(row);
    if (!opts.filter.empty() && name.find(opts.filter) == std::string::npos) continue;
    if (opts.scale == SuiteScale::tiny && row != 0 && row != 4 && row != 9) continue;
    GradcheckCase r = gradcheck_wide_focus_row(row, opts.seed, opts.step, opts.tolerance);
    if (opts.on_case) opts.on_case(r);
    results.push_back(std::move(r));
  }
  return results;
}

GradcheckCase gradcheck_wide_focus_row(int row, std::uint64_t seed, double step, double tolerance) {
  const WideFocusConfig cfg = WideFocusConfig::ablation_row(row);
  GradCheckOptions o;
  o.step = step;
  o.seed = mix_seed(seed, 0x5746ull, static_cast<std::uint64_t>(row));
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckCase r;
  r.name = "wide_focus_row" + std::to_string(row) + " (" + cfg.label() + ")";
  r.report = check_module(
      {1, 16, 16, 8}, mix_seed(mix_seed(seed, 0x5746ull, static_cast<std::uint64_t>(row)), 1), o,
      [&](ParamRegistry& reg, Rng& rng) { return WideFocus(reg, "wf", 8, cfg, rng); },
      [](const WideFocus& m, const Binding& b, const Var& x) { return m.residual(b, x); });
  r.seconds = elapsed(t0);
  r.passed = r.report.max_rel_error < tolerance;
  return r;
}

}  // namespace fct
