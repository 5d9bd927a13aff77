#include "doctest.h"

#include "fct/grad_check.hpp"
#include "fct/gradcheck_suite.hpp"
#include "fct/wide_focus.hpp"
#include "helpers.hpp"

using namespace fct;
using fct::test::max_abs_diff;
using fct::test::random_tensor;

namespace {

void zero_biases(ParamRegistry& reg) {
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg.name(i).ends_with(".bias")) reg.set(ParamRef{i}, Tensor::zeros(reg.values()[i].shape(), reg.values()[i].dtype()));
}

}  // namespace

TEST_CASE("ablation rows in table order") {
  const char* labels[10] = {"mlp",           "conv1d B=1 D=1",       "conv1d B=2 D=1,2",     "conv1d B=3 D=1,2,3",
                            "conv1d B=4 D=1,2,3,4", "conv2d B=1 D=1", "conv2d B=2 D=1,2",     "conv2d B=3 D=1,2,3",
                            "conv2d B=4 D=1,2,3,4", "conv2d B=2 k=3,4"};
  for (int r = 0; r < WideFocusConfig::kAblationRows; ++r) CHECK(WideFocusConfig::ablation_row(r).label() == labels[r]);
  CHECK_THROWS_AS(WideFocusConfig::ablation_row(10), ValueError);
  const WideFocusConfig def;
  CHECK(def.label() == "conv2d B=3 D=1,2,3");
}

TEST_CASE("every ablation row preserves shape on 1x16x16x8") {
  Rng rng(1);
  const Tensor x = random_tensor({1, 16, 16, 8}, rng);
  for (int r = 0; r < WideFocusConfig::kAblationRows; ++r) {
    ParamRegistry reg;
    const WideFocus wf(reg, "wf", 8, WideFocusConfig::ablation_row(r), rng);
    CHECK(wf(Binding(reg), Var(x)).shape() == x.shape());
    CHECK(wf.residual(Binding(reg), Var(x)).shape() == x.shape());
  }
}

TEST_CASE("zero input with zero biases gives zero output") {
  Rng rng(2);
  ParamRegistry reg;
  const WideFocus wf(reg, "wf", 4, WideFocusConfig{}, rng);
  zero_biases(reg);
  const Tensor z = Tensor::zeros({1, 6, 6, 4});
  CHECK(max_abs_diff(wf(Binding(reg), Var(z)).value(), z) == 0.0);
}

TEST_CASE("zero weights make the residual an identity") {
  Rng rng(3);
  ParamRegistry reg;
  const WideFocus wf(reg, "wf", 4, WideFocusConfig{}, rng, Init::zeros);
  const Tensor x = random_tensor({2, 5, 5, 4}, rng);
  CHECK(wf.residual(Binding(reg), Var(x)).value().bit_equal(x));
}

TEST_CASE("single branch reduces to conv-gelu-conv-gelu") {
  Rng rng(4);
  ParamRegistry reg;
  WideFocusConfig cfg;
  cfg.dilations = {1};
  const WideFocus wf(reg, "wf", 3, cfg, rng);
  const Binding b(reg);
  const Tensor x = random_tensor({1, 5, 5, 3}, rng);
  const Var expect = gelu(wf.aggregate_conv()(b, gelu(wf.branch_convs()[0](b, Var(x)))));
  CHECK(wf(b, Var(x)).value().bit_equal(expect.value()));
}

TEST_CASE("dilated kernel larger than the input is rejected") {
  Rng rng(5);
  ParamRegistry reg;
  const WideFocus wf(reg, "wf", 2, WideFocusConfig::ablation_row(8), rng);
  CHECK_THROWS_AS(wf(Binding(reg), Var(Tensor::zeros({1, 4, 4, 2}))), ShapeError);
  CHECK_NOTHROW(wf(Binding(reg), Var(Tensor::zeros({1, 5, 5, 2}))));
  CHECK_THROWS_AS(wf(Binding(reg), Var(Tensor::zeros({1, 5, 5, 3}))), ShapeError);
}

TEST_CASE("even kernel branch puts the extra padding on top and left") {
  Rng rng(6);
  ParamRegistry reg;
  const WideFocus wf(reg, "wf", 2, WideFocusConfig::ablation_row(9), rng);
  CHECK(wf.branch_convs()[1].spec().padding == Padding::same_top_left);
  CHECK(wf.branch_convs()[1].spec().kernel_h == 4);
}

TEST_CASE("property: impulse response of a branch stays within its receptive field") {
  Rng rng(7);
  for (int d = 1; d <= 3; ++d) {
    ParamRegistry reg;
    WideFocusConfig cfg;
    cfg.dilations = {1, 2, 3};
    const WideFocus wf(reg, "wf", 2, cfg, rng);
    zero_biases(reg);
    const std::int64_t n = 15, cy = 7, cx = 7;
    Tensor x = Tensor::zeros({1, n, n, 2});
    x.mutable_data<float>()[(cy * n + cx) * 2] = 1.0f;
    const Tensor out = wf.branch(Binding(reg), Var(x), d - 1).value();
    const std::int64_t radius = (3 - 1) * d / 2;
    bool outside_zero = true, inside_nonzero = false;
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t xx = 0; xx < n; ++xx)
        for (int c = 0; c < 2; ++c) {
          const double v = out.at({0, y, xx, c});
          if (std::abs(y - cy) > radius || std::abs(xx - cx) > radius) outside_zero &= v == 0.0;
          else inside_nonzero |= v != 0.0;
        }
    CHECK(outside_zero);
    CHECK(inside_nonzero);
  }
}

TEST_CASE("property: branch summation is order independent") {
  Rng rng(8);
  for (int trial = 0; trial < 3; ++trial) {
    ParamRegistry reg;
    const WideFocus wf(reg, "wf", 3, WideFocusConfig::ablation_row(8), rng);
    const Binding b(reg);
    const Var x(random_tensor({1, 9, 9, 3}, rng));
    Var fwd = wf.branch(b, x, 0), rev = wf.branch(b, x, 3);
    for (int i = 1; i < 4; ++i) fwd = add(fwd, wf.branch(b, x, i));
    for (int i = 2; i >= 0; --i) rev = add(rev, wf.branch(b, x, i));
    CHECK(max_abs_diff(fwd.value(), rev.value()) < 1e-6);
    CHECK(max_abs_diff(gelu(wf.aggregate_conv()(b, fwd)).value(), wf(b, x).value()) < 1e-6);
  }
}

TEST_CASE("property: conv1d matches conv2d on a one-row image") {
  Rng rng(9);
  for (int r = 1; r <= 4; ++r) {
    ParamRegistry r1, r2;
    Rng a(100 + r), b(100 + r);
    const WideFocus w1(r1, "wf", 3, WideFocusConfig::ablation_row(r), a);
    WideFocusConfig c2 = WideFocusConfig::ablation_row(r);
    c2.head_type = HeadType::conv2d;
    const WideFocus w2(r2, "wf", 3, c2, b);
    // copy the 1-D kernels into the centre row of the 2-D ones
    for (std::size_t i = 0; i < r2.size(); ++i) {
      const Tensor& src = r1.values()[i];
      const Tensor& dst = r2.values()[i];
      if (src.shape() == dst.shape()) {
        r2.set(ParamRef{i}, src);
        continue;
      }
      const std::int64_t kh = dst.shape()[0], rest = dst.numel() / kh;
      std::vector<double> v(static_cast<std::size_t>(dst.numel()), 0.0);
      for (std::int64_t j = 0; j < rest; ++j) v[static_cast<std::size_t>(kh / 2 * rest + j)] = src.flat(j);
      r2.set(ParamRef{i}, Tensor::from(dst.shape(), v).to(dst.dtype()));
    }
    const Tensor x = random_tensor({2, 1, 12, 3}, rng);
    CHECK(max_abs_diff(w1(Binding(r1), Var(x)).value(), w2(Binding(r2), Var(x)).value()) < 1e-6);
  }
}

TEST_CASE("wide-focus residual gradient check at 1x6x6x4") {
  Rng rng(10);
  ParamRegistry reg;
  const WideFocus wf(reg, "wf", 4, WideFocusConfig{}, rng);
  const ParamRegistry r64 = reg.to(DType::f64);
  std::vector<Tensor> inputs{random_tensor({1, 6, 6, 4}, rng, -1, 1, DType::f64)};
  for (const auto& t : r64.values()) inputs.push_back(t);
  const Tensor w = random_tensor({1, 6, 6, 4}, rng, -1, 1, DType::f64);
  auto f = [&](const std::vector<Var>& in) {
    const Binding b(std::vector<Var>(in.begin() + 1, in.end()));
    return sum_all(mul(wf.residual(b, in[0]), Var(w)));
  };
  GradCheckOptions o;
  o.step = 1e-5;
  const auto rep = grad_check(f, inputs, o);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("every ablation row passes gradient checking") {
  for (int r = 0; r < WideFocusConfig::kAblationRows; ++r) {
    const auto res = gradcheck_wide_focus_row(r, 7, 1e-5, 1e-4);
    INFO(res.name);
    CHECK(res.passed);
  }
}
