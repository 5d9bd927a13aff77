#include "doctest.h"

#include "fct/fct_layer.hpp"
#include "fct/grad_check.hpp"
#include "helpers.hpp"

using namespace fct;
using fct::test::max_abs_diff;
using fct::test::random_tensor;

namespace {

FctLayerConfig layer_config(LayerVariant v, int in, int filters, int heads, int skip = 0) {
  FctLayerConfig c;
  c.variant = v;
  c.in_channels = in;
  c.skip_channels = skip;
  c.filters = filters;
  c.attention.channels = filters;
  c.attention.heads = heads;
  return c;
}

}  // namespace

TEST_CASE("encoder halves, bottleneck preserves, decoder doubles") {
  Rng rng(1);
  SUBCASE("encoder 1x64x64x1 with 16 filters") {
    ParamRegistry reg;
    const FctLayer l(reg, "e", layer_config(LayerVariant::encoder, 1, 16, 2), rng);
    const auto out = l.forward(Binding::meta(reg), Var(Tensor::meta({1, 64, 64, 1})));
    CHECK(out.y.shape() == Shape{1, 32, 32, 16});
    CHECK(out.stem.shape() == Shape{1, 64, 64, 16});
  }
  SUBCASE("bottleneck") {
    ParamRegistry reg;
    const FctLayer l(reg, "b", layer_config(LayerVariant::bottleneck, 128, 384, 16), rng);
    CHECK(l.forward(Binding::meta(reg), Var(Tensor::meta({1, 14, 14, 128}))).y.shape() == Shape{1, 14, 14, 384});
  }
  SUBCASE("decoder 1x14x14x384 with a 28x28x128 skip") {
    ParamRegistry reg;
    const FctLayer l(reg, "d", layer_config(LayerVariant::decoder, 384, 128, 12, 128), rng);
    const auto out = l.forward(Binding::meta(reg), Var(Tensor::meta({1, 14, 14, 384})), Var(Tensor::meta({1, 28, 28, 128})));
    CHECK(out.y.shape() == Shape{1, 28, 28, 128});
  }
}

TEST_CASE("skip handling and odd extents are errors") {
  Rng rng(2);
  ParamRegistry reg;
  const FctLayer enc(reg, "e", layer_config(LayerVariant::encoder, 2, 4, 2), rng);
  const FctLayer dec(reg, "d", layer_config(LayerVariant::decoder, 4, 4, 2, 2), rng);
  const Binding b = Binding::meta(reg);
  CHECK_THROWS_AS(enc.forward(b, Var(Tensor::meta({1, 7, 8, 2}))), ShapeError);
  CHECK_THROWS_AS(enc.forward(b, Var(Tensor::meta({1, 8, 8, 2})), Var(Tensor::meta({1, 8, 8, 2}))), ValueError);
  CHECK_THROWS_AS(dec.forward(b, Var(Tensor::meta({1, 4, 4, 4}))), ValueError);
  CHECK_THROWS_AS(dec.forward(b, Var(Tensor::meta({1, 4, 4, 4})), Var(Tensor::meta({1, 4, 4, 2}))), ShapeError);
  CHECK_THROWS_AS(enc.forward(b, Var(Tensor::meta({1, 8, 8, 3}))), ShapeError);
  CHECK_THROWS_AS(FctLayer(reg, "x", layer_config(LayerVariant::decoder, 4, 4, 2, 0), rng), ValueError);
}

TEST_CASE("layer is deterministic") {
  Rng rng(3);
  ParamRegistry reg;
  const FctLayer l(reg, "e", layer_config(LayerVariant::encoder, 3, 8, 2), rng);
  const Tensor x = random_tensor({2, 8, 8, 3}, rng);
  CHECK(l.forward(Binding(reg), Var(x)).y.value().bit_equal(l.forward(Binding(reg), Var(x)).y.value()));
}

TEST_CASE("property: trace tensors satisfy both residual equations") {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    for (LayerVariant v : {LayerVariant::encoder, LayerVariant::bottleneck, LayerVariant::decoder}) {
      ParamRegistry reg;
      const bool dec = v == LayerVariant::decoder;
      const FctLayer l(reg, "l", layer_config(v, 4, 8, 2, dec ? 3 : 0), rng);
      const Binding b(reg.to(DType::f64));
      const Tensor x = random_tensor({1, 8, 8, 4}, rng, -1, 1, DType::f64);
      std::optional<Var> skip;
      if (dec) skip = Var(random_tensor({1, 16, 16, 3}, rng, -1, 1, DType::f64));
      FctLayerTrace tr;
      const auto out = l.forward(b, Var(x), skip, &tr);
      CHECK(max_abs_diff(tr.z_attn, add(Var(tr.attn_path), Var(tr.v_residual)).value()) < 1e-6);
      const Tensor wf = l.wide_focus()(b, Var(tr.z_attn)).value();
      CHECK(max_abs_diff(tr.wf_out, wf) < 1e-6);
      CHECK(max_abs_diff(tr.z_out, add(Var(wf), Var(tr.z_attn)).value()) < 1e-6);
      CHECK(tr.z_out.bit_equal(out.y.value()));
      // z_prev feeds the attention block and reproduces it
      const auto a = l.attention().forward(b, Var(tr.z_prev));
      CHECK(max_abs_diff(a.z_attn.value(), tr.z_attn) < 1e-6);
      CHECK(tr.z_q.shape() == Shape{1, tr.z_prev.dim(1) * tr.z_prev.dim(2), 8});
    }
  }
}

TEST_CASE("encoder layer at 1x8x8x2: parameter gradients and input gradient") {
  ParamRegistry reg;
  Rng rng(21);
  const FctLayer l(reg, "enc", layer_config(LayerVariant::encoder, 2, 4, 2), rng);
  const Tensor x = random_tensor({1, 8, 8, 2}, rng, -1, 1, DType::f64);
  const Tensor w = random_tensor({1, 4, 4, 4}, rng, -1, 1, DType::f64);
  auto objective = [&](const Binding& b, const Var& in) { return sum_all(mul(l.forward(b, in).y, Var(w))); };

  // parameters only, input held fixed
  std::vector<Tensor> params;
  for (const auto& p : reg.values()) params.push_back(p.to(DType::f64));
  const auto rep = grad_check([&](const std::vector<Var>& in) { return objective(Binding(in), Var(x)); }, params);
  CHECK(rep.max_rel_error < 1e-4);

  // the 2-channel stem norm squashes every pixel to about (+-1, -+1), so the
  // input gradient is checked against the gradient scale instead of per component
  Tape tape;
  std::vector<Var> pv;
  for (const auto& p : params) pv.emplace_back(p);
  const Var xv = tape.leaf(x);
  tape.backward(objective(Binding(pv), xv));
  const Tensor gx = tape.grad(xv);
  double scale = 0, worst = 0;
  for (std::int64_t i = 0; i < gx.numel(); ++i) scale = std::max(scale, std::abs(gx.flat(i)));
  const double h = 1e-5;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    std::vector<double> up = x.to_vector(), dn = up;
    up[static_cast<std::size_t>(i)] += h;
    dn[static_cast<std::size_t>(i)] -= h;
    const double fu = objective(Binding(pv), Var(Tensor::from(x.shape(), up))).value().item();
    const double fd = objective(Binding(pv), Var(Tensor::from(x.shape(), dn))).value().item();
    worst = std::max(worst, std::abs((fu - fd) / (2 * h) - gx.flat(i)));
  }
  CHECK(worst < 1e-4 * scale);
}
