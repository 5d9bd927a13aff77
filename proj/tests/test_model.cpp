#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <set>

#include "fct/losses.hpp"
#include "helpers.hpp"

using namespace fct;
using fct::test::max_abs_diff;
using fct::test::random_tensor;

namespace fs = std::filesystem;

namespace {

std::vector<std::pair<int, Shape>> output_scales(const ModelConfig& cfg) {
  const Model m(cfg, 1);
  std::vector<std::pair<int, Shape>> r;
  for (const auto& o : m.forward(Binding::meta(m.params()), Var(Tensor::meta({1, cfg.input_h, cfg.input_w, cfg.in_channels}))))
    r.emplace_back(o.divisor, o.logits.shape());
  return r;
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("fct_test_" + name);
  fs::remove_all(p);
  return p;
}

// tiny but complete: every stage, pyramid and heads present
ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::scaled(64, 3);
  c.stage_filters = {4, 4, 6, 6, 8, 6, 6, 4, 4};
  c.stage_heads = {2, 2, 2, 2, 2, 2, 2, 2, 2};
  return c;
}

}  // namespace

TEST_CASE("deep supervision modes emit the documented scales") {
  for (int size : {224, 64}) {
    ModelConfig c;
    c.input_h = c.input_w = size;
    c.deep_supervision = DeepSupervision::partial;
    auto outs = output_scales(c);
    REQUIRE(outs.size() == 3);
    for (int i = 0; i < 3; ++i) {
      CHECK(outs[static_cast<std::size_t>(i)].first == (1 << i));
      CHECK(outs[static_cast<std::size_t>(i)].second == Shape{1, size >> i, size >> i, 4});
    }
    c.deep_supervision = DeepSupervision::full;
    outs = output_scales(c);
    REQUIRE(outs.size() == 4);
    CHECK(outs.back().second == Shape{1, size / 8, size / 8, 4});
    c.deep_supervision = DeepSupervision::off;
    outs = output_scales(c);
    REQUIRE(outs.size() == 1);
    CHECK(outs[0].second == Shape{1, size, size, 4});
  }
}

TEST_CASE("stage resolutions at 224 follow the encoder/decoder table") {
  const Model m(ModelConfig{}, 1);
  const Profile p = m.profile();
  const std::int64_t expect[9] = {112, 56, 28, 14, 14, 28, 56, 112, 224};
  REQUIRE(p.stages.size() == 10);
  for (int i = 0; i < 9; ++i) CHECK(p.stages[static_cast<std::size_t>(i)].output[1] == expect[i]);
  // the extent entering encoder stage i is the one leaving decoder stage 10-i
  for (int i = 0; i < 4; ++i)
    CHECK(p.stages[static_cast<std::size_t>(i)].input[1] == p.stages[static_cast<std::size_t>(8 - i)].output[1]);
  CHECK(m.layer(4).attention().config().resolved_head_dim() == 24);
  CHECK(p.stages[5].output == Shape{1, 28, 28, 128});
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.input_h = 100;
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = ModelConfig{};
  c.num_classes = 1;
  CHECK_THROWS_AS(c.validate(), ValueError);
  c = ModelConfig{};
  c.kv_strides[8] = 3;
  CHECK_THROWS_AS(c.validate(), ValueError);
  CHECK_THROWS_AS(parse_ds("sometimes"), ValueError);
}

TEST_CASE("parameter count sits inside the published band and is size invariant") {
  ModelConfig c;
  const Model m(c, 1);
  const auto n = m.params().parameter_count();
  CHECK(n >= 10'000'000);
  CHECK(n <= 40'000'000);
  c.input_h = c.input_w = 448;
  const Model big(c, 1);
  CHECK(big.params().parameter_count() == n);
  CHECK(big.profile().param_count == n);
}

TEST_CASE("profile: convolution FLOPs scale with the pixel count") {
  ModelConfig c;
  const auto small = Model(c, 1).profile();
  c.input_h = c.input_w = 448;
  const auto big = Model(c, 1).profile();
  const double ratio = static_cast<double>(big.flops.conv) / static_cast<double>(small.flops.conv);
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
  CHECK(small.flops.total() > 0);
  const std::string text = format_profile(ModelConfig{}, small);
  CHECK(text.find("31.7M") != std::string::npos);
  CHECK(text.find("7.87") != std::string::npos);
}

TEST_CASE("profile of a single 3x3 conv follows the counting convention") {
  ParamRegistry reg;
  Rng rng(1);
  Conv2dSpec s;
  s.in_channels = s.out_channels = 1;
  const Conv2d conv(reg, "c", s, rng);
  CHECK(reg.parameter_count() == 10);
  FlopCounter fc;
  {
    FlopScope scope(fc);
    conv(Binding::meta(reg), Var(Tensor::meta({1, 4, 4, 1})));
  }
  CHECK(fc.conv == 288);
}

TEST_CASE("zero input with zero biases gives uniform softmax") {
  Model m(tiny_config(), 2);
  auto& reg = m.params();
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg.name(i).ends_with(".bias") || reg.name(i).ends_with(".beta"))
      reg.set(ParamRef{i}, Tensor::zeros(reg.values()[i].shape()));
  for (const auto& o : m.forward(Tensor::zeros({1, 64, 64, 1}))) {
    CHECK(max_abs_diff(o.logits.value(), Tensor::zeros(o.logits.shape())) == 0.0);
    const Tensor p = softmax(o.logits, -1).value();
    CHECK(max_abs_diff(p, Tensor::full(p.shape(), 1.0 / 3)) < 1e-7);
  }
}

TEST_CASE("parameter names are unique and registration order is stable") {
  const Model a(tiny_config(), 3), b(tiny_config(), 3);
  CHECK(a.params().names() == b.params().names());
  std::set<std::string> uniq(a.params().names().begin(), a.params().names().end());
  CHECK(uniq.size() == a.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params().values()[i].bit_equal(b.params().values()[i]));
}

TEST_CASE("checkpoint round trip, byte determinism and brute-force parameter count") {
  const Model m(tiny_config(), 4);
  const auto d1 = scratch("ckpt1"), d2 = scratch("ckpt2");
  save_checkpoint(m, d1);
  save_checkpoint(m, d2);
  std::int64_t brute = 0;
  for (const auto& e : fs::directory_iterator(d1)) {
    if (e.path().extension() != ".fctt") continue;
    const auto t = load_fctt(e.path());
    brute += t.numel();
    std::ifstream a(e.path(), std::ios::binary), b(d2 / e.path().filename(), std::ios::binary);
    const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
  CHECK(brute == m.params().parameter_count());
  CHECK(brute == m.profile().param_count);

  const Model back = load_checkpoint(d1);
  CHECK(back.params().names() == m.params().names());
  Rng rng(5);
  const Tensor x = random_tensor({1, 64, 64, 1}, rng, 0, 1);
  const auto o1 = m.forward(x), o2 = back.forward(x);
  REQUIRE(o1.size() == o2.size());
  for (std::size_t i = 0; i < o1.size(); ++i) CHECK(o1[i].logits.value().bit_equal(o2[i].logits.value()));
  fs::remove_all(d2);

  const std::string victim = m.params().name(3);
  fs::remove(d1 / (victim + ".fctt"));
  try {
    load_checkpoint(d1);
    FAIL("expected an error");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find(victim) != std::string::npos);
  }
  fs::remove_all(d1);
  CHECK_THROWS_AS(load_checkpoint(d1), IoError);
}

TEST_CASE("checkpoint with a wrong-shaped tensor names it") {
  const Model m(tiny_config(), 6);
  const auto dir = scratch("ckpt_shape");
  save_checkpoint(m, dir);
  const std::string victim = m.params().name(0);
  save_fctt(Tensor::zeros({2, 2}), dir / (victim + ".fctt"));
  try {
    load_checkpoint(dir);
    FAIL("expected an error");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find(victim) != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("property: gradient reaches every registered parameter") {
  for (std::uint64_t trial = 0; trial < 3; ++trial) {
    ModelConfig c = tiny_config();
    c.deep_supervision = trial == 2 ? DeepSupervision::full : DeepSupervision::partial;
    const Model m(c, 10 + trial);
    Rng rng(20 + trial);
    const Tensor x = random_tensor({2, 64, 64, 1}, rng, 0, 1);
    Labels y(2, 64, 64);
    for (auto& v : y.data) v = static_cast<std::int32_t>(rng.integer(0, 2));
    Tape tape;
    const Binding b(m.params(), &tape);
    tape.backward(combined_loss(m.forward(b, Var(x)), y));
    for (std::size_t i = 0; i < m.params().size(); ++i) {
      INFO(m.params().name(i));
      const auto g = tape.grad(b.vars()[i]).to_vector();
      bool any = false;
      for (double v : g) any |= v != 0.0;
      CHECK(any);
    }
  }
}

TEST_CASE("final logits match the input extent for any valid size") {
  // the bottleneck grid must stay wider than the largest dilation reach
  for (int size : {64, 80, 112}) {
    ModelConfig c = tiny_config();
    c.input_h = size;
    c.input_w = size + 16;
    const Model m(c, 1);
    const auto outs = m.forward(Binding::meta(m.params()), Var(Tensor::meta({1, size, size + 16, 1})));
    CHECK(outs.front().logits.shape() == Shape{1, size, size + 16, 3});
  }
}
