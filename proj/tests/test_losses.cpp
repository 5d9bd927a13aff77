#include "doctest.h"

#include <cmath>

#include "fct/grad_check.hpp"
#include "fct/losses.hpp"
#include "helpers.hpp"

using namespace fct;
using fct::test::random_tensor;

namespace {

// left half class 0, right half class 1; stays balanced under nearest downsampling
Labels balanced(std::int64_t n, std::int64_t h, std::int64_t w) {
  Labels l(n, h, w);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) l.at(b, y, x) = x >= w / 2;
  return l;
}

Tensor saturated_logits(const Labels& l, int classes, double margin) {
  std::vector<double> v(static_cast<std::size_t>(l.size() * classes), 0.0);
  for (std::int64_t i = 0; i < l.size(); ++i) v[static_cast<std::size_t>(i * classes + l.data[static_cast<std::size_t>(i)])] = margin;
  return Tensor::from({l.n, l.h, l.w, classes}, v);
}

// cross entropy and soft dice written directly from the definitions
double reference_loss(const Tensor& logits, const Labels& t) {
  const std::int64_t k = logits.dim(3), px = t.size();
  std::vector<double> inter(static_cast<std::size_t>(k)), ps(inter), ts(inter);
  double ce = 0;
  for (std::int64_t i = 0; i < px; ++i) {
    double m = -INFINITY, z = 0;
    for (std::int64_t c = 0; c < k; ++c) m = std::max(m, logits.flat(i * k + c));
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(logits.flat(i * k + c) - m);
    const auto y = static_cast<std::size_t>(t.data[static_cast<std::size_t>(i)]);
    for (std::int64_t c = 0; c < k; ++c) {
      const double p = std::exp(logits.flat(i * k + c) - m) / z;
      ps[static_cast<std::size_t>(c)] += p;
      if (static_cast<std::size_t>(c) == y) {
        inter[y] += p;
        ce -= std::log(p);
      }
    }
    ts[y] += 1;
  }
  double dice = 0;
  for (std::size_t c = 0; c < inter.size(); ++c) dice += (2 * inter[c] + kDiceSmooth) / (ps[c] + ts[c] + kDiceSmooth);
  return 0.5 * ce / static_cast<double>(px) + 0.5 * (1 - dice / static_cast<double>(k));
}

}  // namespace

TEST_CASE("uniform logits on a balanced two-class target give 0.5966") {
  const Labels t = balanced(1, 8, 8);
  const double l = segmentation_loss(Var(Tensor::zeros({1, 8, 8, 2}, DType::f64)), t).value().item();
  CHECK(l == doctest::Approx(0.5 * std::log(2.0) + 0.25).epsilon(1e-7));
  CHECK(std::abs(l - 0.5966) < 1e-3);
  const std::vector<ScaleOutput> outs{{1, Var(Tensor::zeros({1, 8, 8, 2}, DType::f64))}, {2, Var(Tensor::zeros({1, 4, 4, 2}, DType::f64))}};
  CHECK(std::abs(combined_loss(outs, t).value().item() - 0.5966) < 1e-3);
}

TEST_CASE("saturated correct logits drive the loss below 1e-6") {
  Labels t(2, 4, 4);
  for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<std::int32_t>(i % 3);
  const double l = segmentation_loss(Var(saturated_logits(t, 3, 20.0).to(DType::f64)), t).value().item();
  CHECK(l >= 0.0);
  CHECK(l < 1e-6);
}

TEST_CASE("loss matches the reference definition and rejects bad labels") {
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const int k = 2 + trial % 3;
    Labels t(2, 3, 5);
    for (auto& v : t.data) v = static_cast<std::int32_t>(rng.integer(0, k - 1));
    const Tensor logits = random_tensor({2, 3, 5, k}, rng, -3, 3, DType::f64);
    CHECK(segmentation_loss(Var(logits), t).value().item() == doctest::Approx(reference_loss(logits, t)).epsilon(1e-10));
  }
  Labels bad(1, 2, 2);
  bad.data[3] = 5;
  CHECK_THROWS_AS(segmentation_loss(Var(Tensor::zeros({1, 2, 2, 3})), bad), ValueError);
  CHECK_THROWS_AS(segmentation_loss(Var(Tensor::zeros({1, 3, 2, 3})), Labels(1, 2, 2)), ShapeError);
}

TEST_CASE("combined loss gradient check on 1x4x4 logits") {
  Rng rng(2);
  Labels t(1, 4, 4);
  for (auto& v : t.data) v = static_cast<std::int32_t>(rng.integer(0, 2));
  const auto rep = grad_check(
      [&](const std::vector<Var>& in) {
        return combined_loss({{1, in[0]}, {2, in[1]}}, t);
      },
      {random_tensor({1, 4, 4, 3}, rng, -2, 2, DType::f64), random_tensor({1, 2, 2, 3}, rng, -2, 2, DType::f64)});
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("property: combined loss is nonnegative") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Labels t(1, 4, 4);
    for (auto& v : t.data) v = static_cast<std::int32_t>(rng.integer(0, 3));
    const Tensor logits = random_tensor({1, 4, 4, 4}, rng, -10, 10, DType::f64);
    CHECK(segmentation_loss(Var(logits), t).value().item() >= 0.0);
  }
}

TEST_CASE("nearest downsampling keeps cell centres") {
  Labels t(1, 4, 4);
  for (std::int64_t i = 0; i < 16; ++i) t.data[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(i);
  const Labels d = downsample_nearest(t, 2);
  CHECK(d.h == 2);
  CHECK(d.data == std::vector<std::int32_t>{5, 7, 13, 15});
}

TEST_CASE("argmax ties go to the lowest class") {
  const Tensor logits = Tensor::from({1, 1, 2, 3}, std::vector<float>{1, 1, 0, 0, 2, 2});
  CHECK(argmax_labels(logits).data == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("dice examples") {
  Labels t(1, 1, 8), p(1, 1, 8);
  for (int i = 0; i < 4; ++i) t.data[static_cast<std::size_t>(i)] = 1;
  SUBCASE("identical masks") { CHECK(dice_coefficient(t, t, 2).per_class[1] == doctest::Approx(1.0)); }
  SUBCASE("disjoint masks") {
    for (int i = 4; i < 8; ++i) p.data[static_cast<std::size_t>(i)] = 1;
    CHECK(dice_coefficient(p, t, 2).per_class[1] < 1e-6);
  }
  SUBCASE("half coverage gives two thirds") {
    p.data[0] = p.data[1] = 1;
    CHECK(dice_coefficient(p, t, 2).per_class[1] == doctest::Approx(2.0 / 3).epsilon(1e-6));
  }
  SUBCASE("mean is over foreground classes") {
    Labels t3(1, 1, 3), p3(1, 1, 3);
    t3.data = {0, 1, 2};
    p3.data = {0, 1, 1};
    const auto d = dice_coefficient(p3, t3, 3);
    CHECK(d.mean_foreground == doctest::Approx((2.0 / 3 + 0.0) / 2).epsilon(1e-6));
  }
  CHECK_THROWS_AS(dice_coefficient(Labels(1, 1, 7), t, 2), ShapeError);
}

TEST_CASE("property: dice is symmetric and invariant to a shared pixel permutation") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Labels a(1, 4, 5), b(1, 4, 5);
    for (auto& v : a.data) v = static_cast<std::int32_t>(rng.integer(0, 3));
    for (auto& v : b.data) v = static_cast<std::int32_t>(rng.integer(0, 3));
    const auto ab = dice_coefficient(a, b, 4), ba = dice_coefficient(b, a, 4);
    CHECK(ab.per_class == ba.per_class);
    Labels pa = a, pb = b;
    for (std::size_t i = a.data.size() - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)));
      std::swap(pa.data[i], pa.data[j]);
      std::swap(pb.data[i], pb.data[j]);
    }
    const auto perm = dice_coefficient(pa, pb, 4);
    for (std::size_t c = 0; c < 4; ++c) CHECK(perm.per_class[c] == doctest::Approx(ab.per_class[c]).epsilon(1e-12));
  }
}

TEST_CASE("sensitivity and specificity") {
  Labels t(1, 1, 10), p(1, 1, 10);
  // TP=3, FN=1, TN=5, FP=1
  t.data = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0};
  p.data = {1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
  const auto s = sensitivity_specificity(p, t);
  CHECK(s.sensitivity == doctest::Approx(0.75));
  CHECK(s.specificity == doctest::Approx(5.0 / 6));
  const auto same = sensitivity_specificity(t, t);
  CHECK(same.sensitivity == 1.0);
  CHECK(same.specificity == 1.0);
  Labels all(1, 1, 10, 1);
  const auto pos = sensitivity_specificity(all, t);
  CHECK(pos.sensitivity == 1.0);
  CHECK(pos.specificity == 0.0);
  // no positives at all: the empty denominator convention
  const auto empty = sensitivity_specificity(Labels(1, 1, 4), Labels(1, 1, 4));
  CHECK(empty.sensitivity == 1.0);
}
