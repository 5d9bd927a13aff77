#include "fct/losses.hpp"

#include <algorithm>

namespace fct {

Labels Labels::image(std::int64_t b) const {
  Labels out(1, h, w);
  const auto begin = data.begin() + static_cast<std::ptrdiff_t>(b * h * w);
  std::copy(begin, begin + static_cast<std::ptrdiff_t>(h * w), out.data.begin());
  return out;
}

void check_labels(const Labels& labels, int classes) {
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    const auto v = labels.data[i];
    if (v < 0 || v >= classes)
      throw ValueError("label " + std::to_string(v) + " at flat index " + std::to_string(i) + " is outside [0, " +
                       std::to_string(classes) + ")");
  }
}

Labels downsample_nearest(const Labels& labels, int factor) {
  if (factor == 1) return labels;
  if (factor < 1 || labels.h % factor || labels.w % factor)
    throw ShapeError("downsample_nearest: " + std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                     " not divisible by " + std::to_string(factor));
  Labels out(labels.n, labels.h / factor, labels.w / factor);
  for (std::int64_t b = 0; b < out.n; ++b)
    for (std::int64_t y = 0; y < out.h; ++y)
      for (std::int64_t x = 0; x < out.w; ++x) out.at(b, y, x) = labels.at(b, y * factor + factor / 2, x * factor + factor / 2);
  return out;
}

Labels concat_labels(const std::vector<const Labels*>& parts) {
  Labels out;
  for (const auto* p : parts) {
    if (p->n == 0) continue;
    if (out.n == 0) {
      out.h = p->h;
      out.w = p->w;
    }
    if (p->h != out.h || p->w != out.w) throw ShapeError("concat_labels: spatial size mismatch");
    out.n += p->n;
    out.data.insert(out.data.end(), p->data.begin(), p->data.end());
  }
  return out;
}

Tensor one_hot(const Labels& labels, int classes, DType dtype) {
  check_labels(labels, classes);
  Tensor t = Tensor::zeros({labels.n, labels.h, labels.w, classes}, dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    for (std::size_t i = 0; i < labels.data.size(); ++i) d[i * static_cast<std::size_t>(classes) + static_cast<std::size_t>(labels.data[i])] = T(1);
  });
  return t;
}

Labels argmax_labels(const Tensor& logits) {
  const auto& s = logits.shape();
  if (s.size() != 4) throw ShapeError("argmax_labels: expected (N, H, W, K), got " + shape_str(s));
  Labels out(s[0], s[1], s[2]);
  const auto k = static_cast<std::size_t>(s[3]);
  dispatch(logits.dtype(), [&]<typename T>() {
    auto d = logits.data<T>();
    for (std::size_t p = 0; p < out.data.size(); ++p) {
      const T* row = d.data() + p * k;
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (row[c] > row[best]) best = c;
      out.data[p] = static_cast<std::int32_t>(best);
    }
  });
  return out;
}

Var segmentation_loss(const Var& logits, const Labels& target) {
  const auto& s = logits.shape();
  if (s.size() != 4 || s[0] != target.n || s[1] != target.h || s[2] != target.w)
    throw ShapeError("loss: logits " + shape_str(s) + " do not match target " + std::to_string(target.n) + "x" +
                     std::to_string(target.h) + "x" + std::to_string(target.w));
  const int classes = static_cast<int>(s[3]);
  const Tensor t = one_hot(target, classes, logits.dtype());
  const double pixels = static_cast<double>(target.size());

  const Var ce = mul_scalar(sum_all(mul(Var(t), log_softmax(logits, -1))), -1.0 / pixels);

  const Var probs = softmax(logits, -1);
  const Var inter = sum(mul(probs, Var(t)), {0, 1, 2});
  const Var psum = sum(probs, {0, 1, 2});
  const Tensor tsum = sum(Var(t), {0, 1, 2}).value();
  const Var dice = div(add_scalar(mul_scalar(inter, 2.0), kDiceSmooth), add_scalar(add(psum, Var(tsum)), kDiceSmooth));
  const Var dice_loss = add_scalar(mul_scalar(mean_all(dice), -1.0), 1.0);
  return add(mul_scalar(ce, 0.5), mul_scalar(dice_loss, 0.5));
}

Var combined_loss(const std::vector<ScaleOutput>& outputs, const Labels& target) {
  if (outputs.empty()) throw ValueError("combined_loss: no outputs");
  Var total;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const Var l = segmentation_loss(outputs[i].logits, downsample_nearest(target, outputs[i].divisor));
    total = i == 0 ? l : add(total, l);
  }
  return mul_scalar(total, 1.0 / static_cast<double>(outputs.size()));
}

DiceResult dice_coefficient(const Labels& pred, const Labels& target, int classes) {
  if (pred.n != target.n || pred.h != target.h || pred.w != target.w)
    throw ShapeError("dice: prediction and target shapes differ");
  std::vector<double> inter(static_cast<std::size_t>(classes), 0.0), ps(inter), ts(inter);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const auto p = static_cast<std::size_t>(pred.data[i]);
    const auto t = static_cast<std::size_t>(target.data[i]);
    if (p >= ps.size() || t >= ts.size()) throw ValueError("dice: label outside [0, " + std::to_string(classes) + ")");
    ps[p] += 1;
    ts[t] += 1;
    if (p == t) inter[p] += 1;
  }
  DiceResult r;
  for (std::size_t c = 0; c < inter.size(); ++c)
    r.per_class.push_back((2.0 * inter[c] + kDiceSmooth) / (ps[c] + ts[c] + kDiceSmooth));
  double acc = 0.0;
  for (std::size_t c = 1; c < r.per_class.size(); ++c) acc += r.per_class[c];
  r.mean_foreground = classes > 1 ? acc / (classes - 1) : r.per_class[0];
  return r;
}

DiceResult dice_per_image(const Labels& pred, const Labels& target, int classes) {
  if (pred.n != target.n) throw ShapeError("dice: prediction and target batch sizes differ");
  DiceResult r;
  r.per_class.assign(static_cast<std::size_t>(classes), 0.0);
  if (pred.n == 0) return r;
  for (std::int64_t b = 0; b < pred.n; ++b) {
    const DiceResult one = dice_coefficient(pred.image(b), target.image(b), classes);
    for (std::size_t c = 0; c < r.per_class.size(); ++c) r.per_class[c] += one.per_class[c];
    r.mean_foreground += one.mean_foreground;
  }
  for (auto& v : r.per_class) v /= static_cast<double>(pred.n);
  r.mean_foreground /= static_cast<double>(pred.n);
  return r;
}

SensSpec sensitivity_specificity(const Labels& pred, const Labels& target) {
  if (pred.data.size() != target.data.size()) throw ShapeError("sensitivity_specificity: shapes differ");
  std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] > 0, t = target.data[i] > 0;
    tp += p && t;
    fn += !p && t;
    tn += !p && !t;
    fp += p && !t;
  }
  SensSpec r;
  if (tp + fn) r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tn + fp) r.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
  return r;
}

}  // namespace fct
