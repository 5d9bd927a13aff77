#include "fct/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "kernels.hpp"

namespace fct {

namespace {

void require_rank(const char* op, const Var& x, std::size_t rank) {
  if (x.shape().size() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + " input, got " + shape_str(x.shape()));
}

void require_dtype(const char* op, const Var& a, const Var& b) {
  if (a.dtype() != b.dtype())
    throw ValueError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()));
}

}  // namespace

// --- convolution --------------------------------------------------------------

ConvGeometry conv_geometry(std::int64_t in_h, std::int64_t in_w, std::int64_t k_h, std::int64_t k_w, int stride_h,
                           int stride_w, int dilation_h, int dilation_w, Padding padding) {
  if (stride_h < 1 || stride_w < 1) throw ValueError("conv2d: stride must be >= 1");
  if (dilation_h < 1 || dilation_w < 1) throw ValueError("conv2d: dilation must be >= 1");
  const std::int64_t eff_h = (k_h - 1) * dilation_h + 1;
  const std::int64_t eff_w = (k_w - 1) * dilation_w + 1;
  ConvGeometry g{};
  if (padding == Padding::valid) {
    if (eff_h > in_h || eff_w > in_w)
      throw ShapeError("conv2d: effective kernel " + std::to_string(eff_h) + "x" + std::to_string(eff_w) +
                       " larger than padded input " + std::to_string(in_h) + "x" + std::to_string(in_w));
    g.out_h = (in_h - eff_h) / stride_h + 1;
    g.out_w = (in_w - eff_w) / stride_w + 1;
    return g;
  }
  g.out_h = (in_h + stride_h - 1) / stride_h;
  g.out_w = (in_w + stride_w - 1) / stride_w;
  const std::int64_t total_h = std::max<std::int64_t>((g.out_h - 1) * stride_h + eff_h - in_h, 0);
  const std::int64_t total_w = std::max<std::int64_t>((g.out_w - 1) * stride_w + eff_w - in_w, 0);
  if (in_h + total_h < eff_h || in_w + total_w < eff_w) throw ShapeError("conv2d: kernel larger than padded input");
  if (padding == Padding::same) {
    g.pad_top = total_h / 2;
    g.pad_left = total_w / 2;
  } else {
    g.pad_top = total_h - total_h / 2;
    g.pad_left = total_w - total_w / 2;
  }
  return g;
}

namespace {

struct ConvDims {
  std::int64_t n, h, w, cin, kh, kw, cout, groups, cig, cog, oh, ow;
  std::int64_t sh, sw, dh, dw, pt, pl;
  bool depthwise() const { return cig == 1 && cog == 1; }
};

template <typename T>
void conv_forward(const ConvDims& d, const T* x, const T* w, const T* b, T* out) {
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t oh = 0; oh < d.oh; ++oh)
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        T* o = out + ((n * d.oh + oh) * d.ow + ow) * d.cout;
        for (std::int64_t c = 0; c < d.cout; ++c) o[c] = b ? b[c] : T(0);
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
          const std::int64_t ih = oh * d.sh - d.pt + kh * d.dh;
          if (ih < 0 || ih >= d.h) continue;
          for (std::int64_t kw = 0; kw < d.kw; ++kw) {
            const std::int64_t iw = ow * d.sw - d.pl + kw * d.dw;
            if (iw < 0 || iw >= d.w) continue;
            const T* xp = x + ((n * d.h + ih) * d.w + iw) * d.cin;
            const T* wp = w + (kh * d.kw + kw) * d.cig * d.cout;
            if (d.depthwise()) {
              for (std::int64_t c = 0; c < d.cout; ++c) o[c] += xp[c] * wp[c];
            } else {
              for (std::int64_t g = 0; g < d.groups; ++g)
                for (std::int64_t ci = 0; ci < d.cig; ++ci)
                  kernels::axpy(o + g * d.cog, xp[g * d.cig + ci], wp + ci * d.cout + g * d.cog, d.cog);
            }
          }
        }
      }
}

template <typename T>
void conv_backward(const ConvDims& d, const T* x, const T* w, const T* gy, T* gx, T* gw, T* gb) {
  // Kernel transposed to [tap][C_out][C_in/groups] so the input-gradient
  // inner loop runs over contiguous input channels.
  std::vector<T> wt;
  if (gx && !d.depthwise()) {
    wt.resize(static_cast<std::size_t>(d.kh * d.kw * d.cout * d.cig));
    for (std::int64_t tap = 0; tap < d.kh * d.kw; ++tap)
      for (std::int64_t ci = 0; ci < d.cig; ++ci)
        for (std::int64_t co = 0; co < d.cout; ++co)
          wt[static_cast<std::size_t>((tap * d.cout + co) * d.cig + ci)] = w[(tap * d.cig + ci) * d.cout + co];
  }
  for (std::int64_t n = 0; n < d.n; ++n)
    for (std::int64_t oh = 0; oh < d.oh; ++oh)
      for (std::int64_t ow = 0; ow < d.ow; ++ow) {
        const T* g = gy + ((n * d.oh + oh) * d.ow + ow) * d.cout;
        if (gb)
          for (std::int64_t c = 0; c < d.cout; ++c) gb[c] += g[c];
        for (std::int64_t kh = 0; kh < d.kh; ++kh) {
          const std::int64_t ih = oh * d.sh - d.pt + kh * d.dh;
          if (ih < 0 || ih >= d.h) continue;
          for (std::int64_t kw = 0; kw < d.kw; ++kw) {
            const std::int64_t iw = ow * d.sw - d.pl + kw * d.dw;
            if (iw < 0 || iw >= d.w) continue;
            const std::int64_t tap = kh * d.kw + kw;
            const std::int64_t xoff = ((n * d.h + ih) * d.w + iw) * d.cin;
            if (d.depthwise()) {
              const T* wp = w + tap * d.cout;
              if (gx)
                for (std::int64_t c = 0; c < d.cout; ++c) gx[xoff + c] += g[c] * wp[c];
              if (gw) {
                T* gwp = gw + tap * d.cout;
                for (std::int64_t c = 0; c < d.cout; ++c) gwp[c] += x[xoff + c] * g[c];
              }
              continue;
            }
            for (std::int64_t grp = 0; grp < d.groups; ++grp) {
              if (gx)
                for (std::int64_t co = 0; co < d.cog; ++co)
                  kernels::axpy(gx + xoff + grp * d.cig, g[grp * d.cog + co],
                                wt.data() + (tap * d.cout + grp * d.cog + co) * d.cig, d.cig);
              if (gw)
                for (std::int64_t ci = 0; ci < d.cig; ++ci)
                  kernels::axpy(gw + (tap * d.cig + ci) * d.cout + grp * d.cog, x[xoff + grp * d.cig + ci],
                                g + grp * d.cog, d.cog);
            }
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& x, const ConvParams& p) {
  require_rank("conv2d", x, 4);
  require_rank("conv2d kernel", p.kernel, 4);
  require_dtype("conv2d", x, p.kernel);
  const Shape& ks = p.kernel.shape();
  ConvDims d{};
  d.n = x.shape()[0];
  d.h = x.shape()[1];
  d.w = x.shape()[2];
  d.cin = x.shape()[3];
  d.kh = ks[0];
  d.kw = ks[1];
  d.cig = ks[2];
  d.cout = ks[3];
  d.groups = p.groups;
  if (p.groups < 1 || d.cin % p.groups != 0 || d.cout % p.groups != 0 || d.cig * p.groups != d.cin)
    throw ShapeError("conv2d: kernel " + shape_str(ks) + " with groups=" + std::to_string(p.groups) +
                     " does not fit input " + shape_str(x.shape()));
  d.cog = d.cout / d.groups;
  const bool has_bias = p.has_bias();
  if (has_bias) {
    require_dtype("conv2d bias", x, p.bias);
    if (p.bias.shape() != Shape{d.cout})
      throw ShapeError("conv2d: bias " + shape_str(p.bias.shape()) + " does not match C_out=" + std::to_string(d.cout));
  }
  const ConvGeometry geo =
      conv_geometry(d.h, d.w, d.kh, d.kw, p.stride_h, p.stride_w, p.dilation_h, p.dilation_w, p.padding);
  d.oh = geo.out_h;
  d.ow = geo.out_w;
  d.pt = geo.pad_top;
  d.pl = geo.pad_left;
  d.sh = p.stride_h;
  d.sw = p.stride_w;
  d.dh = p.dilation_h;
  d.dw = p.dilation_w;
  const Shape out_shape{d.n, d.oh, d.ow, d.cout};
  count_flops(&FlopCounter::conv, 2 * d.n * d.oh * d.ow * d.cout * d.kh * d.kw * d.cig);
  if (x.is_meta() || p.kernel.is_meta()) return Var(Tensor::meta(out_shape, x.dtype()));

  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    std::vector<T> o(static_cast<std::size_t>(shape_numel(out_shape)));
    conv_forward<T>(d, x.value().data<T>().data(), p.kernel.value().data<T>().data(),
                    has_bias ? p.bias.value().data<T>().data() : nullptr, o.data());
    return Tensor::from(out_shape, std::move(o));
  });
  std::vector<Var> inputs{x, p.kernel};
  if (has_bias) inputs.push_back(p.bias);
  Tensor xv = x.value(), wv = p.kernel.value();
  return Tape::record("conv2d", std::move(out), inputs,
                      [d, xv, wv, has_bias](const Tensor& g, const std::vector<bool>& needs) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          std::vector<T> gx(needs[0] ? static_cast<std::size_t>(xv.numel()) : 0, T(0));
                          std::vector<T> gw(needs[1] ? static_cast<std::size_t>(wv.numel()) : 0, T(0));
                          const bool want_b = has_bias && needs[2];
                          std::vector<T> gb(want_b ? static_cast<std::size_t>(d.cout) : 0, T(0));
                          conv_backward<T>(d, xv.data<T>().data(), wv.data<T>().data(), g.data<T>().data(),
                                           needs[0] ? gx.data() : nullptr, needs[1] ? gw.data() : nullptr,
                                           want_b ? gb.data() : nullptr);
                          std::vector<Tensor> res(has_bias ? 3 : 2);
                          if (needs[0]) res[0] = Tensor::from(xv.shape(), std::move(gx));
                          if (needs[1]) res[1] = Tensor::from(wv.shape(), std::move(gw));
                          if (want_b) res[2] = Tensor::from(Shape{d.cout}, std::move(gb));
                          return res;
                        });
                      });
}

Var depthwise_conv2d(const Var& x, const ConvParams& p) {
  require_rank("depthwise_conv2d", x, 4);
  const std::int64_t c = x.shape()[3];
  if (p.groups != c || p.kernel.shape().size() != 4 || p.kernel.shape()[2] != 1 || p.kernel.shape()[3] != c)
    throw ShapeError("depthwise_conv2d: needs groups == C_in == C_out (C=" + std::to_string(c) + ", groups=" +
                     std::to_string(p.groups) + ", kernel " + shape_str(p.kernel.shape()) + ")");
  return conv2d(x, p);
}

// --- layer norm ---------------------------------------------------------------

Var layer_norm(const Var& x, const NormParams& n) {
  if (x.shape().empty()) throw ShapeError("layer_norm: scalar input");
  if (!(n.epsilon > 0.0)) throw ValueError("layer_norm: epsilon must be > 0");
  const std::int64_t c = x.shape().back();
  if (n.gamma.shape() != Shape{c} || n.beta.shape() != Shape{c})
    throw ShapeError("layer_norm: gamma/beta " + shape_str(n.gamma.shape()) + "/" + shape_str(n.beta.shape()) +
                     " do not match channel extent " + std::to_string(c));
  require_dtype("layer_norm", x, n.gamma);
  require_dtype("layer_norm", x, n.beta);
  count_flops(&FlopCounter::norm, 5 * x.value().numel());
  if (x.is_meta()) return Var(Tensor::meta(x.shape(), x.dtype()));
  const std::int64_t rows = c ? x.value().numel() / c : 0;
  // per-row inverse std is kept for the backward pass
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  Tensor xhat_t;
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    auto gd = n.gamma.value().data<T>();
    auto bd = n.beta.value().data<T>();
    std::vector<T> y(xd.size()), xh(xd.size());
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* xr = xd.data() + r * c;
      T mu = kernels::sum(xr, c) / static_cast<T>(c);
      T var = 0;
      for (std::int64_t j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= static_cast<T>(c);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(n.epsilon));
      (*inv_std)[static_cast<std::size_t>(r)] = inv;
      for (std::int64_t j = 0; j < c; ++j) {
        const T h = (xr[j] - mu) * inv;
        xh[static_cast<std::size_t>(r * c + j)] = h;
        y[static_cast<std::size_t>(r * c + j)] = gd[static_cast<std::size_t>(j)] * h + bd[static_cast<std::size_t>(j)];
      }
    }
    xhat_t = Tensor::from(x.shape(), std::move(xh));
    return Tensor::from(x.shape(), std::move(y));
  });
  Tensor gamma = n.gamma.value();
  return Tape::record("layer_norm", std::move(out), {x, n.gamma, n.beta},
                      [xhat_t, gamma, inv_std, rows, c](const Tensor& g, const std::vector<bool>& needs) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          auto gd = g.data<T>();
                          auto xh = xhat_t.data<T>();
                          auto gm = gamma.data<T>();
                          std::vector<T> gx(needs[0] ? gd.size() : 0), ggam(static_cast<std::size_t>(c), T(0)),
                              gbet(static_cast<std::size_t>(c), T(0));
                          std::vector<T> dxh(static_cast<std::size_t>(c));
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const T* gr = gd.data() + r * c;
                            const T* hr = xh.data() + r * c;
                            T m1 = 0, m2 = 0;
                            for (std::int64_t j = 0; j < c; ++j) {
                              const auto k = static_cast<std::size_t>(j);
                              ggam[k] += gr[j] * hr[j];
                              gbet[k] += gr[j];
                              dxh[k] = gr[j] * gm[k];
                              m1 += dxh[k];
                              m2 += dxh[k] * hr[j];
                            }
                            if (!needs[0]) continue;
                            m1 /= static_cast<T>(c);
                            m2 /= static_cast<T>(c);
                            const T inv = static_cast<T>((*inv_std)[static_cast<std::size_t>(r)]);
                            for (std::int64_t j = 0; j < c; ++j)
                              gx[static_cast<std::size_t>(r * c + j)] = inv * (dxh[static_cast<std::size_t>(j)] - m1 - hr[j] * m2);
                          }
                          std::vector<Tensor> res(3);
                          if (needs[0]) res[0] = Tensor::from(xhat_t.shape(), std::move(gx));
                          res[1] = Tensor::from(Shape{c}, std::move(ggam));
                          res[2] = Tensor::from(Shape{c}, std::move(gbet));
                          return res;
                        });
                      });
}

// --- pooling ------------------------------------------------------------------

Var max_pool2d(const Var& x) {
  require_rank("max_pool2d", x, 4);
  const auto& s = x.shape();
  const std::int64_t n = s[0], h = s[1], w = s[2], c = s[3];
  if (h % 2 || w % 2) throw ShapeError("max_pool2d: spatial extents must be even, got " + shape_str(s));
  const Shape out_shape{n, h / 2, w / 2, c};
  if (x.is_meta()) return Var(Tensor::meta(out_shape, x.dtype()));
  // flat input index of the winning element, per output element
  auto arg = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(shape_numel(out_shape)));
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    std::vector<T> o(arg->size());
    std::size_t k = 0;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t oh = 0; oh < h / 2; ++oh)
        for (std::int64_t ow = 0; ow < w / 2; ++ow)
          for (std::int64_t ch = 0; ch < c; ++ch, ++k) {
            std::int64_t best = -1;
            for (std::int64_t dy = 0; dy < 2; ++dy)
              for (std::int64_t dx = 0; dx < 2; ++dx) {
                const std::int64_t idx = ((b * h + 2 * oh + dy) * w + 2 * ow + dx) * c + ch;
                if (best < 0 || xd[static_cast<std::size_t>(idx)] > xd[static_cast<std::size_t>(best)]) best = idx;
              }
            (*arg)[k] = best;
            o[k] = xd[static_cast<std::size_t>(best)];
          }
    return Tensor::from(out_shape, std::move(o));
  });
  Shape in_shape = s;
  return Tape::record("max_pool2d", std::move(out), {x}, [arg, in_shape](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      std::vector<T> gx(static_cast<std::size_t>(shape_numel(in_shape)), T(0));
      for (std::size_t k = 0; k < gd.size(); ++k) gx[static_cast<std::size_t>((*arg)[k])] += gd[k];
      return std::vector<Tensor>{Tensor::from(in_shape, std::move(gx))};
    });
  });
}

Var avg_pool2d(const Var& x, int factor) {
  require_rank("avg_pool2d", x, 4);
  const auto& s = x.shape();
  const std::int64_t n = s[0], h = s[1], w = s[2], c = s[3], f = factor;
  if (f < 1 || h % f || w % f)
    throw ShapeError("avg_pool2d: extents of " + shape_str(s) + " not divisible by " + std::to_string(factor));
  const Shape out_shape{n, h / f, w / f, c};
  if (x.is_meta()) return Var(Tensor::meta(out_shape, x.dtype()));
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    std::vector<T> o(static_cast<std::size_t>(shape_numel(out_shape)), T(0));
    const T inv = T(1) / static_cast<T>(f * f);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ih = 0; ih < h; ++ih)
        for (std::int64_t iw = 0; iw < w; ++iw) {
          T* op = o.data() + ((b * (h / f) + ih / f) * (w / f) + iw / f) * c;
          const T* xp = xd.data() + ((b * h + ih) * w + iw) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) op[ch] += xp[ch] * inv;
        }
    return Tensor::from(out_shape, std::move(o));
  });
  Shape in_shape = s;
  return Tape::record("avg_pool2d", std::move(out), {x}, [in_shape, f](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      const std::int64_t n = in_shape[0], h = in_shape[1], w = in_shape[2], c = in_shape[3];
      const T inv = T(1) / static_cast<T>(f * f);
      std::vector<T> gx(static_cast<std::size_t>(shape_numel(in_shape)));
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ih = 0; ih < h; ++ih)
          for (std::int64_t iw = 0; iw < w; ++iw) {
            const T* gp = gd.data() + ((b * (h / f) + ih / f) * (w / f) + iw / f) * c;
            T* xp = gx.data() + ((b * h + ih) * w + iw) * c;
            for (std::int64_t ch = 0; ch < c; ++ch) xp[ch] = gp[ch] * inv;
          }
      return std::vector<Tensor>{Tensor::from(in_shape, std::move(gx))};
    });
  });
}

// --- activations --------------------------------------------------------------

namespace {

template <typename T>
inline T tanh_fast(T u) {
  if constexpr (std::is_same_v<T, float>)
    return 1.0f - 2.0f / (1.0f + kernels::exp_approx(2.0f * u));
  else
    return std::tanh(u);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var gelu(const Var& x) {
  count_flops(&FlopCounter::activation, 10 * x.value().numel());
  if (x.is_meta()) return Var(Tensor::meta(x.shape(), x.dtype()));
  Tensor xv = x.value();
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = xv.data<T>();
    std::vector<T> y(xd.size());
    const T c = static_cast<T>(kGeluC), a = static_cast<T>(kGeluA);
    for (std::size_t i = 0; i < xd.size(); ++i) {
      const T v = xd[i];
      y[i] = T(0.5) * v * (T(1) + tanh_fast(c * (v + a * v * v * v)));
    }
    return Tensor::from(xv.shape(), std::move(y));
  });
  return Tape::record("gelu", std::move(out), {x}, [xv](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto xd = xv.data<T>();
      auto gd = g.data<T>();
      std::vector<T> gx(xd.size());
      const T c = static_cast<T>(kGeluC), a = static_cast<T>(kGeluA);
      for (std::size_t i = 0; i < xd.size(); ++i) {
        const T v = xd[i];
        const T t = tanh_fast(c * (v + a * v * v * v));
        const T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
        gx[i] = gd[i] * d;
      }
      return std::vector<Tensor>{Tensor::from(xv.shape(), std::move(gx))};
    });
  });
}

namespace {

struct AxisSplit {
  std::int64_t outer, len, inner;
};

AxisSplit split_axis(const char* op, const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  if (axis < -r || axis >= r) throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(s));
  const auto a = static_cast<std::size_t>(axis < 0 ? axis + r : axis);
  AxisSplit sp{1, s[a], 1};
  for (std::size_t i = 0; i < a; ++i) sp.outer *= s[i];
  for (std::size_t i = a + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

// Applies fn(ptr, stride) to every line along the split axis.
template <typename T, typename Fn>
void for_each_line(const AxisSplit& sp, T* base, Fn&& fn) {
  for (std::int64_t o = 0; o < sp.outer; ++o)
    for (std::int64_t i = 0; i < sp.inner; ++i) fn(base + o * sp.len * sp.inner + i, sp.inner);
}

}  // namespace

Var softmax(const Var& x, int axis) {
  const AxisSplit sp = split_axis("softmax", x.shape(), axis);
  count_flops(&FlopCounter::activation, 10 * x.value().numel());
  if (x.is_meta()) return Var(Tensor::meta(x.shape(), x.dtype()));
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    std::vector<T> y(xd.begin(), xd.end());
    for_each_line(sp, y.data(), [&](T* p, std::int64_t st) {
      T m = p[0];
      for (std::int64_t j = 1; j < sp.len; ++j) m = std::max(m, p[j * st]);
      T s = 0;
      for (std::int64_t j = 0; j < sp.len; ++j) s += (p[j * st] = std::exp(p[j * st] - m));
      for (std::int64_t j = 0; j < sp.len; ++j) p[j * st] /= s;
    });
    return Tensor::from(x.shape(), std::move(y));
  });
  Tensor yv = out;
  return Tape::record("softmax", std::move(out), {x}, [yv, sp](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto yd = yv.data<T>();
      auto gd = g.data<T>();
      std::vector<T> gx(gd.begin(), gd.end());
      for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const std::int64_t base = o * sp.len * sp.inner + i;
          T dotv = 0;
          for (std::int64_t j = 0; j < sp.len; ++j)
            dotv += gd[static_cast<std::size_t>(base + j * sp.inner)] * yd[static_cast<std::size_t>(base + j * sp.inner)];
          for (std::int64_t j = 0; j < sp.len; ++j) {
            const auto k = static_cast<std::size_t>(base + j * sp.inner);
            gx[k] = yd[k] * (gd[k] - dotv);
          }
        }
      return std::vector<Tensor>{Tensor::from(yv.shape(), std::move(gx))};
    });
  });
}

Var log_softmax(const Var& x, int axis) {
  const AxisSplit sp = split_axis("log_softmax", x.shape(), axis);
  count_flops(&FlopCounter::activation, 10 * x.value().numel());
  if (x.is_meta()) return Var(Tensor::meta(x.shape(), x.dtype()));
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    std::vector<T> y(xd.begin(), xd.end());
    for_each_line(sp, y.data(), [&](T* p, std::int64_t st) {
      T m = p[0];
      for (std::int64_t j = 1; j < sp.len; ++j) m = std::max(m, p[j * st]);
      T s = 0;
      for (std::int64_t j = 0; j < sp.len; ++j) s += std::exp(p[j * st] - m);
      const T lse = m + std::log(s);
      for (std::int64_t j = 0; j < sp.len; ++j) p[j * st] -= lse;
    });
    return Tensor::from(x.shape(), std::move(y));
  });
  Tensor yv = out;
  return Tape::record("log_softmax", std::move(out), {x}, [yv, sp](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto yd = yv.data<T>();
      auto gd = g.data<T>();
      std::vector<T> gx(gd.size());
      for (std::int64_t o = 0; o < sp.outer; ++o)
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const std::int64_t base = o * sp.len * sp.inner + i;
          T gs = 0;
          for (std::int64_t j = 0; j < sp.len; ++j) gs += gd[static_cast<std::size_t>(base + j * sp.inner)];
          for (std::int64_t j = 0; j < sp.len; ++j) {
            const auto k = static_cast<std::size_t>(base + j * sp.inner);
            gx[k] = gd[k] - std::exp(yd[k]) * gs;
          }
        }
      return std::vector<Tensor>{Tensor::from(yv.shape(), std::move(gx))};
    });
  });
}

// --- resampling and channel plumbing -----------------------------------------

Var upsample_nearest(const Var& x, int factor) {
  require_rank("upsample_nearest", x, 4);
  if (factor < 1) throw ValueError("upsample_nearest: factor must be >= 1");
  const auto& s = x.shape();
  const std::int64_t n = s[0], h = s[1], w = s[2], c = s[3], f = factor;
  const Shape out_shape{n, h * f, w * f, c};
  if (x.is_meta()) return Var(Tensor::meta(out_shape, x.dtype()));
  if (f == 1) return x;
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    std::vector<T> o(static_cast<std::size_t>(shape_numel(out_shape)));
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t oh = 0; oh < h * f; ++oh)
        for (std::int64_t ow = 0; ow < w * f; ++ow) {
          const T* xp = xd.data() + ((b * h + oh / f) * w + ow / f) * c;
          std::copy(xp, xp + c, o.data() + ((b * h * f + oh) * w * f + ow) * c);
        }
    return Tensor::from(out_shape, std::move(o));
  });
  Shape in_shape = s;
  return Tape::record("upsample_nearest", std::move(out), {x}, [in_shape, f](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      const std::int64_t n = in_shape[0], h = in_shape[1], w = in_shape[2], c = in_shape[3];
      std::vector<T> gx(static_cast<std::size_t>(shape_numel(in_shape)), T(0));
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t oh = 0; oh < h * f; ++oh)
          for (std::int64_t ow = 0; ow < w * f; ++ow) {
            const T* gp = gd.data() + ((b * h * f + oh) * w * f + ow) * c;
            T* xp = gx.data() + ((b * h + oh / f) * w + ow / f) * c;
            for (std::int64_t ch = 0; ch < c; ++ch) xp[ch] += gp[ch];
          }
      return std::vector<Tensor>{Tensor::from(in_shape, std::move(gx))};
    });
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_dtype("concat_channels", a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin()))
    throw ShapeError("concat_channels: mismatched shapes " + shape_str(sa) + " and " + shape_str(sb));
  const std::int64_t c1 = sa.back(), c2 = sb.back();
  Shape out_shape = sa;
  out_shape.back() = c1 + c2;
  if (a.is_meta() || b.is_meta()) return Var(Tensor::meta(out_shape, a.dtype()));
  const std::int64_t rows = c1 + c2 ? shape_numel(out_shape) / (c1 + c2) : 0;
  Tensor out = dispatch(a.dtype(), [&]<typename T>() {
    auto ad = a.value().data<T>();
    auto bd = b.value().data<T>();
    std::vector<T> o(static_cast<std::size_t>(shape_numel(out_shape)));
    for (std::int64_t r = 0; r < rows; ++r) {
      std::copy_n(ad.data() + r * c1, c1, o.data() + r * (c1 + c2));
      std::copy_n(bd.data() + r * c2, c2, o.data() + r * (c1 + c2) + c1);
    }
    return Tensor::from(out_shape, std::move(o));
  });
  return Tape::record("concat_channels", std::move(out), {a, b},
                      [sa, sb, rows, c1, c2](const Tensor& g, const std::vector<bool>& needs) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          auto gd = g.data<T>();
                          std::vector<Tensor> res(2);
                          if (needs[0]) {
                            std::vector<T> ga(static_cast<std::size_t>(rows * c1));
                            for (std::int64_t r = 0; r < rows; ++r) std::copy_n(gd.data() + r * (c1 + c2), c1, ga.data() + r * c1);
                            res[0] = Tensor::from(sa, std::move(ga));
                          }
                          if (needs[1]) {
                            std::vector<T> gb(static_cast<std::size_t>(rows * c2));
                            for (std::int64_t r = 0; r < rows; ++r)
                              std::copy_n(gd.data() + r * (c1 + c2) + c1, c2, gb.data() + r * c2);
                            res[1] = Tensor::from(sb, std::move(gb));
                          }
                          return res;
                        });
                      });
}

Var slice_channels(const Var& x, std::int64_t begin, std::int64_t end) {
  const Shape& s = x.shape();
  if (s.empty() || begin < 0 || end < begin || end > s.back())
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " + shape_str(s));
  const std::int64_t c = s.back(), k = end - begin;
  Shape out_shape = s;
  out_shape.back() = k;
  if (x.is_meta()) return Var(Tensor::meta(out_shape, x.dtype()));
  const std::int64_t rows = c ? x.value().numel() / c : 0;
  Tensor out = dispatch(x.dtype(), [&]<typename T>() {
    auto xd = x.value().data<T>();
    std::vector<T> o(static_cast<std::size_t>(rows * k));
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(xd.data() + r * c + begin, k, o.data() + r * k);
    return Tensor::from(out_shape, std::move(o));
  });
  return Tape::record("slice_channels", std::move(out), {x}, [s, rows, c, k, begin](const Tensor& g, const std::vector<bool>&) {
    return dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      std::vector<T> gx(static_cast<std::size_t>(rows * c), T(0));
      for (std::int64_t r = 0; r < rows; ++r) std::copy_n(gd.data() + r * k, k, gx.data() + r * c + begin);
      return std::vector<Tensor>{Tensor::from(s, std::move(gx))};
    });
  });
}

// --- attention ----------------------------------------------------------------

namespace {

struct AttnDims {
  std::int64_t batch, tq, tkv, d;
};

template <typename T>
void transpose_into(const T* src, std::int64_t rows, std::int64_t cols, T* dst) {
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

// One query row: probabilities into p[0..tkv).
template <typename T>
void attention_row(const T* q, const T* kt, std::int64_t tkv, std::int64_t d, T scale, T* p) {
  std::fill(p, p + tkv, T(0));
  for (std::int64_t c = 0; c < d; ++c) kernels::axpy(p, q[c] * scale, kt + c * tkv, tkv);
  const T m = kernels::max(p, tkv);
  for (std::int64_t j = 0; j < tkv; ++j) p[j] = kernels::exp_fast(p[j] - m);
  const T inv = T(1) / kernels::sum(p, tkv);
  for (std::int64_t j = 0; j < tkv; ++j) p[j] *= inv;
}

}  // namespace

Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v, double scale) {
  require_dtype("attention", q, k);
  require_dtype("attention", q, v);
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  const Shape& sv = v.shape();
  if (sq.size() != 4 || sk.size() != 4 || sv.size() != 4)
    throw ShapeError("attention: expected (N, heads, T, d) inputs, got " + shape_str(sq) + ", " + shape_str(sk) + ", " + shape_str(sv));
  if (sq[3] != sk[3]) throw ShapeError("attention: head dim mismatch between q " + shape_str(sq) + " and k " + shape_str(sk));
  if (sk != sv) throw ShapeError("attention: k " + shape_str(sk) + " and v " + shape_str(sv) + " differ");
  if (sq[0] != sk[0] || sq[1] != sk[1]) throw ShapeError("attention: batch/head extents differ");
  const AttnDims d{sq[0] * sq[1], sq[2], sk[2], sq[3]};
  count_flops(&FlopCounter::attention, 2 * (2 * d.batch * d.tq * d.tkv * d.d));
  if (q.is_meta() || k.is_meta() || v.is_meta()) return Var(Tensor::meta(sq, q.dtype()));
  Tensor out = dispatch(q.dtype(), [&]<typename T>() {
    auto qd = q.value().data<T>();
    auto kd = k.value().data<T>();
    auto vd = v.value().data<T>();
    std::vector<T> o(qd.size());
    std::vector<T> kt(static_cast<std::size_t>(d.tkv * d.d)), vt(kt.size());
    std::vector<T> row(static_cast<std::size_t>(d.tkv));
    const T sc = static_cast<T>(scale);
    for (std::int64_t b = 0; b < d.batch; ++b) {
      transpose_into(kd.data() + b * d.tkv * d.d, d.tkv, d.d, kt.data());
      transpose_into(vd.data() + b * d.tkv * d.d, d.tkv, d.d, vt.data());
      for (std::int64_t i = 0; i < d.tq; ++i) {
        attention_row(qd.data() + (b * d.tq + i) * d.d, kt.data(), d.tkv, d.d, sc, row.data());
        T* orow = o.data() + (b * d.tq + i) * d.d;
        for (std::int64_t c = 0; c < d.d; ++c) orow[c] = kernels::dot(row.data(), vt.data() + c * d.tkv, d.tkv);
      }
    }
    return Tensor::from(sq, std::move(o));
  });
  Tensor qv = q.value(), kv = k.value(), vv = v.value();
  // probabilities are recomputed row by row in backward rather than stored
  return Tape::record("attention", std::move(out), {q, k, v},
                      [d, qv, kv, vv, scale](const Tensor& g, const std::vector<bool>& needs) {
                        return dispatch(g.dtype(), [&]<typename T>() {
                          auto gd = g.data<T>();
                          auto qd = qv.data<T>();
                          auto kd = kv.data<T>();
                          auto vd = vv.data<T>();
                          const T sc = static_cast<T>(scale);
                          std::vector<T> gq(qd.size(), T(0)), gk(kd.size(), T(0)), gv(vd.size(), T(0));
                          std::vector<T> kt(static_cast<std::size_t>(d.tkv * d.d)), vt(kt.size());
                          std::vector<T> gkt(kt.size()), gvt(kt.size());
                          std::vector<T> dp(static_cast<std::size_t>(d.tkv));
                          std::vector<T> prow(static_cast<std::size_t>(d.tkv));
                          for (std::int64_t b = 0; b < d.batch; ++b) {
                            transpose_into(kd.data() + b * d.tkv * d.d, d.tkv, d.d, kt.data());
                            transpose_into(vd.data() + b * d.tkv * d.d, d.tkv, d.d, vt.data());
                            std::fill(gkt.begin(), gkt.end(), T(0));
                            std::fill(gvt.begin(), gvt.end(), T(0));
                            for (std::int64_t i = 0; i < d.tq; ++i) {
                              const T* go = gd.data() + (b * d.tq + i) * d.d;
                              const T* qi = qd.data() + (b * d.tq + i) * d.d;
                              attention_row(qi, kt.data(), d.tkv, d.d, sc, prow.data());
                              const T* p = prow.data();
                              // dV^T += dO_i (x) P_i ; dP = V dO_i
                              std::fill(dp.begin(), dp.end(), T(0));
                              for (std::int64_t c = 0; c < d.d; ++c) {
                                kernels::axpy(gvt.data() + c * d.tkv, go[c], p, d.tkv);
                                kernels::axpy(dp.data(), go[c], vt.data() + c * d.tkv, d.tkv);
                              }
                              const T rowdot = kernels::dot(p, dp.data(), d.tkv);
                              for (std::int64_t j = 0; j < d.tkv; ++j) dp[static_cast<std::size_t>(j)] = p[j] * (dp[static_cast<std::size_t>(j)] - rowdot);
                              T* gqi = gq.data() + (b * d.tq + i) * d.d;
                              for (std::int64_t c = 0; c < d.d; ++c) {
                                gqi[c] = sc * kernels::dot(dp.data(), kt.data() + c * d.tkv, d.tkv);
                                kernels::axpy(gkt.data() + c * d.tkv, sc * qi[c], dp.data(), d.tkv);
                              }
                            }
                            transpose_into(gkt.data(), d.d, d.tkv, gk.data() + b * d.tkv * d.d);
                            transpose_into(gvt.data(), d.d, d.tkv, gv.data() + b * d.tkv * d.d);
                          }
                          std::vector<Tensor> res(3);
                          if (needs[0]) res[0] = Tensor::from(qv.shape(), std::move(gq));
                          if (needs[1]) res[1] = Tensor::from(kv.shape(), std::move(gk));
                          if (needs[2]) res[2] = Tensor::from(vv.shape(), std::move(gv));
                          return res;
                        });
                      });
}

}  // namespace fct
