#ifndef FCT_TESTS_HELPERS_HPP
#define FCT_TESTS_HELPERS_HPP

#include <cmath>
#include <vector>

#include "fct/nn.hpp"
#include "fct/random.hpp"
#include "fct/tensor.hpp"

namespace fct::test {

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0, DType dtype = DType::f32) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(s, std::move(v)).to(dtype);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  const auto x = a.to_vector(), y = b.to_vector();
  if (x.size() != y.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

/// Direct NHWC cross-correlation written independently of the library
/// kernels: explicit padding offsets and a 7-deep loop.
inline Tensor naive_conv(const Tensor& x, const Tensor& k, const Tensor* bias, int stride, int dil, int groups,
                         std::int64_t pad_top, std::int64_t pad_left, std::int64_t oh, std::int64_t ow) {
  const auto& xs = x.shape();
  const auto& ks = k.shape();
  const std::int64_t n = xs[0], h = xs[1], w = xs[2], cin = xs[3];
  const std::int64_t kh = ks[0], kw = ks[1], cg = ks[2], cout = ks[3];
  const std::int64_t og = cout / groups;
  std::vector<double> out(static_cast<std::size_t>(n * oh * ow * cout), 0.0);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox)
        for (std::int64_t co = 0; co < cout; ++co) {
          const std::int64_t g = co / og;
          double acc = bias ? bias->flat(co) : 0.0;
          for (std::int64_t ky = 0; ky < kh; ++ky)
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const std::int64_t iy = oy * stride + ky * dil - pad_top;
              const std::int64_t ix = ox * stride + kx * dil - pad_left;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              for (std::int64_t ci = 0; ci < cg; ++ci)
                acc += x.flat(((b * h + iy) * w + ix) * cin + g * cg + ci) * k.flat(((ky * kw + kx) * cg + ci) * cout + co);
            }
          out[static_cast<std::size_t>(((b * oh + oy) * ow + ox) * cout + co)] = acc;
        }
  return Tensor::from({n, oh, ow, cout}, std::move(out));
}

/// softmax(q k^T * scale) v for (N, h, T, d) inputs, one row at a time.
inline Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  const auto& qs = q.shape();
  const std::int64_t n = qs[0], heads = qs[1], tq = qs[2], d = qs[3], tk = k.shape()[2], dv = v.shape()[3];
  std::vector<double> out(static_cast<std::size_t>(n * heads * tq * dv));
  for (std::int64_t b = 0; b < n * heads; ++b)
    for (std::int64_t i = 0; i < tq; ++i) {
      std::vector<double> s(static_cast<std::size_t>(tk));
      double m = -INFINITY;
      for (std::int64_t j = 0; j < tk; ++j) {
        double acc = 0.0;
        for (std::int64_t e = 0; e < d; ++e) acc += q.flat((b * tq + i) * d + e) * k.flat((b * tk + j) * d + e);
        s[static_cast<std::size_t>(j)] = acc * scale;
        m = std::max(m, acc * scale);
      }
      double z = 0.0;
      for (auto& e : s) z += (e = std::exp(e - m));
      for (std::int64_t c = 0; c < dv; ++c) {
        double acc = 0.0;
        for (std::int64_t j = 0; j < tk; ++j) acc += s[static_cast<std::size_t>(j)] / z * v.flat((b * tk + j) * dv + c);
        out[static_cast<std::size_t>((b * tq + i) * dv + c)] = acc;
      }
    }
  return Tensor::from({n, heads, tq, dv}, std::move(out));
}

}  // namespace fct::test

#endif  // FCT_TESTS_HELPERS_HPP
