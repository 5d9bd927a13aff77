#ifndef FCT_NN_HPP
#define FCT_NN_HPP

#include <cstdint>

#include "fct/autodiff.hpp"

namespace fct {

/// `same` keeps ceil(in/stride) outputs and puts an odd leftover padding
/// pixel at the bottom/right; `same_top_left` puts it at the top/left.
enum class Padding { valid, same, same_top_left };

/// Kernel layout is [K_h, K_w, C_in/groups, C_out]; bias is [C_out] or empty.
struct ConvParams {
  Var kernel;
  Var bias;
  int stride_h = 1;
  int stride_w = 1;
  int dilation_h = 1;
  int dilation_w = 1;
  int groups = 1;
  Padding padding = Padding::same;
  bool has_bias() const { return bias.value().numel() > 0; }
};

struct ConvGeometry {
  std::int64_t out_h, out_w;
  std::int64_t pad_top, pad_left;
};

ConvGeometry conv_geometry(std::int64_t in_h, std::int64_t in_w, std::int64_t k_h, std::int64_t k_w, int stride_h,
                           int stride_w, int dilation_h, int dilation_w, Padding padding);

/// Cross-correlation of an NHWC input.
Var conv2d(const Var& x, const ConvParams& p);

/// conv2d with groups == C_in == C_out.
Var depthwise_conv2d(const Var& x, const ConvParams& p);

struct NormParams {
  Var gamma;
  Var beta;
  double epsilon = 1e-6;
};

/// Normalizes over the last axis: gamma * (x - mean) / sqrt(var + eps) + beta.
Var layer_norm(const Var& x, const NormParams& n);

/// 2x2 window, stride 2. H and W must be even.
Var max_pool2d(const Var& x);
/// Mean over factor x factor windows with stride factor; H, W divisible by factor.
Var avg_pool2d(const Var& x, int factor);

/// tanh approximation 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(const Var& x);

Var softmax(const Var& x, int axis);
Var log_softmax(const Var& x, int axis);

Var upsample_nearest(const Var& x, int factor);
inline Var upsample_nearest_2x(const Var& x) { return upsample_nearest(x, 2); }

Var concat_channels(const Var& a, const Var& b);
/// Channels [begin, end) of the last axis.
Var slice_channels(const Var& x, std::int64_t begin, std::int64_t end);

/// softmax(q k^T * scale) v for q: (N, h, T_q, d), k/v: (N, h, T_kv, d).
/// Fused: the attention matrix is never materialized; backward recomputes
/// each probability row.
Var scaled_dot_product_attention(const Var& q, const Var& k, const Var& v, double scale);

}  // namespace fct

#endif  // FCT_NN_HPP
