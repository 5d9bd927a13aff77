#include "fct/attention.hpp"

#include <algorithm>
#include <cmath>

namespace fct {

int AttentionConfig::resolved_head_dim() const { return head_dim > 0 ? head_dim : std::max(1, channels / std::max(1, heads)); }

double AttentionConfig::scale() const { return 1.0 / std::sqrt(static_cast<double>(resolved_head_dim())); }

void AttentionConfig::validate() const {
  if (channels < 1) throw ValueError("attention: channels must be >= 1");
  if (heads < 1) throw ValueError("attention: heads must be >= 1");
  if (head_dim < 0) throw ValueError("attention: head_dim must be >= 1 (or 0 for the default)");
  if (proj_kernel < 1) throw ValueError("attention: proj_kernel must be >= 1");
  if (q_stride < 1 || kv_stride < 1) throw ValueError("attention: strides must be >= 1");
  if (kv_stride % q_stride != 0)
    throw ValueError("attention: kv_stride (" + std::to_string(kv_stride) + ") must be a multiple of q_stride (" +
                     std::to_string(q_stride) + ")");
}

TokenMap TokenMap::from_image(const Var& image) {
  const auto& s = image.shape();
  if (s.size() != 4) throw ShapeError("token map: expected NHWC image, got " + shape_str(s));
  return TokenMap{reshape(image, {s[0], s[1] * s[2], s[3]}), s[1], s[2]};
}

Var TokenMap::to_image() const {
  const auto& s = tokens.shape();
  if (s.size() != 3 || s[1] != height * width)
    throw ShapeError("token map: " + shape_str(s) + " does not match grid " + std::to_string(height) + "x" + std::to_string(width));
  return reshape(tokens, {s[0], height, width, s[2]});
}

Var split_heads(const Var& tokens, int heads) {
  const auto& s = tokens.shape();
  if (s.size() != 3 || s[2] % heads != 0)
    throw ShapeError("split_heads: " + shape_str(s) + " cannot be split into " + std::to_string(heads) + " heads");
  return permute(reshape(tokens, {s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

Var merge_heads(const Var& per_head) {
  const auto& s = per_head.shape();
  if (s.size() != 4) throw ShapeError("merge_heads: expected (N, heads, T, d), got " + shape_str(s));
  return reshape(permute(per_head, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

ConvAttention::ConvAttention(ParamRegistry& registry, const std::string& name, AttentionConfig cfg, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const int c = cfg_.channels;
  const int hd = cfg_.heads * cfg_.resolved_head_dim();
  auto depthwise_spec = [&](int stride) {
    Conv2dSpec s;
    s.in_channels = s.out_channels = s.groups = c;
    s.kernel_h = s.kernel_w = cfg_.proj_kernel;
    s.stride = stride;
    return s;
  };
  auto pointwise_spec = [](int in, int out) {
    Conv2dSpec s;
    s.in_channels = in;
    s.out_channels = out;
    s.kernel_h = s.kernel_w = 1;
    return s;
  };
  embed_ = Conv2d(registry, name + ".embed.dw", depthwise_spec(1), rng);
  embed_norm_ = LayerNorm(registry, name + ".embed.norm", c);
  const char* roles[3] = {"q", "k", "v"};
  for (int r = 0; r < 3; ++r) {
    const int stride = r == 0 ? cfg_.q_stride : cfg_.kv_stride;
    Conv2dSpec dw = depthwise_spec(stride), pw = pointwise_spec(c, hd);
    // a bias on k shifts every logit of a query row equally, so softmax ignores it
    dw.bias = pw.bias = r != 1;
    dw_[r] = Conv2d(registry, name + "." + roles[r] + ".dw", dw, rng);
    pw_[r] = Conv2d(registry, name + "." + roles[r] + ".pw", pw, rng);
  }
  out_ = Conv2d(registry, name + ".out", pointwise_spec(hd, c), rng);
}

TokenMap ConvAttention::patch_embed(const Binding& params, const Var& x) const {
  if (x.shape().size() != 4 || x.shape()[3] != cfg_.channels)
    throw ShapeError("patch_embed: expected " + std::to_string(cfg_.channels) + " channels, got " + shape_str(x.shape()));
  return TokenMap::from_image(embed_norm_(params, embed_(params, x)));
}

Var ConvAttention::project_image(const Binding& params, const TokenMap& tokens, Role role) const {
  const int stride = role == Role::q ? cfg_.q_stride : cfg_.kv_stride;
  if (stride > tokens.height || stride > tokens.width)
    throw ShapeError("conv_project: stride " + std::to_string(stride) + " exceeds token grid " +
                     std::to_string(tokens.height) + "x" + std::to_string(tokens.width));
  const int r = static_cast<int>(role);
  return pw_[r](params, dw_[r](params, tokens.to_image()));
}

Var ConvAttention::conv_project(const Binding& params, const TokenMap& tokens, Role role) const {
  return TokenMap::from_image(project_image(params, tokens, role)).tokens;
}

Var ConvAttention::mhsa(const Binding& params, const Var& q_heads, const Var& k_heads, const Var& v_heads) const {
  const Var attended = scaled_dot_product_attention(q_heads, k_heads, v_heads, cfg_.scale());
  const Var merged = merge_heads(attended);  // (N, T_q, h*d)
  const auto& s = merged.shape();
  // the output map is a 1x1 conv; run it on a (N, 1, T, h*d) view
  const Var mapped = out_(params, reshape(merged, {s[0], 1, s[1], s[2]}));
  return reshape(mapped, {s[0], s[1], cfg_.channels});
}

ConvAttention::Output ConvAttention::forward(const Binding& params, const Var& z_prev) const {
  const auto& s = z_prev.shape();
  if (s.size() != 4) throw ShapeError("convolutional_attention: expected NHWC input, got " + shape_str(s));
  if (s[1] % cfg_.kv_stride || s[2] % cfg_.kv_stride)
    throw ShapeError("convolutional_attention: spatial extents of " + shape_str(s) + " must be divisible by kv_stride " +
                     std::to_string(cfg_.kv_stride));
  const TokenMap tokens = patch_embed(params, z_prev);
  const Var q_img = project_image(params, tokens, Role::q);
  const Var k_img = project_image(params, tokens, Role::k);
  const Var v_img = project_image(params, tokens, Role::v);
  Output out;
  out.q = TokenMap::from_image(q_img).tokens;
  out.k = TokenMap::from_image(k_img).tokens;
  out.v = TokenMap::from_image(v_img).tokens;
  const int heads = cfg_.heads;
  const Var attended = mhsa(params, split_heads(out.q, heads), split_heads(out.k, heads), split_heads(out.v, heads));
  const std::int64_t hq = q_img.shape()[1], wq = q_img.shape()[2];
  out.attn_path = reshape(attended, {s[0], hq, wq, cfg_.channels});
  // v lives on the kv grid; bring it to the query grid
  out.v_residual = upsample_nearest(out_(params, v_img), cfg_.kv_stride / cfg_.q_stride);
  out.z_attn = add(out.attn_path, out.v_residual);
  return out;
}

}  // namespace fct
