#ifndef FCT_ATTENTION_HPP
#define FCT_ATTENTION_HPP

// Convolutional attention: a depthwise-convolution patch embedding followed
// by multi-head self-attention whose q/k/v projections are depthwise
// convolutions. No positional encoding is used anywhere; spatial awareness
// enters only through the convolutions.

#include <string>

#include "fct/params.hpp"

namespace fct {

struct AttentionConfig {
  int channels = 0;
  int heads = 1;
  /// 0 selects floor(channels / heads), at least 1.
  int head_dim = 0;
  int proj_kernel = 3;
  int q_stride = 1;
  int kv_stride = 1;

  int resolved_head_dim() const;
  /// 1 / sqrt(head_dim).
  double scale() const;
  void validate() const;
};

/// Tokens (N, H_t * W_t, C) plus the spatial grid they came from.
struct TokenMap {
  Var tokens;
  std::int64_t height = 0;
  std::int64_t width = 0;

  static TokenMap from_image(const Var& image);
  Var to_image() const;
};

enum class Role { q, k, v };

/// (N, T, heads * d) -> (N, heads, T, d)
Var split_heads(const Var& tokens, int heads);
/// (N, heads, T, d) -> (N, T, heads * d)
Var merge_heads(const Var& per_head);

class ConvAttention {
public:
  struct Output {
    Var z_attn;      ///< attn_path + v_residual, (N, H_q, W_q, C)
    Var attn_path;   ///< output map applied to the attention result
    Var v_residual;  ///< output map applied to the v projection
    Var q, k, v;     ///< projected tokens (N, T_role, heads * d)
  };

  ConvAttention() = default;
  ConvAttention(ParamRegistry& registry, const std::string& name, AttentionConfig cfg, Rng& rng);

  /// Depthwise conv (stride 1) -> layer norm -> flatten.
  TokenMap patch_embed(const Binding& params, const Var& x) const;
  /// Depthwise conv with the role's stride, then a 1x1 map C -> heads*d.
  /// Returns the projected image (N, H_r, W_r, heads * d).
  Var project_image(const Binding& params, const TokenMap& tokens, Role role) const;
  /// As project_image, flattened to tokens (N, T_r, heads * d).
  Var conv_project(const Binding& params, const TokenMap& tokens, Role role) const;
  /// Attention over per-head tensors followed by the output map back to C.
  /// Returns (N, T_q, C).
  Var mhsa(const Binding& params, const Var& q_heads, const Var& k_heads, const Var& v_heads) const;

  Output forward(const Binding& params, const Var& z_prev) const;

  const AttentionConfig& config() const { return cfg_; }
  const Conv2d& embed_conv() const { return embed_; }
  const LayerNorm& embed_norm() const { return embed_norm_; }
  const Conv2d& depthwise(Role r) const { return dw_[static_cast<int>(r)]; }
  const Conv2d& pointwise(Role r) const { return pw_[static_cast<int>(r)]; }
  const Conv2d& output_map() const { return out_; }

private:
  AttentionConfig cfg_;
  Conv2d embed_;
  LayerNorm embed_norm_;
  Conv2d dw_[3];
  Conv2d pw_[3];
  Conv2d out_;
};

}  // namespace fct

#endif  // FCT_ATTENTION_HPP
