#include "fct/fct_layer.hpp"

namespace fct {

const char* variant_name(LayerVariant v) {
  switch (v) {
    case LayerVariant::encoder: return "encoder";
    case LayerVariant::bottleneck: return "bottleneck";
    case LayerVariant::decoder: return "decoder";
  }
  return "?";
}

void FctLayerConfig::validate() const {
  if (in_channels < 1 || filters < 1) throw ValueError("fct_layer: in_channels and filters must be >= 1");
  if (attention.channels != filters)
    throw ValueError("fct_layer: attention channels (" + std::to_string(attention.channels) + ") must equal filters (" +
                     std::to_string(filters) + ")");
  if (variant == LayerVariant::decoder ? skip_channels < 1 : skip_channels != 0)
    throw ValueError(std::string("fct_layer: ") + variant_name(variant) +
                     (variant == LayerVariant::decoder ? " requires skip channels" : " takes no skip"));
  if (stem_kernel < 1) throw ValueError("fct_layer: stem_kernel must be >= 1");
  attention.validate();
  wf.validate();
}

FctLayer::FctLayer(ParamRegistry& registry, const std::string& name, FctLayerConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int stem_in = cfg_.in_channels + cfg_.skip_channels;
  // channel normalization of a single channel maps every pixel to beta
  stem_norm_enabled_ = stem_in > 1;
  if (stem_norm_enabled_) stem_norm_ = LayerNorm(registry, name + ".stem.norm", stem_in);
  Conv2dSpec c1;
  c1.in_channels = stem_in;
  c1.out_channels = cfg_.filters;
  c1.kernel_h = c1.kernel_w = cfg_.stem_kernel;
  Conv2dSpec c2 = c1;
  c2.in_channels = cfg_.filters;
  stem_conv1_ = Conv2d(registry, name + ".stem.conv1", c1, rng);
  stem_conv2_ = Conv2d(registry, name + ".stem.conv2", c2, rng);
  attn_ = ConvAttention(registry, name + ".attn", cfg_.attention, rng);
  wf_ = WideFocus(registry, name + ".wf", cfg_.filters, cfg_.wf, rng);
}

FctLayer::Output FctLayer::forward(const Binding& params, const Var& x, const std::optional<Var>& skip,
                                   FctLayerTrace* trace) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[3] != cfg_.in_channels)
    throw ShapeError(std::string(variant_name(cfg_.variant)) + " layer: expected (N, H, W, " +
                     std::to_string(cfg_.in_channels) + "), got " + shape_str(s));
  Var h = x;
  if (cfg_.variant == LayerVariant::decoder) {
    if (!skip) throw ValueError("decoder layer: missing skip tensor");
    h = upsample_nearest_2x(h);
    const auto& ss = skip->shape();
    if (ss.size() != 4 || ss[0] != s[0] || ss[1] != h.shape()[1] || ss[2] != h.shape()[2] || ss[3] != cfg_.skip_channels)
      throw ShapeError("decoder layer: skip " + shape_str(ss) + " does not match upsampled " + shape_str(h.shape()) +
                       " with " + std::to_string(cfg_.skip_channels) + " channels");
    h = concat_channels(h, *skip);
  } else if (skip) {
    throw ValueError(std::string(variant_name(cfg_.variant)) + " layer: unexpected skip tensor");
  }
  if (stem_norm_enabled_) h = stem_norm_(params, h);
  h = gelu(stem_conv1_(params, h));
  h = gelu(stem_conv2_(params, h));
  Output out;
  out.stem = h;
  if (cfg_.variant == LayerVariant::encoder) {
    if (h.shape()[1] % 2 || h.shape()[2] % 2)
      throw ShapeError("encoder layer: odd spatial extent " + shape_str(h.shape()) + " before pooling");
    h = max_pool2d(h);
  }
  const ConvAttention::Output a = attn_.forward(params, h);
  const Var wf_out = wf_(params, a.z_attn);
  out.y = add(wf_out, a.z_attn);
  if (trace) {
    trace->z_prev = h.value();
    trace->z_q = a.q.value();
    trace->z_k = a.k.value();
    trace->z_v = a.v.value();
    trace->attn_path = a.attn_path.value();
    trace->v_residual = a.v_residual.value();
    trace->z_attn = a.z_attn.value();
    trace->wf_out = wf_out.value();
    trace->z_out = out.y.value();
  }
  return out;
}

}  // namespace fct
