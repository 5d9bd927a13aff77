#ifndef FCT_FCT_LAYER_HPP
#define FCT_FCT_LAYER_HPP

#include <optional>
#include <string>

#include "fct/attention.hpp"
#include "fct/wide_focus.hpp"

namespace fct {

enum class LayerVariant { encoder, bottleneck, decoder };

const char* variant_name(LayerVariant v);

struct FctLayerConfig {
  int in_channels = 0;
  /// Channels of the skip tensor concatenated after upsampling (decoder only).
  int skip_channels = 0;
  int filters = 0;
  AttentionConfig attention;
  WideFocusConfig wf;
  LayerVariant variant = LayerVariant::encoder;
  int stem_kernel = 3;

  void validate() const;
};

/// Intermediate tensors of one layer, kept when tracing is requested.
struct FctLayerTrace {
  Tensor z_prev;
  Tensor z_q, z_k, z_v;
  Tensor attn_path;
  Tensor v_residual;
  Tensor z_attn;
  Tensor wf_out;
  Tensor z_out;
};

class FctLayer {
public:
  struct Output {
    Var y;
    /// Stem output before pooling (encoder) or the stem output itself.
    Var stem;
  };

  FctLayer() = default;
  FctLayer(ParamRegistry& registry, const std::string& name, FctLayerConfig cfg, Rng& rng);

  Output forward(const Binding& params, const Var& x, const std::optional<Var>& skip = std::nullopt,
                 FctLayerTrace* trace = nullptr) const;

  const FctLayerConfig& config() const { return cfg_; }
  const ConvAttention& attention() const { return attn_; }
  const WideFocus& wide_focus() const { return wf_; }

private:
  FctLayerConfig cfg_;
  bool stem_norm_enabled_ = false;
  LayerNorm stem_norm_;
  Conv2d stem_conv1_, stem_conv2_;
  ConvAttention attn_;
  WideFocus wf_;
};

}  // namespace fct

#endif  // FCT_FCT_LAYER_HPP
