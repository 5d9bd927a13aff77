#ifndef FCT_MODEL_HPP
#define FCT_MODEL_HPP

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "fct/fct_layer.hpp"

namespace fct {

enum class DeepSupervision { off, partial, full };

const char* ds_name(DeepSupervision d);
DeepSupervision parse_ds(const std::string& s);

constexpr int kStages = 9;
using StageInts = std::array<int, kStages>;

struct ModelConfig {
  int input_h = 224;
  int input_w = 224;
  int in_channels = 1;
  int num_classes = 4;
  StageInts stage_filters{16, 32, 64, 128, 384, 128, 64, 32, 16};
  StageInts stage_heads{2, 4, 8, 12, 16, 12, 8, 4, 2};
  StageInts kv_strides{1, 1, 1, 1, 1, 1, 1, 1, 1};
  WideFocusConfig wf;
  bool pyramid_inputs = true;
  DeepSupervision deep_supervision = DeepSupervision::partial;
  /// Zero the 1x1 head kernels so initial predictions are uniform.
  bool zero_init_heads = false;

  void validate() const;
  /// The reduced configuration used for desk-scale training.
  static ModelConfig scaled(int size = 64, int classes = 4);
};

/// Logits at one output scale; `divisor` is 1 for full resolution, 2 for half, ...
struct ScaleOutput {
  int divisor = 1;
  Var logits;
};

struct StageInfo {
  std::string name;
  Shape input;
  Shape output;
  std::int64_t params = 0;
  std::int64_t flops = 0;
};

struct ForwardOptions {
  /// One trace per FCT layer (E1..E4, bottleneck, D1..D4) when non-null.
  std::vector<FctLayerTrace>* traces = nullptr;
  std::vector<StageInfo>* stages = nullptr;
};

struct Profile {
  std::int64_t param_count = 0;
  FlopCounter flops;
  std::vector<StageInfo> stages;
};

class Model {
public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0);

  /// Outputs ordered from full resolution downwards.
  std::vector<ScaleOutput> forward(const Binding& params, const Var& x, const ForwardOptions& opts = {}) const;
  /// Inference with the current parameter values.
  std::vector<ScaleOutput> forward(const Tensor& x) const;

  /// Shape-only pass at the configured input size.
  Profile profile() const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return registry_; }
  const ParamRegistry& params() const { return registry_; }
  const FctLayer& layer(int i) const { return layers_.at(static_cast<std::size_t>(i)); }
  static const char* stage_name(int i);

private:
  ModelConfig cfg_;
  ParamRegistry registry_;
  std::vector<FctLayer> layers_;
  std::vector<Conv2d> pyramid_;
  struct Head {
    int divisor;
    Conv2d conv;
  };
  std::vector<Head> heads_;
};

/// Writes `<name>.fctt` per parameter plus manifest.json.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

/// Human-readable profile table including the comparison line against the
/// published 31.7M parameters / 7.87 GFLOPs.
std::string format_profile(const ModelConfig& cfg, const Profile& p);

}  // namespace fct

#endif  // FCT_MODEL_HPP
