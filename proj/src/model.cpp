#include "fct/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "fct/config.hpp"

namespace fct {

namespace {

constexpr const char* kStageNames[kStages] = {"E1", "E2", "E3", "E4", "B", "D1", "D2", "D3", "D4"};
constexpr const char* kStagePrefix[kStages] = {"e1", "e2", "e3", "e4", "bn", "d1", "d2", "d3", "d4"};
// Spatial divisor of the attention grid of each stage relative to the input.
constexpr int kStageDivisor[kStages] = {2, 4, 8, 16, 16, 8, 4, 2, 1};

}  // namespace

const char* ds_name(DeepSupervision d) {
  switch (d) {
    case DeepSupervision::off: return "off";
    case DeepSupervision::partial: return "partial";
    case DeepSupervision::full: return "full";
  }
  return "?";
}

DeepSupervision parse_ds(const std::string& s) {
  if (s == "off") return DeepSupervision::off;
  if (s == "partial") return DeepSupervision::partial;
  if (s == "full") return DeepSupervision::full;
  throw ValueError("unknown deep_supervision mode '" + s + "' (expected off, partial or full)");
}

void ModelConfig::validate() const {
  if (input_h < 16 || input_w < 16 || input_h % 16 || input_w % 16)
    throw ValueError("model: input size " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                     " must be positive and divisible by 16");
  if (in_channels < 1) throw ValueError("model: in_channels must be >= 1");
  if (num_classes < 2) throw ValueError("model: num_classes must be >= 2");
  for (int i = 0; i < kStages; ++i) {
    const std::string stage = kStageNames[i];
    if (stage_filters[i] < 1) throw ValueError("model: stage " + stage + " filters must be >= 1");
    if (stage_heads[i] < 1) throw ValueError("model: stage " + stage + " heads must be >= 1");
    if (kv_strides[i] < 1) throw ValueError("model: stage " + stage + " kv_stride must be >= 1");
    const int h = input_h / kStageDivisor[i], w = input_w / kStageDivisor[i];
    if (h % kv_strides[i] || w % kv_strides[i])
      throw ValueError("model: stage " + stage + " grid " + std::to_string(h) + "x" + std::to_string(w) +
                       " is not divisible by kv_stride " + std::to_string(kv_strides[i]));
  }
  wf.validate();
}

ModelConfig ModelConfig::scaled(int size, int classes) {
  ModelConfig c;
  c.input_h = c.input_w = size;
  c.num_classes = classes;
  c.stage_filters = {8, 16, 32, 64, 96, 64, 32, 16, 8};
  c.stage_heads = {2, 2, 4, 4, 8, 4, 4, 2, 2};
  return c;
}

const char* Model::stage_name(int i) { return kStageNames[i]; }

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x46435431ull));
  const auto& f = cfg_.stage_filters;
  auto layer_cfg = [&](int i, int in, int skip, LayerVariant variant) {
    FctLayerConfig lc;
    lc.in_channels = in;
    lc.skip_channels = skip;
    lc.filters = f[i];
    lc.variant = variant;
    lc.wf = cfg_.wf;
    lc.attention.channels = f[i];
    lc.attention.heads = cfg_.stage_heads[i];
    lc.attention.kv_stride = cfg_.kv_strides[i];
    return lc;
  };
  const int pyr = cfg_.pyramid_inputs ? 1 : 0;
  layers_.emplace_back(registry_, "e1", layer_cfg(0, cfg_.in_channels, 0, LayerVariant::encoder), rng);
  for (int i = 1; i < 4; ++i) {
    if (pyr) {
      Conv2dSpec s;
      s.in_channels = cfg_.in_channels;
      s.out_channels = f[i - 1];
      pyramid_.emplace_back(registry_, std::string(kStagePrefix[i]) + ".pyramid", s, rng);
    }
    layers_.emplace_back(registry_, kStagePrefix[i], layer_cfg(i, f[i - 1] * (1 + pyr), 0, LayerVariant::encoder), rng);
  }
  layers_.emplace_back(registry_, "bn", layer_cfg(4, f[3], 0, LayerVariant::bottleneck), rng);
  // D1 <- E3 out, D2 <- E2 out, D3 <- E1 out, D4 <- E1 stem
  const int skip_channels[4] = {f[2], f[1], f[0], f[0]};
  for (int j = 0; j < 4; ++j) {
    const int i = 5 + j;
    layers_.emplace_back(registry_, kStagePrefix[i], layer_cfg(i, f[i - 1], skip_channels[j], LayerVariant::decoder), rng);
  }
  const Init head_init = cfg_.zero_init_heads ? Init::zeros : Init::uniform_fan_in;
  auto add_head = [&](int stage, int divisor) {
    Conv2dSpec s;
    s.in_channels = f[stage];
    s.out_channels = cfg_.num_classes;
    s.kernel_h = s.kernel_w = 1;
    heads_.push_back(Head{divisor, Conv2d(registry_, "head.s" + std::to_string(divisor), s, rng, head_init)});
  };
  add_head(8, 1);
  if (cfg_.deep_supervision != DeepSupervision::off) {
    add_head(7, 2);
    add_head(6, 4);
  }
  if (cfg_.deep_supervision == DeepSupervision::full) add_head(5, 8);
}

std::vector<ScaleOutput> Model::forward(const Binding& params, const Var& x, const ForwardOptions& opts) const {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != cfg_.input_h || s[2] != cfg_.input_w || s[3] != cfg_.in_channels)
    throw ShapeError("model: expected input (N, " + std::to_string(cfg_.input_h) + ", " + std::to_string(cfg_.input_w) +
                     ", " + std::to_string(cfg_.in_channels) + "), got " + shape_str(s));
  if (opts.traces) opts.traces->assign(kStages, FctLayerTrace{});

  FlopCounter* outer = active_flop_counter();
  auto stage = [&](const std::string& name, const std::string& prefix, const Shape& in, auto&& body) {
    if (!opts.stages) return body();
    FlopCounter local;
    decltype(body()) out;
    {
      FlopScope scope(local);
      out = body();
    }
    if (outer) {
      outer->conv += local.conv;
      outer->matmul += local.matmul;
      outer->attention += local.attention;
      outer->norm += local.norm;
      outer->activation += local.activation;
    }
    StageInfo info{name, in, {}, registry_.parameter_count(prefix), local.total()};
    if constexpr (std::is_same_v<decltype(out), FctLayer::Output>) {
      info.output = out.y.shape();
    } else {
      info.output = out.front().logits.shape();
    }
    opts.stages->push_back(std::move(info));
    return out;
  };
  auto trace = [&](int i) { return opts.traces ? &(*opts.traces)[static_cast<std::size_t>(i)] : nullptr; };

  const auto e1 = stage("E1", "e1.", s, [&] { return layers_[0].forward(params, x, std::nullopt, trace(0)); });
  std::vector<Var> enc{e1.y};
  Var h = e1.y;
  for (int i = 1; i < 4; ++i) {
    const std::string prefix = std::string(kStagePrefix[i]) + ".";
    const auto r = stage(kStageNames[i], prefix, h.shape(), [&] {
      Var in = h;
      if (cfg_.pyramid_inputs) {
        const Var image = avg_pool2d(x, 1 << i);
        in = concat_channels(in, gelu(pyramid_[static_cast<std::size_t>(i - 1)](params, image)));
      }
      return layers_[static_cast<std::size_t>(i)].forward(params, in, std::nullopt, trace(i));
    });
    h = r.y;
    enc.push_back(h);
  }
  h = stage("B", "bn.", h.shape(), [&] { return layers_[4].forward(params, h, std::nullopt, trace(4)); }).y;
  const Var skips[4] = {enc[2], enc[1], enc[0], e1.stem};
  std::vector<Var> dec;
  for (int j = 0; j < 4; ++j) {
    const int i = 5 + j;
    h = stage(kStageNames[i], std::string(kStagePrefix[i]) + ".", h.shape(), [&] {
          return layers_[static_cast<std::size_t>(i)].forward(params, h, skips[j], trace(i));
        }).y;
    dec.push_back(h);
  }
  // dec[3] is full resolution, dec[0] is 1/8
  return stage("heads", "head.", dec[3].shape(), [&] {
    std::vector<ScaleOutput> outs;
    for (const auto& head : heads_) {
      const int idx = 3 - static_cast<int>(std::log2(head.divisor));
      outs.push_back(ScaleOutput{head.divisor, head.conv(params, dec[static_cast<std::size_t>(idx)])});
    }
    return outs;
  });
}

std::vector<ScaleOutput> Model::forward(const Tensor& x) const { return forward(Binding(registry_), Var(x)); }

Profile Model::profile() const {
  Profile p;
  p.param_count = registry_.parameter_count();
  FlopScope scope(p.flops);
  const Tensor x = Tensor::meta({1, cfg_.input_h, cfg_.input_w, cfg_.in_channels});
  ForwardOptions opts;
  opts.stages = &p.stages;
  forward(Binding::meta(registry_), Var(x), opts);
  return p;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  const auto& reg = model.params();
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < reg.size(); ++i) {
    const std::string file = reg.name(i) + ".fctt";
    const auto bytes = encode_fctt(reg.values()[i]);
    std::ofstream out(dir / file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write " + (dir / file).string());
    tensors.push_back({{"name", reg.name(i)}, {"shape", reg.values()[i].shape()}, {"file", file}, {"byte_len", bytes.size()}});
  }
  const nlohmann::json manifest = {{"format_version", 1}, {"model_config", to_json(model.config())}, {"tensors", tensors}};
  std::ofstream out(dir / "manifest.json");
  out << manifest.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
}

Model load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  if (!manifest.contains("format_version") || manifest["format_version"] != 1)
    throw IoError(manifest_path.string() + ": unsupported format_version");
  Model model(model_config_from_json(manifest.at("model_config")));
  auto& reg = model.params();

  std::set<std::string> expected(reg.names().begin(), reg.names().end());
  std::set<std::string> seen;
  std::vector<std::string> extra, missing_files, bad_shapes;
  for (const auto& t : manifest.at("tensors")) {
    const std::string name = t.at("name");
    const auto ref = reg.find(name);
    if (!ref) {
      extra.push_back(name);
      continue;
    }
    seen.insert(name);
    const auto path = dir / t.at("file").get<std::string>();
    if (!std::filesystem::exists(path)) {
      missing_files.push_back(name + " (" + path.string() + ")");
      continue;
    }
    Tensor value = load_fctt(path);
    if (value.shape() != reg[*ref].shape()) {
      bad_shapes.push_back(name + " " + shape_str(value.shape()) + " vs " + shape_str(reg[*ref].shape()));
      continue;
    }
    reg.set(*ref, std::move(value));
  }
  std::vector<std::string> missing;
  for (const auto& n : expected)
    if (!seen.contains(n)) missing.push_back(n);
  auto join = [](const std::vector<std::string>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
    return s;
  };
  std::string problems;
  if (!missing.empty()) problems += " missing tensors: " + join(missing) + ";";
  if (!extra.empty()) problems += " unexpected tensors: " + join(extra) + ";";
  if (!missing_files.empty()) problems += " missing files for: " + join(missing_files) + ";";
  if (!bad_shapes.empty()) problems += " shape mismatch: " + join(bad_shapes) + ";";
  if (!problems.empty()) throw ValueError("checkpoint " + dir.string() + ":" + problems);
  return model;
}

std::string format_profile(const ModelConfig& cfg, const Profile& p) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-20s %-20s %12s %16s\n", "stage", "input", "output", "params", "flops");
  os << line;
  for (const auto& s : p.stages) {
    std::snprintf(line, sizeof line, "%-6s %-20s %-20s %12lld %16lld\n", s.name.c_str(), shape_str(s.input).c_str(),
                  shape_str(s.output).c_str(), static_cast<long long>(s.params), static_cast<long long>(s.flops));
    os << line;
  }
  const double mparams = static_cast<double>(p.param_count) / 1e6;
  const double gflops = static_cast<double>(p.flops.total()) / 1e9;
  std::snprintf(line, sizeof line, "total: %lld parameters (%.2fM), %.3f GFLOPs at %dx%d\n",
                static_cast<long long>(p.param_count), mparams, gflops, cfg.input_h, cfg.input_w);
  os << line;
  std::snprintf(line, sizeof line,
                "flops by kind: conv %lld, matmul %lld, attention %lld, norm %lld, activation %lld\n",
                static_cast<long long>(p.flops.conv), static_cast<long long>(p.flops.matmul),
                static_cast<long long>(p.flops.attention), static_cast<long long>(p.flops.norm),
                static_cast<long long>(p.flops.activation));
  os << line;
  os << "convention: 1 multiply-accumulate = 2 FLOPs; norm 5/element, activation 10/element; "
        "pooling, upsampling and additions not counted\n";
  auto verdict = [](double measured, double published) {
    return std::abs(measured / published - 1.0) <= 0.10 ? "agrees" : "disagrees";
  };
  std::snprintf(line, sizeof line,
                "published reference: 31.7M parameters, 7.87 GFLOPs | measured: %.2fM (%s, ratio %.2f), %.3f GFLOPs (%s, "
                "ratio %.2f)\n",
                mparams, verdict(mparams, 31.7), mparams / 31.7, gflops, verdict(gflops, 7.87), gflops / 7.87);
  os << line;
  return os.str();
}

}  // namespace fct
