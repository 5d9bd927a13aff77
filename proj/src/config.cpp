#include "fct/config.hpp"

#include <fstream>
#include <set>

namespace fct {

using nlohmann::json;

namespace {

/// Reads keys from one JSON object and rejects any key left unread.
class ObjectReader {
public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      out = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key_path(key) + "' has the wrong type (" + std::string(v.type_name()) + ")");
    }
  }

  void get_ints(const char* key, std::vector<int>& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    if (!v.is_array()) throw ConfigError("config key '" + key_path(key) + "' must be an array of integers");
    out.clear();
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError("config key '" + key_path(key) + "' must be an array of integers");
      out.push_back(e.get<int>());
    }
  }

  void get_stage(const char* key, StageInts& out) {
    std::vector<int> v(out.begin(), out.end());
    get_ints(key, v);
    if (v.size() != out.size())
      throw ConfigError("config key '" + key_path(key) + "' must have " + std::to_string(out.size()) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!used_.contains(k)) throw ConfigError("unknown config key '" + key_path(k) + "'");
  }

private:
  std::string where() const { return path_.empty() ? "config" : "'" + path_ + "'"; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename F>
auto wrap_value_error(F&& f) {
  try {
    return f();
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
}

WideFocusConfig wide_focus_from(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  WideFocusConfig c;
  std::string head = head_type_name(c.head_type);
  r.get("head_type", head);
  c.head_type = wrap_value_error([&] { return parse_head_type(head); });
  r.get_ints("dilations", c.dilations);
  r.get("kernel", c.kernel);
  r.get_ints("kernels", c.kernels);
  r.finish();
  wrap_value_error([&] { c.validate(); return 0; });
  return c;
}

ModelConfig model_from(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  ModelConfig c;
  std::vector<int> size;
  r.get_ints("input_size", size);
  if (!size.empty()) {
    if (size.size() != 2) throw ConfigError("config key '" + r.key_path("input_size") + "' must be [H, W]");
    c.input_h = size[0];
    c.input_w = size[1];
  }
  r.get("in_channels", c.in_channels);
  r.get("num_classes", c.num_classes);
  r.get_stage("stage_filters", c.stage_filters);
  r.get_stage("stage_heads", c.stage_heads);
  r.get_stage("kv_strides", c.kv_strides);
  if (const json* wf = r.child("wf")) c.wf = wide_focus_from(*wf, r.key_path("wf"));
  r.get("pyramid_inputs", c.pyramid_inputs);
  std::string ds = ds_name(c.deep_supervision);
  r.get("deep_supervision", ds);
  c.deep_supervision = wrap_value_error([&] { return parse_ds(ds); });
  r.get("zero_init_heads", c.zero_init_heads);
  r.finish();
  wrap_value_error([&] { c.validate(); return 0; });
  return c;
}

AugmentConfig augment_from(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  AugmentConfig c;
  r.get("enabled", c.enabled);
  r.get("rotation_deg_max", c.rotation_deg_max);
  r.get("zoom_max", c.zoom_max);
  r.get("shear_max", c.shear_max);
  r.get("shift_max", c.shift_max);
  r.get("hflip", c.hflip);
  r.get("vflip", c.vflip);
  r.finish();
  wrap_value_error([&] { c.validate(); return 0; });
  return c;
}

TrainConfig train_from(const json& j, const std::string& path, bool* ds_given = nullptr) {
  ObjectReader r(j, path);
  TrainConfig c;
  r.get("lr", c.lr);
  r.get("warmup_epochs", c.warmup_epochs);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("plateau_factor", c.plateau_factor);
  r.get("plateau_patience", c.plateau_patience);
  r.get("min_lr", c.min_lr);
  r.get("seed", c.seed);
  std::string ds = ds_name(c.ds_mode);
  if (ds_given) *ds_given = j.contains("ds_mode");
  r.get("ds_mode", ds);
  c.ds_mode = wrap_value_error([&] { return parse_ds(ds); });
  if (const json* a = r.child("augment")) c.augment = augment_from(*a, r.key_path("augment"));
  r.get("max_steps", c.max_steps);
  r.get("val_fraction", c.val_fraction);
  r.get("test_fraction", c.test_fraction);
  r.get("record_time", c.record_time);
  r.finish();
  wrap_value_error([&] { c.validate(); return 0; });
  return c;
}

}  // namespace

json to_json(const WideFocusConfig& c) {
  json j = {{"head_type", head_type_name(c.head_type)}, {"dilations", c.dilations}, {"kernel", c.kernel}};
  if (!c.kernels.empty()) j["kernels"] = c.kernels;
  return j;
}

json to_json(const ModelConfig& c) {
  return {{"input_size", {c.input_h, c.input_w}},
          {"in_channels", c.in_channels},
          {"num_classes", c.num_classes},
          {"stage_filters", c.stage_filters},
          {"stage_heads", c.stage_heads},
          {"kv_strides", c.kv_strides},
          {"wf", to_json(c.wf)},
          {"pyramid_inputs", c.pyramid_inputs},
          {"deep_supervision", ds_name(c.deep_supervision)},
          {"zero_init_heads", c.zero_init_heads}};
}

json to_json(const AugmentConfig& c) {
  return {{"enabled", c.enabled},     {"rotation_deg_max", c.rotation_deg_max},
          {"zoom_max", c.zoom_max},   {"shear_max", c.shear_max},
          {"shift_max", c.shift_max}, {"hflip", c.hflip},
          {"vflip", c.vflip}};
}

json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"warmup_epochs", c.warmup_epochs},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"min_lr", c.min_lr},
          {"seed", c.seed},
          {"ds_mode", ds_name(c.ds_mode)},
          {"augment", to_json(c.augment)},
          {"max_steps", c.max_steps},
          {"val_fraction", c.val_fraction},
          {"test_fraction", c.test_fraction},
          {"record_time", c.record_time}};
}

WideFocusConfig wide_focus_config_from_json(const json& j) { return wide_focus_from(j, "wf"); }
ModelConfig model_config_from_json(const json& j) { return model_from(j, "model"); }
AugmentConfig augment_config_from_json(const json& j) { return augment_from(j, "augment"); }
TrainConfig train_config_from_json(const json& j) { return train_from(j, "train"); }

RunConfig run_config_from_json(const json& j) {
  ObjectReader r(j, "");
  RunConfig c;
  if (const json* m = r.child("model")) c.model = model_from(*m, "model");
  bool ds_given = false;
  if (const json* t = r.child("train")) c.train = train_from(*t, "train", &ds_given);
  r.finish();
  if (!ds_given)
    c.train.ds_mode = c.model.deep_supervision;
  else if (c.train.ds_mode != c.model.deep_supervision)
    throw ConfigError(std::string("train.ds_mode '") + ds_name(c.train.ds_mode) + "' differs from model.deep_supervision '" +
                      ds_name(c.model.deep_supervision) + "'");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace fct
