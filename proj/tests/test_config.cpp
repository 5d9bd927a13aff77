#include "doctest.h"

#include "fct/config.hpp"

using namespace fct;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("unknown keys are named in the error") {
  CHECK(error_of(json::parse(R"({"model": {"wdith": 3}})")).find("'model.wdith'") != std::string::npos);
  CHECK(error_of(json::parse(R"({"train": {"augment": {"spin": 1}}})")).find("'train.augment.spin'") != std::string::npos);
  CHECK(error_of(json::parse(R"({"extra": {}})")).find("'extra'") != std::string::npos);
}

TEST_CASE("wrongly typed values are named in the error") {
  const std::string e = error_of(json::parse(R"({"train": {"lr": "fast"}})"));
  CHECK(e.find("'train.lr'") != std::string::npos);
  CHECK(e.find("wrong type") != std::string::npos);
  CHECK(error_of(json::parse(R"({"model": {"stage_filters": [1, 2]}})")).find("9 entries") != std::string::npos);
  CHECK(error_of(json::parse(R"({"train": {"epochs": 2.5}})")).find("'train.epochs'") != std::string::npos);
  CHECK(error_of(json::parse(R"({"model": {"pyramid_inputs": 1}})")).find("'model.pyramid_inputs'") != std::string::npos);
}

TEST_CASE("invariant violations surface as config errors") {
  CHECK_FALSE(error_of(json::parse(R"({"model": {"input_size": [100, 100]}})")).empty());
  CHECK_FALSE(error_of(json::parse(R"({"train": {"plateau_factor": 1.5}})")).empty());
  CHECK_FALSE(error_of(json::parse(R"({"train": {"warmup_epochs": 20, "epochs": 10}})")).empty());
  CHECK_FALSE(error_of(json::parse(R"({"model": {"wf": {"head_type": "conv3d"}}})")).empty());
  CHECK_FALSE(error_of(json::parse(R"({"model": {"deep_supervision": "off"}, "train": {"ds_mode": "full"}})")).empty());
}

TEST_CASE("train ds_mode follows the model when omitted") {
  const RunConfig c = run_config_from_json(json::parse(R"({"model": {"deep_supervision": "full"}})"));
  CHECK(c.train.ds_mode == DeepSupervision::full);
}

TEST_CASE("round trip through JSON") {
  RunConfig c;
  c.model = ModelConfig::scaled(64, 3);
  c.model.kv_strides[8] = 2;
  c.model.wf = WideFocusConfig::ablation_row(9);
  c.model.deep_supervision = DeepSupervision::off;
  c.train.ds_mode = DeepSupervision::off;
  c.train.lr = 3e-4;
  c.train.seed = 42;
  c.train.augment.hflip = false;
  const json j = {{"model", to_json(c.model)}, {"train", to_json(c.train)}};
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back.model) == to_json(c.model));
  CHECK(to_json(back.train) == to_json(c.train));
  CHECK(back.model.wf.kernels == std::vector<int>{3, 4});
  CHECK(back.model.stage_filters == c.model.stage_filters);
}

TEST_CASE("defaults") {
  const RunConfig c = run_config_from_json(json::object());
  CHECK(c.model.stage_filters == StageInts{16, 32, 64, 128, 384, 128, 64, 32, 16});
  CHECK(c.model.stage_heads == StageInts{2, 4, 8, 12, 16, 12, 8, 4, 2});
  CHECK(c.model.wf.dilations == std::vector<int>{1, 2, 3});
  CHECK(c.model.deep_supervision == DeepSupervision::partial);
  CHECK(c.model.pyramid_inputs);
  CHECK(c.train.lr == 1e-3);
  CHECK(c.train.warmup_epochs == 50);
  CHECK(c.train.epochs == 250);
  CHECK(c.train.plateau_factor == 0.5);
  CHECK(c.train.plateau_patience == 10);
  CHECK(c.train.min_lr == 1e-6);
  CHECK(c.train.augment.rotation_deg_max == 360);
  CHECK(c.train.augment.zoom_max == 0.2);
  CHECK(c.train.augment.shear_max == 0.1);
  CHECK(c.train.augment.shift_max == 0.3);
  const ModelConfig s = ModelConfig::scaled();
  CHECK(s.stage_filters == StageInts{8, 16, 32, 64, 96, 64, 32, 16, 8});
  CHECK(s.stage_heads == StageInts{2, 2, 4, 4, 8, 4, 4, 2, 2});
  CHECK(s.input_h == 64);
}

TEST_CASE("missing config file is an io error") {
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), IoError);
}
