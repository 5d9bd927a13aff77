// fct: command-line front end (synth, train, infer, eval, profile, gradcheck).

#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fct/config.hpp"
#include "fct/data.hpp"
#include "fct/gradcheck_suite.hpp"
#include "fct/losses.hpp"
#include "fct/model.hpp"
#include "fct/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fct;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

/// Failure that maps straight to an exit code.
struct CliFailure : std::runtime_error {
  CliFailure(int code, const std::string& kind, const std::string& msg) : std::runtime_error(msg), code(code), kind(kind) {}
  int code;
  std::string kind;
};

bool g_json = false;

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

// ---- synth

struct SynthArgs {
  fs::path out;
  int n = 250;
  int size = 64;
  int classes = 4;
  std::uint64_t seed = 0;
  std::string format = "fctt";
};

int run_synth(const SynthArgs& a) {
  if (a.n < 1) throw CliFailure(kExitUsage, "usage", "--n must be >= 1");
  const Dataset d = synth_dataset(a.n, a.size, a.classes, a.seed);
  save_dataset(d, a.out, a.format == "png" ? DataFormat::png : DataFormat::fctt);
  if (g_json)
    emit({{"schema", 1}, {"samples", d.size()}, {"out", a.out.string()}});
  else
    std::printf("wrote %zu samples (%dx%d, %d classes) to %s\n", d.size(), a.size, a.size, a.classes, a.out.c_str());
  return 0;
}

// ---- train

struct TrainArgs {
  fs::path config, data, out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

json split_json(const Dataset& d, const SplitIndices& s, const TrainConfig& t) {
  auto stems = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(d.stems[i]);
    return out;
  };
  return {{"seed", t.seed},
          {"val_fraction", t.val_fraction},
          {"test_fraction", t.test_fraction},
          {"train", stems(s.train)},
          {"val", stems(s.val)},
          {"test", stems(s.test)}};
}

int run_train(const TrainArgs& a) {
  RunConfig rc = load_run_config(a.config.string());
  if (a.seed) rc.train.seed = *a.seed;
  const Dataset all = load_dataset(a.data, rc.model.input_h, rc.model.input_w);
  if (all.num_classes != rc.model.num_classes)
    throw ConfigError("model.num_classes is " + std::to_string(rc.model.num_classes) + " but " + a.data.string() +
                      " has " + std::to_string(all.num_classes) + " classes");
  const SplitIndices split = split_indices(all.size(), rc.train.val_fraction, rc.train.test_fraction, rc.train.seed);
  if (split.train.empty()) throw ValueError("training split is empty (" + std::to_string(all.size()) + " samples)");

  fs::create_directories(a.out);
  write_text(a.out / "config.json", json{{"model", to_json(rc.model)}, {"train", to_json(rc.train)}}.dump(2) + "\n");
  write_text(a.out / "split.json", split_json(all, split, rc.train).dump(2) + "\n");

  Model model(rc.model, rc.train.seed);
  const TrainReport rep =
      train(model, all.subset(split.train), all.subset(split.val), rc.train, a.out, [&](const EpochRecord& e) {
        if (a.quiet || g_json) return;
        std::fprintf(stderr, "epoch %3d  train %.4f  val %.4f  dice %.4f  lr %.3g\n", e.epoch, e.train_loss, e.val_loss,
                     e.mean_dice, e.lr);
      });
  if (g_json)
    emit({{"schema", 1}, {"epochs", rep.epochs.size()}, {"steps", rep.step_losses.size()}, {"best_epoch", rep.best_epoch},
          {"out", a.out.string()}});
  else
    std::printf("trained %zu epochs (%zu steps); best epoch %d; outputs in %s\n", rep.epochs.size(), rep.step_losses.size(),
                rep.best_epoch, a.out.c_str());
  return 0;
}

// ---- infer

struct InferArgs {
  fs::path model, input, output, overlay;
  std::string format;
};

/// Distinct colors for classes 1.. ; background stays transparent.
std::array<std::uint8_t, 3> class_color(int c) {
  static const std::uint8_t palette[][3] = {{230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
                                            {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230}};
  const auto& p = palette[(c - 1) % 8];
  return {p[0], p[1], p[2]};
}

std::vector<std::uint8_t> overlay_rgb(const Tensor& image, const Labels& mask) {
  const auto& s = image.shape();
  const auto pixels = static_cast<std::size_t>(s[0] * s[1]);
  const auto ch = static_cast<std::size_t>(s[2]);
  const auto v = image.to_vector();
  std::vector<std::uint8_t> rgb(pixels * 3);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < 3; ++k) {
      double x = v[p * ch + (ch >= 3 ? k : 0)];
      const int c = mask.data[p];
      if (c > 0) x = 0.5 * x + 0.5 * class_color(c)[k] / 255.0;
      rgb[p * 3 + k] = static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
    }
  }
  return rgb;
}

int run_infer(const InferArgs& a) {
  const Model model = load_checkpoint(a.model);
  const auto& cfg = model.config();
  const Tensor image = read_image(a.input);
  const auto& s = image.shape();
  if (s[2] != cfg.in_channels)
    throw ValueError(a.input.string() + ": image has " + std::to_string(s[2]) + " channels, model expects " +
                     std::to_string(cfg.in_channels));
  Tensor x = resize_bilinear(image, cfg.input_h, cfg.input_w);
  x = x.reshaped({1, cfg.input_h, cfg.input_w, cfg.in_channels});
  const auto outputs = model.forward(x);
  const Tensor& logits = outputs.front().logits.value();
  if (!logits.all_finite()) throw NumericalError("non-finite logits for " + a.input.string());
  const Labels mask = resize_nearest(argmax_labels(logits), s[0], s[1]);

  std::string format = a.format;
  if (format.empty()) format = a.output.extension() == ".fctt" ? "fctt" : "png";
  if (a.output.has_parent_path()) fs::create_directories(a.output.parent_path());
  if (format == "fctt") {
    save_fctt(labels_to_tensor(mask), a.output);
  } else {
    std::vector<std::uint8_t> px(mask.data.begin(), mask.data.end());
    write_png_gray8(a.output, mask.h, mask.w, px);
  }
  if (!a.overlay.empty()) write_png_rgb8(a.overlay, mask.h, mask.w, overlay_rgb(image, mask));

  std::vector<std::int64_t> counts(static_cast<std::size_t>(cfg.num_classes), 0);
  for (auto v : mask.data) ++counts[static_cast<std::size_t>(v)];
  if (g_json)
    emit({{"schema", 1}, {"output", a.output.string()}, {"height", mask.h}, {"width", mask.w}, {"class_pixels", counts}});
  else
    std::printf("wrote %lldx%lld mask to %s\n", static_cast<long long>(mask.h), static_cast<long long>(mask.w),
                a.output.c_str());
  return 0;
}

// ---- eval

struct EvalArgs {
  fs::path model, data, split_file;
  std::string split = "test";
  int batch = 8;
};

int run_eval(const EvalArgs& a) {
  const Model model = load_checkpoint(a.model);
  const auto& cfg = model.config();
  const Dataset all = load_dataset(a.data, cfg.input_h, cfg.input_w);
  if (all.num_classes != cfg.num_classes)
    throw ValueError(a.data.string() + " has " + std::to_string(all.num_classes) + " classes, model expects " +
                     std::to_string(cfg.num_classes));

  Dataset part = all;
  if (a.split != "all") {
    fs::path sf = a.split_file.empty() ? a.model.parent_path() / "split.json" : a.split_file;
    if (a.split_file.empty() && !fs::exists(sf)) sf = a.model / "split.json";
    const json j = read_json(sf);
    if (!j.contains(a.split)) throw ValueError(sf.string() + " has no split '" + a.split + "'");
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < all.stems.size(); ++i) index[all.stems[i]] = i;
    std::vector<std::size_t> idx;
    for (const auto& stem : j.at(a.split)) {
      auto it = index.find(stem.get<std::string>());
      if (it == index.end()) throw ValueError(sf.string() + ": sample '" + stem.get<std::string>() + "' not in " + a.data.string());
      idx.push_back(it->second);
    }
    part = all.subset(idx);
  }
  if (part.size() == 0) throw ValueError("split '" + a.split + "' is empty");
  const EvalResult r = evaluate(model, part, a.batch);
  if (!std::isfinite(r.loss)) throw NumericalError("evaluation loss is not finite");

  json out = {{"schema", 1},
              {"split", a.split},
              {"samples", part.size()},
              {"loss", r.loss},
              {"dice_per_class", r.dice.per_class},
              {"mean_dice", r.dice.mean_foreground}};
  if (cfg.num_classes == 2)
    out["sensitivity_specificity"] = {{"sensitivity", r.sens_spec.sensitivity}, {"specificity", r.sens_spec.specificity}};
  emit(out);
  return 0;
}

// ---- profile

struct ProfileArgs {
  fs::path config;
};

int run_profile(const ProfileArgs& a) {
  const ModelConfig cfg = a.config.empty() ? ModelConfig{} : load_run_config(a.config.string()).model;
  const Model model(cfg);
  const Profile p = model.profile();
  if (!g_json) {
    std::cout << format_profile(cfg, p);
    return 0;
  }
  json stages = json::array();
  for (const auto& s : p.stages)
    stages.push_back({{"name", s.name}, {"input", s.input}, {"output", s.output}, {"params", s.params}, {"flops", s.flops}});
  emit({{"schema", 1},
        {"param_count", p.param_count},
        {"flops", p.flops.total()},
        {"stages", stages},
        {"published", {{"params", 31.7e6}, {"flops", 7.87e9}}}});
  return 0;
}

// ---- gradcheck

struct GradcheckArgs {
  std::uint64_t seed = 7;
  std::string scale = "tiny";
  std::string filter;
};

int run_gradcheck(const GradcheckArgs& a) {
  SuiteOptions o;
  o.seed = a.seed;
  o.scale = a.scale == "small" ? SuiteScale::small : SuiteScale::tiny;
  o.filter = a.filter;
  if (!g_json)
    o.on_case = [](const GradcheckCase& c) {
      std::printf("%-4s %-44s max rel err %.3e  (%zu components, %.2fs)\n", c.passed ? "ok" : "FAIL", c.name.c_str(),
                  c.report.max_rel_error, c.report.components_checked, c.seconds);
      std::fflush(stdout);
    };
  const auto cases = run_gradcheck_suite(o);
  std::size_t failed = 0;
  json list = json::array();
  for (const auto& c : cases) {
    failed += !c.passed;
    list.push_back({{"name", c.name}, {"passed", c.passed}, {"max_rel_error", c.report.max_rel_error},
                    {"components", c.report.components_checked}});
  }
  if (g_json)
    emit({{"schema", 1}, {"seed", a.seed}, {"cases", list}, {"failed", failed}});
  else
    std::printf("%zu/%zu cases passed (tolerance %.0e, h %.0e)\n", cases.size() - failed, cases.size(), o.tolerance, o.step);
  if (cases.empty()) throw CliFailure(kExitUsage, "usage", "no gradcheck case matches '" + a.filter + "'");
  if (failed) throw CliFailure(kExitNumerical, "gradcheck", std::to_string(failed) + " gradient check(s) failed");
  return 0;
}

int report_error(int code, const std::string& kind, const std::string& msg) {
  if (g_json)
    std::cerr << json{{"schema", 1}, {"error", {{"kind", kind}, {"message", msg}}}, {"exit_code", code}}.dump() << "\n";
  else
    std::cerr << "error: " << msg << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fully convolutional transformer for 2-D segmentation"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json, "Machine-readable JSON output and errors");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic shapes dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--n", synth.n, "Number of samples");
  c_synth->add_option("--size", synth.size, "Image side, divisible by 16");
  c_synth->add_option("--classes", synth.classes, "Classes including background");
  c_synth->add_option("--seed", synth.seed);
  c_synth->add_option("--format", synth.format)->check(CLI::IsMember({"fctt", "png"}));

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model");
  c_train->add_option("--config", tr.config, "Run config JSON")->required();
  c_train->add_option("--data", tr.data, "Dataset directory")->required();
  c_train->add_option("--out", tr.out, "Output directory")->required();
  c_train->add_option("--seed", tr.seed, "Overrides train.seed");
  c_train->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  InferArgs inf;
  auto* c_infer = app.add_subcommand("infer", "Segment one image");
  c_infer->add_option("--model", inf.model, "Checkpoint directory")->required();
  c_infer->add_option("--input", inf.input, "Image (.png or .fctt)")->required();
  c_infer->add_option("--output", inf.output, "Output mask path")->required();
  c_infer->add_option("--format", inf.format, "Default: from the output extension")->check(CLI::IsMember({"png", "fctt"}));
  c_infer->add_option("--overlay", inf.overlay, "Also write a color overlay PNG");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  c_eval->add_option("--model", ev.model, "Checkpoint directory")->required();
  c_eval->add_option("--data", ev.data, "Dataset directory")->required();
  c_eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "val", "test", "all"}));
  c_eval->add_option("--split-file", ev.split_file, "Default: split.json next to the checkpoint");
  c_eval->add_option("--batch", ev.batch)->check(CLI::PositiveNumber);

  ProfileArgs pr;
  auto* c_profile = app.add_subcommand("profile", "Parameter count, FLOPs and per-stage shapes");
  c_profile->add_option("--config", pr.config, "Run config JSON (default: the 224x224 model)");

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient oracle suite");
  c_grad->add_option("--seed", gc.seed);
  c_grad->add_option("--scale", gc.scale)->check(CLI::IsMember({"tiny", "small"}));
  c_grad->add_option("--filter", gc.filter, "Only cases whose name contains this");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kExitUsage, "usage", e.what());
  }

  try {
    if (*c_synth) return run_synth(synth);
    if (*c_train) return run_train(tr);
    if (*c_infer) return run_infer(inf);
    if (*c_eval) return run_eval(ev);
    if (*c_profile) return run_profile(pr);
    if (*c_grad) return run_gradcheck(gc);
  } catch (const CliFailure& e) {
    return report_error(e.code, e.kind, e.what());
  } catch (const ConfigError& e) {
    return report_error(kExitUsage, "config", e.what());
  } catch (const NumericalError& e) {
    return report_error(kExitNumerical, "numerical", e.what());
  } catch (const IoError& e) {
    return report_error(kExitData, "io", e.what());
  } catch (const ShapeError& e) {
    return report_error(kExitData, "shape", e.what());
  } catch (const ValueError& e) {
    return report_error(kExitData, "validation", e.what());
  } catch (const std::exception& e) {
    return report_error(kExitData, "error", e.what());
  }
  return kExitUsage;
}
