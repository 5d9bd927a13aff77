#include "fct/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"

namespace fct {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValueError("train: lr must be > 0");
  if (epochs < 1) throw ValueError("train: epochs must be >= 1");
  if (warmup_epochs < 0 || warmup_epochs > epochs) throw ValueError("train: warmup_epochs must be in [0, epochs]");
  if (batch_size < 1) throw ValueError("train: batch_size must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ValueError("train: plateau_factor must be in (0, 1)");
  if (plateau_patience < 1) throw ValueError("train: plateau_patience must be >= 1");
  if (!(min_lr >= 0.0)) throw ValueError("train: min_lr must be >= 0");
  if (max_steps < 0) throw ValueError("train: max_steps must be >= 0");
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0)
    throw ValueError("train: val_fraction + test_fraction must be in [0, 1)");
  augment.validate();
}

ScheduleConfig TrainConfig::schedule() const {
  ScheduleConfig s;
  s.lr = lr;
  s.warmup_epochs = warmup_epochs;
  s.plateau_factor = plateau_factor;
  s.plateau_patience = plateau_patience;
  s.min_lr = min_lr;
  return s;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

std::string fmt(double v) {
  if (!std::isfinite(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string TrainReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", number_or_null(e.train_loss)},
                    {"val_loss", number_or_null(e.val_loss)},
                    {"lr", e.lr},
                    {"dice", e.dice},
                    {"mean_dice", e.mean_dice},
                    {"seconds", e.seconds}});
  }
  nlohmann::json steps = nlohmann::json::array();
  for (double v : step_losses) steps.push_back(number_or_null(v));
  const nlohmann::json j = {{"schema", 1},
                            {"epochs", rows},
                            {"step_losses", steps},
                            {"best_epoch", best_epoch},
                            {"best_val_loss", number_or_null(best_val_loss)}};
  return j.dump(2) + "\n";
}

std::string TrainReport::to_csv(int num_classes) const {
  std::string out = "epoch,train_loss,val_loss,lr";
  for (int c = 1; c < num_classes; ++c) out += ",dice_c" + std::to_string(c);
  out += ",mean_dice,seconds\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + fmt(e.train_loss) + "," + fmt(e.val_loss) + "," + fmt(e.lr);
    for (int c = 1; c < num_classes; ++c)
      out += "," + (static_cast<std::size_t>(c) < e.dice.size() ? fmt(e.dice[static_cast<std::size_t>(c)]) : std::string());
    out += "," + fmt(e.mean_dice) + "," + fmt(e.seconds) + "\n";
  }
  return out;
}

EvalResult evaluate(const Model& model, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw ValueError("evaluate: empty dataset");
  if (batch_size < 1) throw ValueError("evaluate: batch_size must be >= 1");
  const int classes = model.config().num_classes;
  if (data.num_classes != classes)
    throw ValueError("evaluate: dataset has " + std::to_string(data.num_classes) + " classes, model predicts " +
                     std::to_string(classes));
  const Binding params(model.params());
  EvalResult r;
  Labels all_pred, all_target;
  double loss_sum = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<const SegmentationSample*> batch;
    for (std::size_t i = begin; i < end; ++i) batch.push_back(&data.samples[i]);
    Tensor images;
    Labels labels;
    make_batch(batch, images, labels);
    const auto outs = model.forward(params, Var(images));
    loss_sum += combined_loss(outs, labels).value().item() * static_cast<double>(end - begin);
    const Labels pred = argmax_labels(outs.front().logits.value());
    all_pred = concat_labels({&all_pred, &pred});
    all_target = concat_labels({&all_target, &labels});
  }
  r.loss = loss_sum / static_cast<double>(data.size());
  r.dice = dice_per_image(all_pred, all_target, classes);
  r.sens_spec = sensitivity_specificity(all_pred, all_target);
  return r;
}

TrainReport train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir, const EpochCallback& on_epoch) {
  cfg.validate();
  if (cfg.ds_mode != model.config().deep_supervision)
    throw ValueError(std::string("train: ds_mode '") + ds_name(cfg.ds_mode) + "' differs from the model's '" +
                     ds_name(model.config().deep_supervision) + "'");
  if (train_set.size() == 0) throw ValueError("train: empty training set");
  const int classes = model.config().num_classes;
  if (train_set.num_classes != classes)
    throw ValueError("train: dataset has " + std::to_string(train_set.num_classes) + " classes, model predicts " +
                     std::to_string(classes));
  if (out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir->string() + ": " + ec.message());
  }

  Adam adam(model.params());
  LrSchedule schedule(cfg.schedule());
  TrainReport report;
  report.best_val_loss = std::numeric_limits<double>::infinity();
  std::int64_t step = 0;
  const std::size_t n = train_set.size();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = schedule.lr(epoch);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle(mix_seed(cfg.seed, 0x5348554646ull, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle.integer(0, static_cast<std::int64_t>(i) - 1))]);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t begin = 0; begin < n; begin += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && step >= cfg.max_steps) break;
      const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SegmentationSample> augmented;
      augmented.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), order[i]));
        augmented.push_back(augment(train_set.samples[order[i]], cfg.augment, rng));
      }
      std::vector<const SegmentationSample*> ptrs;
      for (const auto& s : augmented) ptrs.push_back(&s);
      Tensor images;
      Labels labels;
      make_batch(ptrs, images, labels);

      Tape tape;
      const Binding params(model.params(), &tape);
      Var loss;
      try {
        loss = combined_loss(model.forward(params, Var(images)), labels);
      } catch (const NumericalError& e) {
        throw NumericalError("non-finite value at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) +
                             "): " + e.what());
      }
      const double lv = loss.value().item();
      if (!std::isfinite(lv))
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (epoch " + std::to_string(epoch) + ")");
      tape.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(params.vars().size());
      for (const auto& v : params.vars()) grads.push_back(tape.grad(v));
      adam.step(model.params(), grads, lr);

      report.step_losses.push_back(lv);
      loss_sum += lv * static_cast<double>(end - begin);
      seen += end - begin;
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : std::numeric_limits<double>::quiet_NaN();
    double selection = rec.train_loss;
    if (val_set.size() > 0) {
      const EvalResult ev = evaluate(model, val_set, cfg.batch_size);
      rec.val_loss = ev.loss;
      rec.dice = ev.dice.per_class;
      rec.mean_dice = ev.dice.mean_foreground;
      selection = ev.loss;
    } else {
      rec.val_loss = std::numeric_limits<double>::quiet_NaN();
      const EvalResult ev = evaluate(model, train_set, cfg.batch_size);
      rec.dice = ev.dice.per_class;
      rec.mean_dice = ev.dice.mean_foreground;
    }
    schedule.observe(epoch, selection);
    if (selection < report.best_val_loss) {
      report.best_val_loss = selection;
      report.best_epoch = epoch;
      if (out_dir) save_checkpoint(model, *out_dir / "best");
    }
    if (cfg.record_time)
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (out_dir) {
    save_checkpoint(model, *out_dir / "last");
    std::ofstream(*out_dir / "report.json") << report.to_json();
    std::ofstream(*out_dir / "report.csv") << report.to_csv(classes);
  }
  return report;
}

}  // namespace fct
