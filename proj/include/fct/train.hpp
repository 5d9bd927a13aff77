#ifndef FCT_TRAIN_HPP
#define FCT_TRAIN_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fct/data.hpp"
#include "fct/optim.hpp"

namespace fct {

struct TrainConfig {
  double lr = 1e-3;
  int warmup_epochs = 50;
  int epochs = 250;
  int batch_size = 8;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double min_lr = 1e-6;
  std::uint64_t seed = 0;
  DeepSupervision ds_mode = DeepSupervision::partial;
  AugmentConfig augment;
  /// Stop after this many optimizer steps (0: no limit).
  std::int64_t max_steps = 0;
  double val_fraction = 0.1;
  double test_fraction = 0.2;
  /// When false, wall-clock seconds are reported as 0 so reports are reproducible byte for byte.
  bool record_time = true;

  void validate() const;
  ScheduleConfig schedule() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  /// NaN when there is no validation set.
  double val_loss = 0.0;
  double lr = 0.0;
  std::vector<double> dice;  ///< per class, index 0 is background
  double mean_dice = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  int best_epoch = -1;
  double best_val_loss = 0.0;

  std::string to_json() const;
  std::string to_csv(int num_classes) const;
};

struct EvalResult {
  double loss = 0.0;
  DiceResult dice;  ///< averaged per image
  SensSpec sens_spec;
};

/// Inference over a dataset in batches; dice is computed per image and
/// averaged.
EvalResult evaluate(const Model& model, const Dataset& data, int batch_size = 8);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam training. Writes report.json, report.csv and the best
/// (lowest validation loss) checkpoint under out_dir/best when out_dir is set.
/// Without a validation set the training loss drives selection and the
/// plateau schedule. A non-finite loss raises NumericalError naming the step.
TrainReport train(Model& model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt, const EpochCallback& on_epoch = {});

}  // namespace fct

#endif  // FCT_TRAIN_HPP
