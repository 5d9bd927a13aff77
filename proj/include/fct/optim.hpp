#ifndef FCT_OPTIM_HPP
#define FCT_OPTIM_HPP

#include <cstdint>
#include <limits>
#include <vector>

#include "fct/params.hpp"

namespace fct {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam. Moments are kept in double precision.
class Adam {
public:
  explicit Adam(const ParamRegistry& params, AdamConfig cfg = {});

  /// One update of every parameter; grads are in registry order.
  void step(ParamRegistry& params, const std::vector<Tensor>& grads, double lr);

  std::int64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct ScheduleConfig {
  double lr = 1e-3;
  int warmup_epochs = 50;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  double min_lr = 1e-6;
  /// Minimum decrease of the validation loss that counts as improvement.
  double threshold = 1e-4;
};

/// Linear warmup from lr/100 to lr over warmup_epochs, then reduce-on-plateau
/// driven by the validation loss of epochs at or after the warmup.
class LrSchedule {
public:
  explicit LrSchedule(ScheduleConfig cfg);

  double lr(int epoch) const;
  /// Report the validation loss at the end of `epoch`.
  void observe(int epoch, double val_loss);

  int reductions() const { return reductions_; }

private:
  ScheduleConfig cfg_;
  double plateau_lr_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
  int reductions_ = 0;
};

/// lr for `epoch` after replaying the losses of epochs 0..epoch-1.
double lr_schedule(int epoch, const std::vector<double>& val_history, const ScheduleConfig& cfg);

}  // namespace fct

#endif  // FCT_OPTIM_HPP
