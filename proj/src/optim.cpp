#include "fct/optim.hpp"

#include <algorithm>
#include <cmath>

namespace fct {

Adam::Adam(const ParamRegistry& params, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& v : params.values()) {
    m_.emplace_back(static_cast<std::size_t>(v.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(v.numel()), 0.0);
  }
}

void Adam::step(ParamRegistry& params, const std::vector<Tensor>& grads, double lr) {
  if (grads.size() != params.size())
    throw ValueError("adam: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                     " parameters");
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (grads[i].shape() != params.values()[i].shape())
      throw ShapeError("adam: gradient of " + params.name(i) + " has shape " + shape_str(grads[i].shape()) + ", expected " +
                       shape_str(params.values()[i].shape()));
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor& p = params.mutable_value(ParamRef{i});
    auto& m = m_[i];
    auto& v = v_[i];
    dispatch(p.dtype(), [&]<typename T>() {
      auto pd = p.mutable_data<T>();
      dispatch(grads[i].dtype(), [&]<typename G>() {
        auto gd = grads[i].data<G>();
        for (std::size_t j = 0; j < m.size(); ++j) {
          const double g = static_cast<double>(gd[j]);
          m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
          v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
          const double mhat = m[j] / c1;
          const double vhat = v[j] / c2;
          pd[j] = static_cast<T>(static_cast<double>(pd[j]) - lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
        }
      });
    });
  }
}

LrSchedule::LrSchedule(ScheduleConfig cfg) : cfg_(cfg), plateau_lr_(cfg.lr) {
  if (!(cfg.plateau_factor > 0.0 && cfg.plateau_factor < 1.0)) throw ValueError("schedule: plateau_factor must be in (0, 1)");
  if (cfg.warmup_epochs < 0 || cfg.plateau_patience < 1) throw ValueError("schedule: warmup >= 0 and patience >= 1 required");
  if (!(cfg.lr > 0.0)) throw ValueError("schedule: lr must be > 0");
}

double LrSchedule::lr(int epoch) const {
  if (epoch < cfg_.warmup_epochs) {
    const double start = cfg_.lr / 100.0;
    return start + (cfg_.lr - start) * static_cast<double>(epoch) / static_cast<double>(cfg_.warmup_epochs);
  }
  return plateau_lr_;
}

void LrSchedule::observe(int epoch, double val_loss) {
  if (epoch < cfg_.warmup_epochs || !std::isfinite(val_loss)) return;
  if (val_loss < best_ - cfg_.threshold) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return;
  }
  if (++bad_epochs_ >= cfg_.plateau_patience) {
    const double next = std::max(cfg_.min_lr, plateau_lr_ * cfg_.plateau_factor);
    if (next < plateau_lr_) ++reductions_;
    plateau_lr_ = next;
    bad_epochs_ = 0;
  }
}

double lr_schedule(int epoch, const std::vector<double>& val_history, const ScheduleConfig& cfg) {
  LrSchedule s(cfg);
  const int n = std::min<int>(epoch, static_cast<int>(val_history.size()));
  for (int e = 0; e < n; ++e) s.observe(e, val_history[static_cast<std::size_t>(e)]);
  return s.lr(epoch);
}

}  // namespace fct
