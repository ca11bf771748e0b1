#pragma once

#include "puat/autodiff.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace puat {

enum class ScheduleKind { CosineCyclic, Constant };

std::string schedule_name(ScheduleKind k);
ScheduleKind parse_schedule(const std::string& s);

struct OptimizerConfig {
  double lr = 0.2;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  bool nesterov = true;
  ScheduleKind schedule = ScheduleKind::CosineCyclic;
  double warmup_fraction = 0.3;  // share of the cycle spent rising to the peak
  double div_factor = 25.0;      // start = peak / div_factor
  double final_div_factor = 1e4; // end = start / final_div_factor

  bool operator==(const OptimizerConfig&) const = default;
};

void validate(const OptimizerConfig& c);

/// Learning rate at `step` of a cycle lasting `total_steps`.
double schedule_lr(const OptimizerConfig& c, std::int64_t step, std::int64_t total_steps);

/// SGD with momentum, optional Nesterov lookahead and coupled weight decay.
class Sgd {
 public:
  Sgd() = default;
  explicit Sgd(OptimizerConfig config) : config_(config) {}

  /// Descends `grads`, or ascends them when `ascend` is set. Weight decay
  /// always shrinks the parameters.
  void step(const std::vector<Parameter*>& params, const std::vector<Matrix>& grads, double lr, bool ascend = false);

  const OptimizerConfig& config() const { return config_; }
  std::vector<Matrix>& velocity() { return velocity_; }
  const std::vector<Matrix>& velocity() const { return velocity_; }

 private:
  OptimizerConfig config_;
  std::vector<Matrix> velocity_;
};

Sgd make_optimizer(const OptimizerConfig& c);

}  // namespace puat
