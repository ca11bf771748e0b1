#include "puat/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace puat {

std::string schedule_name(ScheduleKind k) { return k == ScheduleKind::CosineCyclic ? "cosine-cyclic" : "constant"; }

ScheduleKind parse_schedule(const std::string& s) {
  if (s == "cosine-cyclic" || s == "cosine") return ScheduleKind::CosineCyclic;
  if (s == "constant") return ScheduleKind::Constant;
  throw std::invalid_argument("unknown schedule '" + s + "'");
}

void validate(const OptimizerConfig& c) {
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw std::invalid_argument("optimizer lr must be > 0");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("optimizer weight_decay must be >= 0");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw std::invalid_argument("optimizer momentum must lie in [0, 1)");
  if (!(c.warmup_fraction > 0.0 && c.warmup_fraction < 1.0)) throw std::invalid_argument("warmup_fraction must lie in (0, 1)");
  if (!(c.div_factor >= 1.0) || !(c.final_div_factor >= 1.0)) throw std::invalid_argument("div factors must be >= 1");
}

double schedule_lr(const OptimizerConfig& c, std::int64_t step, std::int64_t total_steps) {
  if (c.schedule == ScheduleKind::Constant || total_steps <= 0) return c.lr;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  const double start = c.lr / c.div_factor;
  const double end = start / c.final_div_factor;
  const double w = c.warmup_fraction;
  if (t < w) return start + (c.lr - start) * 0.5 * (1.0 - std::cos(M_PI * t / w));
  return end + (c.lr - end) * 0.5 * (1.0 + std::cos(M_PI * (t - w) / (1.0 - w)));
}

void Sgd::step(const std::vector<Parameter*>& params, const std::vector<Matrix>& grads, double lr, bool ascend) {
  if (params.size() != grads.size()) throw std::invalid_argument("Sgd::step: parameter and gradient counts differ");
  if (velocity_.empty())
    for (auto* p : params) velocity_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  if (velocity_.size() != params.size()) throw std::invalid_argument("Sgd::step: parameter set changed");
  const double mu = config_.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& theta = params[i]->value;
    Matrix d = ascend ? Matrix(-grads[i]) : grads[i];
    if (config_.weight_decay != 0.0) d += config_.weight_decay * theta;
    if (mu != 0.0) {
      velocity_[i] = mu * velocity_[i] + d;
      if (config_.nesterov)
        d += mu * velocity_[i];
      else
        d = velocity_[i];
    }
    theta -= lr * d;
  }
}

Sgd make_optimizer(const OptimizerConfig& c) {
  validate(c);
  return Sgd(c);
}

}  // namespace puat
