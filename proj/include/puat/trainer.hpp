#pragma once

#include "puat/losses.hpp"
#include "puat/optim.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace puat {

struct EarlyStopping {
  std::string metric = "val_rob_acc";  // val_rob_acc | val_nat_acc
  int patience = 5;

  bool operator==(const EarlyStopping&) const = default;
};

struct TrainConfig {
  WeightConfig weights;
  OptimizerConfig optimizer;
  double gan_lr_scale = 0.05;
  std::int64_t labeled_batch = 256;
  std::int64_t unlabeled_batch = 256;
  int pretrain_epochs = 0;
  int epochs = 10;
  std::int64_t steps_per_epoch = 0;  // 0 derives it from the partition sizes
  EarlyStopping early_stopping;
  std::uint64_t seed = 0;
  GanMode gan_mode = GanMode::Hinge;
  double ema_decay = 0.999;
  double ema_rampup = 0.01;  // share of all steps over which the decay ramps up
  AttackSpec rae_attack = pgd_preset(8.0);
  AttackSpec val_attack = pgd_preset(8.0);
  bool pseudo_labels = true;
  double pseudo_threshold = 0.95;
  int inner_steps = 1;  // ascent repeats for D and A per step

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& c);

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One optimizer per network plus the GAN learning-rate factor.
struct Optimizers {
  Sgd C;
  Sgd G;
  Sgd D;
  Sgd A;
  double gan_lr_factor = 1.0;
};

Optimizers make_optimizers(const TrainConfig& c);

struct StepContext {
  double lr_classifier = 0.0;
  double lr_gan = 0.0;
  std::int64_t step = 0;         // global step index for the EMA ramp
  std::int64_t total_steps = 1;
};

/// One alternating update in the order D, A, C (with teacher EMA), G.
LossTerms train_step(ModelBundle& m, Optimizers& opt, const BatchPair& batch, const UAEBatch& uae,
                     const TrainConfig& cfg, const StepContext& ctx);

/// Warm-up of C on the natural loss and of (G, D) on their GAN game; A is untouched.
std::vector<LossTerms> pretrain(ModelBundle& m, Optimizers& opt, const DatasetSplit& data, const TrainConfig& cfg,
                                Rng& data_rng, Rng& noise_rng);

/// EMA decay in effect at `step`.
double ema_decay_at(const TrainConfig& cfg, std::int64_t step, std::int64_t total_steps);
std::int64_t steps_per_epoch(const TrainConfig& cfg, const DatasetSplit& data);

struct TrainReport {
  std::vector<LossTerms> epoch_losses;
  std::vector<LossTerms> step_losses;
  std::vector<double> val_nat_acc;
  std::vector<double> val_rob_acc;
  std::vector<double> lr;
  int best_epoch = -1;
  std::string best_checkpoint;
  int stop_epoch = 0;
  double wall_seconds = 0.0;
  bool gan_lr_halved = false;
};

struct FitResult {
  TrainReport report;
  ModelBundle best;
  ModelBundle last;
};

/// Pretraining followed by the joint loop with early stopping. When `out_dir`
/// is nonempty, writes metrics.csv, steps.csv, checkpoints/best.ckpt and
/// checkpoints/last.ckpt there.
FitResult fit(const TrainConfig& cfg, const NetSpec& spec, const DatasetSplit& data,
              const std::filesystem::path& out_dir = {});

/// CSV rendering of the per-epoch metrics.
std::string metrics_csv(const TrainReport& r);
std::string steps_csv(const TrainReport& r);

}  // namespace puat
