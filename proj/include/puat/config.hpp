#pragma once

#include "puat/trainer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace puat {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string dataset = "gauss2d";
  std::string data_root;  // empty defers to PUAT_DATA_ROOT
  LoadOptions load;
  NetSpec net;
  TrainConfig train;
  std::vector<AttackSpec> attacks = default_battery();
  std::string output_dir = "runs/default";
  std::vector<double> sweep_betas = {0.0, 1.0, 3.0, 6.0};
  int alignment_per_class = 200;

  static std::vector<AttackSpec> default_battery();

  bool operator==(const ExperimentConfig&) const = default;
};

/// `pgd eps=8/255 steps=20 step=1/255` and friends.
AttackSpec parse_attack(const std::string& line);
std::string format_attack(const AttackSpec& spec);

/// Sectioned key = value text. Absent keys keep their defaults; unknown keys,
/// malformed values and constraint violations throw ConfigError naming the key.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& c);

/// Checks every constraint; messages start with `section.key`.
void validate(const ExperimentConfig& c);

/// Propagates the top-level seed into the load and train sections.
void apply_seed(ExperimentConfig& c, std::uint64_t seed);

/// Explicit root, else PUAT_DATA_ROOT, else `data`.
std::filesystem::path resolve_data_root(const ExperimentConfig& c);

}  // namespace puat
