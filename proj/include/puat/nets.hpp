#pragma once

#include "puat/layers.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace puat {

using ad::ImageShape;
using ad::NormMode;

/// Shape of one data item. Vector data uses (dim, 1, 1).
struct DataShape {
  ImageShape image;
  bool is_image = false;

  Eigen::Index dim() const { return image.size(); }
  static DataShape vector(Eigen::Index dim) { return {ImageShape{dim, 1, 1}, false}; }
  static DataShape picture(Eigen::Index c, Eigen::Index h, Eigen::Index w) { return {ImageShape{c, h, w}, true}; }
  bool operator==(const DataShape&) const = default;
};

struct NetSpec {
  std::string classifier = "mlp";  // mlp | wrn
  int classifier_depth = 2;        // hidden layers (mlp) or total depth (wrn)
  int classifier_width = 64;       // units (mlp) or widen factor (wrn)
  int generator_channels = 64;
  int discriminator_channels = 64;
  int attacker_hidden = 64;
  int noise_dim = 16;
  int label_embed_dim = 8;
  int power_iterations = 1;
  double attacker_init_scale = 0.01;
  double attacker_clamp = 0.0;  // soft clamp radius for z_a, 0 disables

  bool operator==(const NetSpec&) const = default;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const NetSpec& spec, const DataShape& shape, int num_classes);

struct ResBlock {
  int bn1 = -1;
  int conv1 = -1;
  int bn2 = -1;
  int conv2 = -1;
  int shortcut = -1;
  bool up = false;
  bool down = false;
  bool first = false;
};

class Classifier {
 public:
  struct Output {
    Var logits;
    Var features;  // penultimate activations
  };

  LayerStore layers;
  std::string arch;
  DataShape shape;
  int num_classes = 0;
  std::uint64_t version = 0;

  Output forward(Tape& tape, const Var& x, NormMode mode) const;
  Var logits(Tape& tape, const Var& x, NormMode mode) const { return forward(tape, x, mode).logits; }

  std::vector<int> hidden;  // mlp: linear indices of hidden layers
  int head = -1;
  int stem = -1;
  std::vector<ResBlock> blocks;
  int final_bn = -1;
};

class Generator {
 public:
  LayerStore layers;
  DataShape shape;
  int noise_dim = 0;
  int num_classes = 0;
  std::uint64_t version = 0;

  /// tanh output in [-1, 1].
  Var raw(Tape& tape, const Var& z, const Var& y, NormMode mode) const;
  /// raw mapped to the data range [0, 1].
  Var forward(Tape& tape, const Var& z, const Var& y, NormMode mode) const;

  int embed = -1;
  std::vector<int> dense;
  std::vector<ResBlock> blocks;
  int final_bn = -1;
  int to_image = -1;
  int base_channels = 0;
};

class Discriminator {
 public:
  LayerStore layers;
  DataShape shape;
  int num_classes = 0;
  std::uint64_t version = 0;

  /// Unbounded critic score, one per row. y may be soft and carry gradient.
  Var score(Tape& tape, const Var& x, const Var& y, NormMode mode) const;

  int embed = -1;
  std::vector<int> dense;
  std::vector<ResBlock> blocks;
  int head = -1;
};

class Attacker {
 public:
  LayerStore layers;
  int noise_dim = 0;
  int num_classes = 0;
  double clamp = 0.0;
  std::uint64_t version = 0;

  /// Perturbed seed z_a = z + delta(z, y).
  Var forward(Tape& tape, const Var& z, const Var& y) const;

  int embed = -1;
  int input = -1;
  std::vector<int> residual;  // pairs of linear indices
  int head = -1;
};

struct ModelBundle {
  NetSpec spec;
  DataShape shape;
  int num_classes = 0;
  Classifier C;
  Classifier teacher;
  Generator G;
  Discriminator D;
  Attacker A;
};

ModelBundle build_models(const NetSpec& spec, const DataShape& shape, int num_classes, std::uint64_t seed);

/// Class probabilities under running statistics.
Matrix classify(const Classifier& c, const Matrix& x);
/// Penultimate activations under running statistics.
Matrix features(const Classifier& c, const Matrix& x);

/// teacher <- decay * teacher + (1 - decay) * student, buffers copied.
void ema_update(Classifier& teacher, const Classifier& student, Scalar decay);

void spectral_normalize(Discriminator& d, int iterations);

/// One-hot rows for integer labels.
Matrix one_hot(const std::vector<int>& labels, int num_classes);
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace puat
