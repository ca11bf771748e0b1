#pragma once

#include "puat/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace puat {

using Rng = std::mt19937_64;

/// Power-iteration state for one spectrally normalized weight.
struct SpectralNorm {
  Vector u;
  Vector v;
};

/// Refines (u, v) towards the leading singular pair of w. A zero weight
/// leaves the state untouched.
void power_iterate(const Matrix& w, SpectralNorm& sn, int iterations);

/// Largest singular value estimate u^T w v for the current state.
Scalar spectral_sigma(const Matrix& w, const SpectralNorm& sn);

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out
  bool spectral = false;
  SpectralNorm sn;

  Var forward(Tape& tape, const Var& x) const;
  Eigen::Index in() const { return weight.value.rows(); }
  Eigen::Index out() const { return weight.value.cols(); }
};

struct Conv {
  Parameter weight;  // (in_channels * k * k) x out_channels
  Parameter bias;    // 1 x out_channels
  Eigen::Index kernel = 3;
  Eigen::Index stride = 1;
  Eigen::Index padding = 1;
  bool spectral = false;
  SpectralNorm sn;

  Var forward(Tape& tape, const Var& x, const ad::ImageShape& in, ad::ImageShape* out) const;
};

struct BatchNorm {
  Parameter gamma;  // 1 x C
  Parameter beta;   // 1 x C
  // Written only by forward passes in NormMode::Train.
  mutable ad::BatchNormState state;

  Var forward(Tape& tape, const Var& x, const ad::ImageShape& shape, ad::NormMode mode) const;
};

/// Flat storage for every layer of one network, so that parameters, norm
/// statistics and spectral states can be enumerated uniformly.
struct LayerStore {
  std::vector<Linear> linear;
  std::vector<Conv> conv;
  std::vector<BatchNorm> norm;
  std::vector<Parameter> extra;  // free-standing tensors such as label embeddings

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void set_role(Role role);

  int add_linear(const std::string& name, Eigen::Index in, Eigen::Index out, Role role, Rng& rng,
                 bool spectral = false, Scalar init_scale = 1.0);
  int add_conv(const std::string& name, Eigen::Index in_channels, Eigen::Index out_channels, Eigen::Index kernel,
               Eigen::Index stride, Eigen::Index padding, Role role, Rng& rng, bool spectral = false);
  int add_norm(const std::string& name, Eigen::Index channels, Role role);
  int add_extra(const std::string& name, Matrix value, Role role);
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng, Scalar scale = 1.0);

}  // namespace puat
