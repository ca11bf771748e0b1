#pragma once

#include "puat/datasets.hpp"

namespace puat {

/// Natural samples and their unrestricted adversarial counterparts.
struct UAEBatch {
  Matrix x_g;
  Matrix x_tilde;
  Matrix labels;  // one-hot
  Matrix z;
  Matrix z_a;

  Eigen::Index size() const { return labels.rows(); }
};

/// Standard normal seed noise.
Matrix sample_noise(Rng& rng, Eigen::Index n, int dim);

/// One-hot labels drawn uniformly from the labeled pool.
Matrix sample_labels(const DatasetSplit& split, Eigen::Index n, Rng& rng);

Matrix generate_natural(const Generator& g, const Matrix& z, const Matrix& y, NormMode mode = NormMode::TrainFrozenStats);
Matrix perturb_seed(const Attacker& a, const Matrix& z, const Matrix& y);
UAEBatch generate_uae(const Generator& g, const Attacker& a, const Matrix& z, const Matrix& y,
                      NormMode mode = NormMode::TrainFrozenStats);

}  // namespace puat
