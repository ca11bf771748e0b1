#include "puat/uae.hpp"

#include <stdexcept>

namespace puat {

Matrix sample_noise(Rng& rng, Eigen::Index n, int dim) {
  std::normal_distribution<Scalar> nd(0.0, 1.0);
  Matrix z(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < dim; ++j) z(i, j) = nd(rng);
  return z;
}

Matrix sample_labels(const DatasetSplit& split, Eigen::Index n, Rng& rng) {
  if (split.labeled.size() == 0) throw DatasetError("cannot sample labels from an empty labeled pool");
  std::uniform_int_distribution<Eigen::Index> pick(0, split.labeled.size() - 1);
  Matrix y = Matrix::Zero(n, split.num_classes);
  for (Eigen::Index i = 0; i < n; ++i) y(i, split.labeled.labels[static_cast<std::size_t>(pick(rng))]) = 1.0;
  return y;
}

Matrix generate_natural(const Generator& g, const Matrix& z, const Matrix& y, NormMode mode) {
  Tape tape;
  return g.forward(tape, tape.constant(z), tape.constant(y), mode).value();
}

Matrix perturb_seed(const Attacker& a, const Matrix& z, const Matrix& y) {
  Tape tape;
  return a.forward(tape, tape.constant(z), tape.constant(y)).value();
}

UAEBatch generate_uae(const Generator& g, const Attacker& a, const Matrix& z, const Matrix& y, NormMode mode) {
  if (z.rows() != y.rows()) throw std::invalid_argument("generate_uae: noise and label counts differ");
  UAEBatch b;
  b.z = z;
  b.labels = y;
  b.z_a = perturb_seed(a, z, y);
  b.x_g = generate_natural(g, z, y, mode);
  b.x_tilde = generate_natural(g, b.z_a, y, mode);
  return b;
}

}  // namespace puat
