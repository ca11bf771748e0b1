#pragma once

#include "puat/attacks.hpp"
#include "puat/uae.hpp"

#include <optional>
#include <string>

namespace puat {

/// Linear is the literal critic objective, Hinge the practical one.
enum class GanMode { Linear, Hinge };
/// Which player's view of a fake term is computed. Both coincide in Linear mode.
enum class GanSide { Discriminator, Generator };

std::string gan_mode_name(GanMode m);
GanMode parse_gan_mode(const std::string& s);

struct WeightConfig {
  double lambda = 10.0;
  double gamma = 0.03;
  double beta = 6.0;
  double alpha = 50.0;

  bool operator==(const WeightConfig&) const = default;
};

void validate(const WeightConfig& w);

struct LossTerms {
  GanMode mode = GanMode::Hinge;
  Scalar L_D = 0.0;
  Scalar L_G = 0.0;
  Scalar L_Cgan = 0.0;
  Scalar L_gan_total = 0.0;
  Scalar L_nat = 0.0;
  std::optional<Scalar> L_adv;
  std::optional<Scalar> L_r;
  Scalar total = 0.0;

  bool finite() const;
};

struct GanTerm {
  Scalar value = 0.0;
  GanMode mode = GanMode::Linear;
};

/// L_D + L_G / 2 + L_C / 2; throws if the modes differ.
Scalar loss_gan_total(const GanTerm& d, const GanTerm& g, const GanTerm& c);
/// L_nat + lambda L_adv + gamma L_gan_total + beta L_r; throws if a weighted term is missing.
Scalar total_objective(const LossTerms& t, const WeightConfig& w);

// Tape-level terms. Gradients reach whichever roles the tape tracks.

/// Real term: mean D (linear) or -mean relu(1 - D) (hinge).
Var loss_D(Tape& tape, const Discriminator& d, const Var& x, const Var& y, GanMode mode);
/// Fake term on generated pairs.
Var loss_G(Tape& tape, const Discriminator& d, const Var& x_g, const Var& y, GanMode mode, GanSide side);
/// Fake term on unlabeled data with soft labels from the classifier.
Var loss_C_gan(Tape& tape, const Discriminator& d, const Var& x_c, const Var& soft_labels, GanMode mode, GanSide side);
/// Cross-entropy on labeled data plus alpha times the mean squared teacher gap on unlabeled data.
Var loss_nat(Tape& tape, const Classifier& c, const Classifier& teacher, const Var& x_l, const Matrix& y_l,
             const Var& x_u, double alpha, NormMode mode);
Var loss_adv(Tape& tape, const Classifier& c, const Var& x_tilde, const Matrix& y, NormMode mode);
/// Cross-entropy at the PGD point; the attack itself is not differentiated.
Var loss_rae(Tape& tape, const Classifier& c, const Matrix& x, const Matrix& y, const AttackSpec& spec, NormMode mode);

// Value-only conveniences.
Scalar loss_D(const Discriminator& d, const Matrix& x, const Matrix& y, GanMode mode);
Scalar loss_G(const Discriminator& d, const Generator& g, const Matrix& labels, const Matrix& noises, GanMode mode);
Scalar loss_C_gan(const Discriminator& d, const Classifier& c, const Matrix& x_u, GanMode mode);
Scalar loss_nat(const Classifier& c, const Classifier& teacher, const Matrix& x_l, const Matrix& y_l,
                const Matrix& x_u, double alpha);
Scalar loss_adv(const Classifier& c, const UAEBatch& batch);
Scalar loss_rae(const Classifier& c, const Matrix& x, const Matrix& y, const AttackSpec& spec);

}  // namespace puat
