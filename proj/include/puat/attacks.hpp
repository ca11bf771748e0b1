#pragma once

#include "puat/datasets.hpp"

#include <string>
#include <vector>

namespace puat {

enum class AttackFamily { PixelPgd, LatentPgd, LatentSearch };

struct AttackSpec {
  AttackFamily family = AttackFamily::PixelPgd;
  double epsilon = 8.0 / 255.0;
  double step_size = 1.0 / 255.0;
  int steps = 20;
  double lambda1 = 100.0;  // latent drift penalty
  double lambda2 = 100.0;  // realism penalty
  std::string label;       // report name; derived when empty

  bool operator==(const AttackSpec&) const = default;
};

std::string family_name(AttackFamily f);
AttackFamily parse_family(const std::string& s);

/// Throws std::invalid_argument on a spec violating its invariants.
void validate(const AttackSpec& spec);
std::string attack_label(const AttackSpec& spec);

/// L-inf PGD with budgets eps/255 for eps in {2, 4, 8}.
AttackSpec pgd_preset(double eps_255);
/// Latent PGD with eps in {0.1, 0.01}.
AttackSpec gpgd_preset(double eps);
AttackSpec latent_search_preset();

/// Gradient of the summed cross-entropy with respect to x.
Matrix input_gradient(const Classifier& c, const Matrix& x, const Matrix& y, NormMode mode);

Matrix pgd_attack(const Classifier& c, const Matrix& x, const Matrix& y, const AttackSpec& spec,
                  NormMode mode = NormMode::Eval);

Matrix latent_pgd_attack(const Classifier& c, const Generator& g, const Matrix& z, const Matrix& y,
                         const AttackSpec& spec);

struct LatentSearchResult {
  Matrix x_tilde;
  Matrix z;
  std::vector<bool> success;
};

LatentSearchResult latent_search_attack(const Classifier& c, const Generator& g, const Discriminator& d,
                                        const Matrix& y, const AttackSpec& spec, Rng& rng);
/// Same search from given seeds z0.
LatentSearchResult latent_search_from(const Classifier& c, const Generator& g, const Discriminator& d,
                                      const Matrix& z0, const Matrix& y, const AttackSpec& spec);

/// Fraction of test items still classified correctly after the attack. Latent
/// attacks draw one fresh seed per item conditioned on its label.
double evaluate_robust_accuracy(const ModelBundle& m, const AttackSpec& spec, const Examples& test, Rng& rng);
double evaluate_robust_accuracy(const Classifier& c, const AttackSpec& spec, const Examples& test);

double natural_accuracy(const Classifier& c, const Examples& test);

}  // namespace puat
