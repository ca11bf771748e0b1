#include "doctest.h"
#include "gradcheck.hpp"

#include "puat/attacks.hpp"
#include "puat/uae.hpp"

#include <set>

using namespace puat;
using puat::testing::random_matrix;

namespace {

NetSpec small_spec() {
  NetSpec s;
  s.classifier_depth = 1;
  s.classifier_width = 8;
  s.generator_channels = 8;
  s.discriminator_channels = 8;
  s.attacker_hidden = 8;
  s.noise_dim = 3;
  s.label_embed_dim = 2;
  return s;
}

Examples balanced(int per_class, int classes, std::uint64_t seed) {
  Examples e;
  e.x = random_matrix(per_class * classes, 2, seed, 0, 1);
  for (int i = 0; i < per_class * classes; ++i) {
    e.labels.push_back(i % classes);
    e.ids.push_back(i);
  }
  return e;
}

}  // namespace

TEST_CASE("presets") {
  const auto p = pgd_preset(8);
  CHECK(p.family == AttackFamily::PixelPgd);
  CHECK(p.epsilon == 8.0 / 255.0);
  CHECK(p.steps == 20);
  CHECK(p.step_size == 1.0 / 255.0);
  const auto g = gpgd_preset(0.1);
  CHECK(g.family == AttackFamily::LatentPgd);
  CHECK(g.epsilon == 0.1);
  CHECK(g.step_size == 0.1);
  CHECK(g.steps == 20);
  const auto s = latent_search_preset();
  CHECK(s.lambda1 == 100.0);
  CHECK(s.lambda2 == 100.0);
  CHECK(s.steps == 200);
  std::set<std::string> labels;
  for (const auto& a : {pgd_preset(2), pgd_preset(4), pgd_preset(8), gpgd_preset(0.01), gpgd_preset(0.1), s})
    labels.insert(attack_label(a));
  CHECK(labels.size() == 6);
  CHECK(parse_family(family_name(AttackFamily::LatentSearch)) == AttackFamily::LatentSearch);
  CHECK_THROWS(parse_family("fgsm"));
}

TEST_CASE("spec validation") {
  AttackSpec a = pgd_preset(8);
  a.epsilon = -0.1;
  CHECK_THROWS_AS(validate(a), std::invalid_argument);
  a = pgd_preset(8);
  a.steps = -1;
  CHECK_THROWS_AS(validate(a), std::invalid_argument);
  a = latent_search_preset();
  a.lambda1 = -1;
  CHECK_THROWS_AS(validate(a), std::invalid_argument);
}

TEST_CASE("pixel PGD") {
  const ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 1);
  Matrix x = random_matrix(30, 2, 2, 0, 1);
  x.row(0).setZero();
  x.row(1).setOnes();
  std::vector<int> labels;
  for (int i = 0; i < 30; ++i) labels.push_back(i % 3);
  const Matrix y = one_hot(labels, 3);
  CHECK(pgd_attack(m.C, x, y, pgd_preset(0)) == x);
  for (double eps : {2.0, 8.0, 40.0}) {
    const AttackSpec spec = pgd_preset(eps);
    const Matrix adv = pgd_attack(m.C, x, y, spec);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      CHECK((adv.row(i) - x.row(i)).cwiseAbs().maxCoeff() <= spec.epsilon + 1e-7);
      CHECK(adv.row(i).minCoeff() >= 0.0);
      CHECK(adv.row(i).maxCoeff() <= 1.0);
    }
  }
  CHECK_THROWS_AS(pgd_attack(m.C, x, y, gpgd_preset(0.1)), std::invalid_argument);
  CHECK_THROWS_AS(pgd_attack(m.C, x, y.topRows(3), pgd_preset(8)), std::invalid_argument);
}

TEST_CASE("input gradient matches finite differences") {
  const ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 3);
  const Matrix x = random_matrix(4, 2, 4, 0, 1);
  const Matrix y = one_hot({0, 1, 2, 0}, 3);
  const Matrix g = input_gradient(m.C, x, y, NormMode::Eval);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      Matrix xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const auto total = [&](const Matrix& v) {
        const Matrix p = classify(m.C, v);
        return -(y.array() * p.array().log()).sum();
      };
      CHECK(g(i, j) == doctest::Approx((total(xp) - total(xm)) / (2 * h)).epsilon(1e-6));
    }
}

TEST_CASE("latent attacks") {
  const ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 5);
  const Matrix z = random_matrix(6, 3, 6);
  const Matrix y = one_hot({0, 1, 2, 0, 1, 2}, 3);
  const Matrix natural = generate_natural(m.G, z, y, NormMode::Eval);
  AttackSpec g0 = gpgd_preset(0.1);
  g0.epsilon = 0.0;
  CHECK(latent_pgd_attack(m.C, m.G, z, y, g0) == natural);
  CHECK_THROWS_AS(latent_pgd_attack(m.C, m.G, z, y, pgd_preset(8)), std::invalid_argument);

  const Matrix moved = latent_pgd_attack(m.C, m.G, z, y, gpgd_preset(0.1));
  CHECK(moved.rows() == 6);
  CHECK(moved != natural);

  AttackSpec s0 = latent_search_preset();
  s0.steps = 0;
  const auto r = latent_search_from(m.C, m.G, m.D, z, y, s0);
  CHECK(r.x_tilde == natural);
  CHECK(r.z == z);
  const auto pred = argmax_rows(classify(m.C, r.x_tilde));
  const auto truth = argmax_rows(y);
  for (std::size_t i = 0; i < pred.size(); ++i) CHECK(r.success[i] == (pred[i] != truth[i]));

  AttackSpec s = latent_search_preset();
  s.steps = 10;
  const auto searched = latent_search_from(m.C, m.G, m.D, z, y, s);
  const auto p2 = argmax_rows(classify(m.C, searched.x_tilde));
  for (std::size_t i = 0; i < p2.size(); ++i) CHECK(searched.success[i] == (p2[i] != truth[i]));
  Rng a(4), b(4);
  CHECK(latent_search_attack(m.C, m.G, m.D, y, s, a).x_tilde == latent_search_attack(m.C, m.G, m.D, y, s, b).x_tilde);
}

TEST_CASE("robust accuracy") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 7);
  const Examples test = balanced(20, 3, 8);
  const double nat = natural_accuracy(m.C, test);
  CHECK(nat >= 0.0);
  CHECK(nat <= 1.0);
  CHECK(evaluate_robust_accuracy(m.C, pgd_preset(0), test) == nat);
  CHECK(evaluate_robust_accuracy(m.C, pgd_preset(8), test) <= nat);

  auto& head = m.C.layers.linear[m.C.head];
  head.weight.value.setZero();
  head.bias.value << 2, 0, 0;
  CHECK(natural_accuracy(m.C, test) == doctest::Approx(1.0 / 3));
  Rng rng(1);
  for (const auto& a : {pgd_preset(8), gpgd_preset(0.1)}) {
    CHECK(evaluate_robust_accuracy(m, a, test, rng) == doctest::Approx(1.0 / 3));
  }
  AttackSpec quick = latent_search_preset();
  quick.steps = 5;
  CHECK(evaluate_robust_accuracy(m, quick, test, rng) == doctest::Approx(1.0 / 3));
}

TEST_CASE("a classifier with margin beyond the budget loses nothing") {
  NetSpec spec = small_spec();
  spec.classifier_depth = 0;
  ModelBundle m = build_models(spec, DataShape::vector(2), 2, 9);
  auto& head = m.C.layers.linear[m.C.head];
  head.weight.value << -10, 10, 0, 0;
  head.bias.value << 5, -5;
  // Logit difference 20 (x0 - 0.5) moves by at most 20 eps.
  Examples e;
  e.x = Matrix(4, 2);
  e.x << 0.1, 0.3, 0.2, 0.9, 0.8, 0.5, 0.95, 0.1;
  e.labels = {0, 0, 1, 1};
  CHECK(natural_accuracy(m.C, e) == 1.0);
  CHECK(evaluate_robust_accuracy(m.C, pgd_preset(8), e) == 1.0);
  AttackSpec big = pgd_preset(8);
  big.epsilon = 0.45;
  big.step_size = 0.05;
  CHECK(evaluate_robust_accuracy(m.C, big, e) < 1.0);
}
