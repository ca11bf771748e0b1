#include "doctest.h"
#include "gradcheck.hpp"

#include "puat/losses.hpp"

#include <cmath>

using namespace puat;
using puat::testing::random_matrix;

namespace {

NetSpec small_spec(int depth = 1) {
  NetSpec s;
  s.classifier_depth = depth;
  s.classifier_width = 6;
  s.generator_channels = 6;
  s.discriminator_channels = 6;
  s.attacker_hidden = 6;
  s.noise_dim = 3;
  s.label_embed_dim = 2;
  return s;
}

void make_constant(Discriminator& d, double c) {
  auto& head = d.layers.linear[d.head];
  head.weight.value.setZero();
  head.bias.value.setConstant(c);
}

// Linear softmax classifier logits = x W + b on 2-D inputs.
Classifier linear_classifier(const Matrix& w, const Matrix& b) {
  ModelBundle m = build_models(small_spec(0), DataShape::vector(2), static_cast<int>(w.cols()), 1);
  m.C.layers.linear[m.C.head].weight.value = w;
  m.C.layers.linear[m.C.head].bias.value = b;
  return m.C;
}

double mean_ce(const Matrix& logits, const Matrix& y) {
  double total = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    for (Eigen::Index k = 0; k < y.cols(); ++k) total -= y(i, k) * (logits(i, k) - lse);
  }
  return total / static_cast<double>(logits.rows());
}

Matrix linear_logits(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix z = x * w;
  z.rowwise() += b.row(0);
  return z;
}

}  // namespace

TEST_CASE("critic terms on constant critics") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 2);
  const Matrix x = random_matrix(4, 2, 1, 0, 1);
  const Matrix y = one_hot({0, 1, 2, 0}, 3);
  const Matrix z = random_matrix(4, 3, 2);
  make_constant(m.D, 0.0);
  CHECK(loss_D(m.D, x, y, GanMode::Linear) == 0.0);
  CHECK(loss_G(m.D, m.G, y, z, GanMode::Linear) == 0.0);
  CHECK(loss_C_gan(m.D, m.C, x, GanMode::Linear) == 0.0);
  make_constant(m.D, 1.0);
  CHECK(loss_D(m.D, x, y, GanMode::Linear) == doctest::Approx(1.0));
  CHECK(loss_D(m.D, x.topRows(1), y.topRows(1), GanMode::Linear) == doctest::Approx(1.0));
  CHECK(loss_C_gan(m.D, m.C, x, GanMode::Linear) == doctest::Approx(-1.0));
  make_constant(m.D, 0.35);
  CHECK(loss_G(m.D, m.G, y, z, GanMode::Linear) == doctest::Approx(-0.35));
}

TEST_CASE("critic terms average the per-sample scores") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 3);
  const Matrix x = random_matrix(2, 2, 4, 0, 1);
  const Matrix y = one_hot({0, 2}, 3);
  Tape t;
  const Matrix s = m.D.score(t, t.constant(x), t.constant(y), NormMode::Eval).value();
  const double d0 = s(0, 0), d1 = s(1, 0);
  CHECK(loss_D(m.D, x, y, GanMode::Linear) == doctest::Approx((d0 + d1) / 2));
  CHECK(loss_D(m.D, x, y, GanMode::Hinge) ==
        doctest::Approx(-(std::max(0.0, 1 - d0) + std::max(0.0, 1 - d1)) / 2));
  Tape u;
  CHECK(loss_G(u, m.D, u.constant(x), u.constant(y), GanMode::Hinge, GanSide::Discriminator).scalar() ==
        doctest::Approx(-(std::max(0.0, 1 + d0) + std::max(0.0, 1 + d1)) / 2));
  Tape v;
  CHECK(loss_G(v, m.D, v.constant(x), v.constant(y), GanMode::Hinge, GanSide::Generator).scalar() ==
        doctest::Approx(-(d0 + d1) / 2));
  Tape w;
  CHECK(loss_C_gan(w, m.D, w.constant(x), w.constant(y), GanMode::Linear, GanSide::Discriminator).scalar() ==
        doctest::Approx(-(d0 + d1) / 2));
}

TEST_CASE("classifier receives gradient through its soft labels") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 5);
  const Matrix x = random_matrix(4, 2, 6, 0, 1);
  const auto f = [&](Tape& t) {
    Var xu = t.constant(x);
    return loss_C_gan(t, m.D, xu, ad::softmax_rows(m.C.logits(t, xu, NormMode::Eval)), GanMode::Linear,
                      GanSide::Generator);
  };
  Tape t;
  t.track(Role::Classifier);
  t.backward(f(t));
  bool nonzero = false;
  for (auto* p : m.C.layers.parameters()) {
    nonzero = nonzero || !t.grad(*p).isZero();
    CHECK(testing::param_grad_error(f, *p, Role::Classifier) < 1e-6);
  }
  CHECK(nonzero);
}

TEST_CASE("generator gradients match finite differences") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 3, 7);
  const Matrix y = one_hot({0, 1, 2}, 3);
  const Matrix z = random_matrix(3, 3, 8);
  for (GanMode mode : {GanMode::Linear, GanMode::Hinge})
    for (auto* p : m.G.layers.parameters()) {
      INFO(p->name);
      CHECK(testing::param_grad_error(
                [&](Tape& t) {
                  Var yv = t.constant(y);
                  return loss_G(t, m.D, m.G.forward(t, t.constant(z), yv, NormMode::Train), yv, mode,
                                GanSide::Generator);
                },
                *p, Role::Generator) < 1e-5);
    }
}

TEST_CASE("affine combinations") {
  CHECK(loss_gan_total({0.5, GanMode::Linear}, {0.2, GanMode::Linear}, {0.1, GanMode::Linear}) ==
        doctest::Approx(0.65).epsilon(1e-15));
  CHECK(loss_gan_total({0, GanMode::Hinge}, {0, GanMode::Hinge}, {0, GanMode::Hinge}) == 0.0);
  CHECK_THROWS_AS(loss_gan_total({0.5, GanMode::Linear}, {0.2, GanMode::Hinge}, {0.1, GanMode::Linear}),
                  std::invalid_argument);

  LossTerms t;
  t.L_nat = 0.7;
  t.L_gan_total = 0.4;
  t.L_adv = 1.3;
  t.L_r = 2.1;
  CHECK(total_objective(t, {0, 0, 0, 50}) == 0.7);
  CHECK(total_objective(t, {10, 0.03, 6, 50}) == 0.7 + 10 * 1.3 + 0.03 * 0.4 + 6 * 2.1);
  CHECK(total_objective(t, {10, 0.03, 0, 50}) == 0.7 + 10 * 1.3 + 0.03 * 0.4);
  LossTerms missing = t;
  missing.L_r.reset();
  CHECK_NOTHROW(total_objective(missing, {10, 0.03, 0, 50}));
  CHECK_THROWS_AS(total_objective(missing, {10, 0.03, 6, 50}), std::invalid_argument);
  CHECK_THROWS_AS(validate(WeightConfig{-1, 0, 0, 0}), std::invalid_argument);
  const WeightConfig w;
  CHECK(w.lambda == 10.0);
  CHECK(w.gamma == 0.03);
  CHECK(w.beta == 6.0);
  CHECK(w.alpha == 50.0);
}

TEST_CASE("natural loss") {
  Matrix w = Matrix::Zero(2, 2);
  w << 100, 0, 0, 100;
  const Classifier perfect = linear_classifier(w, Matrix::Zero(1, 2));
  const Matrix x = (Matrix(2, 2) << 1, 0, 0, 1).finished();
  const Matrix y = one_hot({0, 1}, 2);
  const Matrix xu = random_matrix(3, 2, 9, 0, 1);
  CHECK(loss_nat(perfect, perfect, x, y, xu, 0.0) < 1e-40);
  CHECK(loss_nat(perfect, perfect, x, y, xu, 50.0) == loss_nat(perfect, perfect, x, y, xu, 0.0));

  const Classifier uniform = linear_classifier(Matrix::Zero(2, 10), Matrix::Zero(1, 10));
  CHECK(loss_nat(uniform, uniform, x, one_hot({3, 8}, 10), xu, 0.0) == doctest::Approx(std::log(10.0)));

  // Consistency gap between two different classifiers, computed directly.
  const Matrix w2 = random_matrix(2, 2, 10), b2 = random_matrix(1, 2, 11);
  const Classifier other = linear_classifier(w2, b2);
  const Matrix pu = classify(perfect, xu), qu = classify(other, xu);
  const double expected = mean_ce(linear_logits(x, w, Matrix::Zero(1, 2)), y) + 2.0 * (pu - qu).squaredNorm() / 3.0;
  CHECK(loss_nat(perfect, other, x, y, xu, 2.0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adversarial loss") {
  ModelBundle m = build_models(small_spec(), DataShape::vector(2), 4, 12);
  auto& head = m.C.layers.linear[m.C.head];
  head.weight.value.setZero();
  head.bias.value.setZero();
  const Matrix y = one_hot({0, 1, 2, 3}, 4);
  const UAEBatch b = generate_uae(m.G, m.A, random_matrix(4, 3, 13), y);
  CHECK(loss_adv(m.C, b) == doctest::Approx(std::log(4.0)));
  head.bias.value << 80, 0, 0, 0;
  const Matrix y0 = one_hot({0, 0, 0, 0}, 4);
  CHECK(loss_adv(m.C, generate_uae(m.G, m.A, random_matrix(4, 3, 13), y0)) < 1e-30);
}

TEST_CASE("robust loss") {
  const Matrix w = random_matrix(2, 3, 14, -3, 3), b = random_matrix(1, 3, 15);
  const Classifier c = linear_classifier(w, b);
  const Matrix x = random_matrix(5, 2, 16, 0.2, 0.8);
  const Matrix y = one_hot({0, 1, 2, 1, 0}, 3);

  AttackSpec none = pgd_preset(0.0);
  CHECK(loss_rae(c, x, y, none) == doctest::Approx(mean_ce(linear_logits(x, w, b), y)).epsilon(1e-14));

  // One sign step on a linear model: the input gradient of the cross-entropy
  // for row i is W (p_i - y_i).
  AttackSpec one{AttackFamily::PixelPgd, 0.05, 0.03, 1, 100, 100, ""};
  Matrix logits = linear_logits(x, w, b);
  Matrix expected_x = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const RowVector p = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    const RowVector probs = p / p.sum();
    const RowVector g = (w * (probs - y.row(i)).transpose()).transpose();
    for (Eigen::Index j = 0; j < 2; ++j) {
      const double s = (g(j) > 0) - (g(j) < 0);
      expected_x(i, j) = std::clamp(x(i, j) + 0.03 * s, 0.0, 1.0);
    }
  }
  const Matrix adv = pgd_attack(c, x, y, one);
  CHECK((adv - expected_x).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(loss_rae(c, x, y, one) == doctest::Approx(mean_ce(linear_logits(expected_x, w, b), y)).epsilon(1e-13));
  CHECK(loss_rae(c, x, y, one) >= loss_rae(c, x, y, none));

  const Classifier robust = linear_classifier(Matrix::Zero(2, 3), (Matrix(1, 3) << 90, 0, 0).finished());
  CHECK(loss_rae(robust, x, one_hot({0, 0, 0, 0, 0}, 3), pgd_preset(8)) < 1e-30);
}

TEST_CASE("gan mode names") {
  CHECK(parse_gan_mode(gan_mode_name(GanMode::Linear)) == GanMode::Linear);
  CHECK(parse_gan_mode("hinge") == GanMode::Hinge);
  CHECK_THROWS(parse_gan_mode("wasserstein"));
}

TEST_CASE("loss terms report finiteness") {
  LossTerms t;
  CHECK(t.finite());
  t.L_adv = std::nan("");
  CHECK_FALSE(t.finite());
}
