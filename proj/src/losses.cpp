#include "puat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace puat {
namespace {

void require_rows(const Var& v, const char* what) {
  if (v.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty batch");
}

Var ce(const Var& logits, const Matrix& y) { return ad::cross_entropy(ad::log_softmax_rows(logits), y); }

Var fake_term(const Var& score, GanMode mode, GanSide side) {
  if (mode == GanMode::Hinge && side == GanSide::Discriminator) return -ad::mean(ad::relu(ad::add_scalar(score, 1.0)));
  return -ad::mean(score);
}

}  // namespace

std::string gan_mode_name(GanMode m) { return m == GanMode::Linear ? "linear" : "hinge"; }

GanMode parse_gan_mode(const std::string& s) {
  if (s == "linear") return GanMode::Linear;
  if (s == "hinge") return GanMode::Hinge;
  throw std::invalid_argument("unknown gan mode '" + s + "'");
}

void validate(const WeightConfig& w) {
  const auto check = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("weight ") + name + " must be >= 0");
  };
  check(w.lambda, "lambda");
  check(w.gamma, "gamma");
  check(w.beta, "beta");
  check(w.alpha, "alpha");
}

bool LossTerms::finite() const {
  const auto ok = [](Scalar v) { return std::isfinite(v); };
  return ok(L_D) && ok(L_G) && ok(L_Cgan) && ok(L_gan_total) && ok(L_nat) && (!L_adv || ok(*L_adv)) &&
         (!L_r || ok(*L_r)) && ok(total);
}

Scalar loss_gan_total(const GanTerm& d, const GanTerm& g, const GanTerm& c) {
  if (d.mode != g.mode || d.mode != c.mode) throw std::invalid_argument("loss_gan_total: terms computed in different modes");
  return d.value + 0.5 * g.value + 0.5 * c.value;
}

Scalar total_objective(const LossTerms& t, const WeightConfig& w) {
  Scalar total = t.L_nat;
  if (w.lambda != 0.0) {
    if (!t.L_adv) throw std::invalid_argument("total_objective: L_adv missing");
    total += w.lambda * *t.L_adv;
  }
  if (w.gamma != 0.0) total += w.gamma * t.L_gan_total;
  if (w.beta != 0.0) {
    if (!t.L_r) throw std::invalid_argument("total_objective: L_r missing");
    total += w.beta * *t.L_r;
  }
  return total;
}

Var loss_D(Tape& tape, const Discriminator& d, const Var& x, const Var& y, GanMode mode) {
  require_rows(x, "loss_D");
  Var s = d.score(tape, x, y, NormMode::Train);
  if (mode == GanMode::Hinge) return -ad::mean(ad::relu(ad::add_scalar(-s, 1.0)));
  return ad::mean(s);
}

Var loss_G(Tape& tape, const Discriminator& d, const Var& x_g, const Var& y, GanMode mode, GanSide side) {
  require_rows(x_g, "loss_G");
  if (x_g.rows() != y.rows()) throw std::invalid_argument("loss_G: one label per generated example required");
  return fake_term(d.score(tape, x_g, y, NormMode::Train), mode, side);
}

Var loss_C_gan(Tape& tape, const Discriminator& d, const Var& x_c, const Var& soft_labels, GanMode mode, GanSide side) {
  require_rows(x_c, "loss_C_gan");
  return fake_term(d.score(tape, x_c, soft_labels, NormMode::Train), mode, side);
}

Var loss_nat(Tape& tape, const Classifier& c, const Classifier& teacher, const Var& x_l, const Matrix& y_l,
             const Var& x_u, double alpha, NormMode mode) {
  require_rows(x_l, "loss_nat");
  Var loss = ce(c.logits(tape, x_l, mode), y_l);
  if (alpha == 0.0) return loss;
  require_rows(x_u, "loss_nat consistency");
  Var p = ad::softmax_rows(c.logits(tape, x_u, mode));
  Var q = ad::softmax_rows(teacher.logits(tape, x_u, mode));
  Var gap = ad::scale(ad::sum(ad::square(p - ad::detach(q))), 1.0 / static_cast<Scalar>(x_u.rows()));
  return loss + alpha * gap;
}

Var loss_adv(Tape& tape, const Classifier& c, const Var& x_tilde, const Matrix& y, NormMode mode) {
  require_rows(x_tilde, "loss_adv");
  return ce(c.logits(tape, x_tilde, mode), y);
}

Var loss_rae(Tape& tape, const Classifier& c, const Matrix& x, const Matrix& y, const AttackSpec& spec, NormMode mode) {
  if (x.rows() == 0) throw std::invalid_argument("loss_rae: empty batch");
  const Matrix adv = pgd_attack(c, x, y, spec, mode == NormMode::Train ? NormMode::TrainFrozenStats : mode);
  return ce(c.logits(tape, tape.constant(adv), mode), y);
}

Scalar loss_D(const Discriminator& d, const Matrix& x, const Matrix& y, GanMode mode) {
  Tape t;
  return loss_D(t, d, t.constant(x), t.constant(y), mode).scalar();
}

Scalar loss_G(const Discriminator& d, const Generator& g, const Matrix& labels, const Matrix& noises, GanMode mode) {
  if (labels.rows() != noises.rows()) throw std::invalid_argument("loss_G: one noise per label required");
  Tape t;
  Var y = t.constant(labels);
  Var x = g.forward(t, t.constant(noises), y, NormMode::TrainFrozenStats);
  return loss_G(t, d, x, y, mode, GanSide::Generator).scalar();
}

Scalar loss_C_gan(const Discriminator& d, const Classifier& c, const Matrix& x_u, GanMode mode) {
  Tape t;
  Var x = t.constant(x_u);
  return loss_C_gan(t, d, x, ad::softmax_rows(c.logits(t, x, NormMode::Eval)), mode, GanSide::Generator).scalar();
}

Scalar loss_nat(const Classifier& c, const Classifier& teacher, const Matrix& x_l, const Matrix& y_l,
                const Matrix& x_u, double alpha) {
  Tape t;
  return loss_nat(t, c, teacher, t.constant(x_l), y_l, t.constant(x_u), alpha, NormMode::Eval).scalar();
}

Scalar loss_adv(const Classifier& c, const UAEBatch& batch) {
  Tape t;
  return loss_adv(t, c, t.constant(batch.x_tilde), batch.labels, NormMode::Eval).scalar();
}

Scalar loss_rae(const Classifier& c, const Matrix& x, const Matrix& y, const AttackSpec& spec) {
  Tape t;
  return loss_rae(t, c, x, y, spec, NormMode::Eval).scalar();
}

}  // namespace puat
