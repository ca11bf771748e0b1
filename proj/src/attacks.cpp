#include "puat/attacks.hpp"

#include "puat/uae.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace puat {
namespace {

constexpr Eigen::Index kChunk = 256;

Matrix sign(const Matrix& g) {
  return g.unaryExpr([](Scalar v) { return static_cast<Scalar>((v > 0) - (v < 0)); });
}

// Per-row cross-entropy of logits against one-hot rows, n x 1.
Var row_cross_entropy(const Var& logits, const Matrix& y) {
  return -ad::row_sum(ad::hadamard(ad::log_softmax_rows(logits), logits.tape->constant(y)));
}

Matrix latent_gradient(const Classifier& c, const Generator& g, const Matrix& z, const Matrix& y) {
  Tape tape;
  Var zv = tape.variable(z);
  Var x = g.forward(tape, zv, tape.constant(y), NormMode::Eval);
  tape.backward(ad::sum(row_cross_entropy(c.logits(tape, x, NormMode::Eval), y)));
  return tape.grad(zv);
}

template <class F>
Matrix by_chunks(const Matrix& a, const Matrix& b, F&& f) {
  Matrix out(a.rows(), 0);
  for (Eigen::Index s = 0; s < a.rows(); s += kChunk) {
    const Eigen::Index n = std::min(kChunk, a.rows() - s);
    Matrix part = f(Matrix(a.middleRows(s, n)), Matrix(b.middleRows(s, n)));
    if (out.cols() != part.cols()) out.resize(a.rows(), part.cols());
    out.middleRows(s, n) = part;
  }
  return out;
}

double fraction_correct(const Matrix& probs, const std::vector<int>& labels) {
  const auto pred = argmax_rows(probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace

std::string family_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::PixelPgd: return "pgd";
    case AttackFamily::LatentPgd: return "gpgd";
    case AttackFamily::LatentSearch: return "usong";
  }
  return "?";
}

AttackFamily parse_family(const std::string& s) {
  if (s == "pgd" || s == "pixel-pgd") return AttackFamily::PixelPgd;
  if (s == "gpgd" || s == "latent-pgd") return AttackFamily::LatentPgd;
  if (s == "usong" || s == "latent-search") return AttackFamily::LatentSearch;
  throw std::invalid_argument("unknown attack family '" + s + "'");
}

void validate(const AttackSpec& spec) {
  if (!(spec.epsilon >= 0.0) || !std::isfinite(spec.epsilon)) throw std::invalid_argument("attack epsilon must be >= 0");
  if (spec.steps < 0) throw std::invalid_argument("attack steps must be >= 0");
  if (spec.steps > 0 && !(spec.step_size > 0.0)) throw std::invalid_argument("attack step_size must be > 0");
  if (!(spec.lambda1 >= 0.0) || !(spec.lambda2 >= 0.0)) throw std::invalid_argument("attack penalties must be >= 0");
}

std::string attack_label(const AttackSpec& spec) {
  if (!spec.label.empty()) return spec.label;
  char buf[64];
  if (spec.family == AttackFamily::PixelPgd)
    std::snprintf(buf, sizeof buf, "pgd-%g/255", spec.epsilon * 255.0);
  else
    std::snprintf(buf, sizeof buf, "%s-%g", family_name(spec.family).c_str(), spec.epsilon);
  return buf;
}

AttackSpec pgd_preset(double eps_255) { return {AttackFamily::PixelPgd, eps_255 / 255.0, 1.0 / 255.0, 20, 100.0, 100.0, ""}; }
AttackSpec gpgd_preset(double eps) { return {AttackFamily::LatentPgd, eps, 0.1, 20, 100.0, 100.0, ""}; }
AttackSpec latent_search_preset() { return {AttackFamily::LatentSearch, 0.01, 0.1, 200, 100.0, 100.0, ""}; }

Matrix input_gradient(const Classifier& c, const Matrix& x, const Matrix& y, NormMode mode) {
  Tape tape;
  Var xv = tape.variable(x);
  tape.backward(ad::sum(row_cross_entropy(c.logits(tape, xv, mode), y)));
  return tape.grad(xv);
}

Matrix pgd_attack(const Classifier& c, const Matrix& x, const Matrix& y, const AttackSpec& spec, NormMode mode) {
  validate(spec);
  if (spec.family != AttackFamily::PixelPgd) throw std::invalid_argument("pgd_attack needs a pixel-pgd spec");
  if (x.rows() != y.rows()) throw std::invalid_argument("pgd_attack: example and label counts differ");
  if (spec.epsilon == 0.0 || spec.steps == 0) return x;
  const Matrix lo = (x.array() - spec.epsilon).max(0.0).matrix();
  const Matrix hi = (x.array() + spec.epsilon).min(1.0).matrix();
  Matrix adv = x;
  for (int s = 0; s < spec.steps; ++s) {
    adv += spec.step_size * sign(input_gradient(c, adv, y, mode));
    adv = adv.cwiseMax(lo).cwiseMin(hi);
  }
  return adv;
}

Matrix latent_pgd_attack(const Classifier& c, const Generator& g, const Matrix& z, const Matrix& y,
                         const AttackSpec& spec) {
  validate(spec);
  if (spec.family != AttackFamily::LatentPgd) throw std::invalid_argument("latent_pgd_attack needs a latent-pgd spec");
  Matrix zp = z;
  if (spec.epsilon > 0.0) {
    for (int s = 0; s < spec.steps; ++s) {
      zp += spec.step_size * sign(latent_gradient(c, g, zp, y));
      zp = zp.cwiseMax((z.array() - spec.epsilon).matrix()).cwiseMin((z.array() + spec.epsilon).matrix());
    }
  }
  return generate_natural(g, zp, y, NormMode::Eval);
}

LatentSearchResult latent_search_from(const Classifier& c, const Generator& g, const Discriminator& d,
                                      const Matrix& z0, const Matrix& y, const AttackSpec& spec) {
  validate(spec);
  if (spec.family != AttackFamily::LatentSearch) throw std::invalid_argument("latent_search needs a latent-search spec");
  const Eigen::Index n = z0.rows();
  const auto truth = argmax_rows(y);

  // Per-row objective: CE - l1 * drift beyond eps - l2 * softplus(-D).
  const auto evaluate = [&](const Matrix& z, Matrix* grad, Matrix* x_out, std::vector<int>* pred) {
    Tape tape;
    Var zv = tape.variable(z);
    Var yv = tape.constant(y);
    Var x = g.forward(tape, zv, yv, NormMode::Eval);
    Var ce = row_cross_entropy(c.logits(tape, x, NormMode::Eval), y);
    Var drift = ad::row_sum(ad::relu(ad::add_scalar(ad::abs(zv - tape.constant(z0)), -spec.epsilon)));
    Var real = ad::softplus(-d.score(tape, x, yv, NormMode::Eval));
    Var obj = ce - spec.lambda1 * drift - spec.lambda2 * real;
    if (grad) {
      tape.backward(ad::sum(obj));
      *grad = tape.grad(zv);
    }
    if (x_out) *x_out = x.value();
    if (pred) {
      Tape t2;
      *pred = argmax_rows(c.logits(t2, t2.constant(x.value()), NormMode::Eval).value());
    }
    return Matrix(obj.value());
  };

  LatentSearchResult best;
  best.z = z0;
  std::vector<int> pred;
  Matrix grad;
  Matrix obj = evaluate(z0, &grad, &best.x_tilde, &pred);
  Matrix best_obj = obj;
  best.success.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) best.success[i] = pred[i] != truth[i];

  Matrix z = z0;
  for (int s = 0; s < spec.steps; ++s) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar norm = grad.row(i).norm();
      if (norm > 0.0) z.row(i) += spec.step_size * grad.row(i) / norm;
    }
    Matrix x;
    obj = evaluate(z, &grad, &x, &pred);
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool ok = pred[i] != truth[i];
      const bool better = (ok && !best.success[i]) || (ok == best.success[i] && obj(i, 0) > best_obj(i, 0));
      if (better) {
        best.success[i] = ok;
        best_obj(i, 0) = obj(i, 0);
        best.z.row(i) = z.row(i);
        best.x_tilde.row(i) = x.row(i);
      }
    }
  }
  return best;
}

LatentSearchResult latent_search_attack(const Classifier& c, const Generator& g, const Discriminator& d,
                                        const Matrix& y, const AttackSpec& spec, Rng& rng) {
  return latent_search_from(c, g, d, sample_noise(rng, y.rows(), g.noise_dim), y, spec);
}

double natural_accuracy(const Classifier& c, const Examples& test) {
  if (test.size() == 0 || !test.labeled()) throw std::invalid_argument("accuracy needs a nonempty labeled set");
  return fraction_correct(classify(c, test.x), test.labels);
}

double evaluate_robust_accuracy(const Classifier& c, const AttackSpec& spec, const Examples& test) {
  if (spec.family != AttackFamily::PixelPgd) throw std::invalid_argument("latent attacks need the full model bundle");
  if (test.size() == 0 || !test.labeled()) throw std::invalid_argument("robust accuracy needs a nonempty labeled set");
  const Matrix y = one_hot(test.labels, c.num_classes);
  const Matrix adv = by_chunks(test.x, y, [&](const Matrix& x, const Matrix& yy) { return pgd_attack(c, x, yy, spec); });
  return fraction_correct(classify(c, adv), test.labels);
}

double evaluate_robust_accuracy(const ModelBundle& m, const AttackSpec& spec, const Examples& test, Rng& rng) {
  if (spec.family == AttackFamily::PixelPgd) return evaluate_robust_accuracy(m.C, spec, test);
  if (test.size() == 0 || !test.labeled()) throw std::invalid_argument("robust accuracy needs a nonempty labeled set");
  validate(spec);
  const Matrix y = one_hot(test.labels, m.num_classes);
  const Matrix z = sample_noise(rng, y.rows(), m.spec.noise_dim);
  const Matrix adv = by_chunks(z, y, [&](const Matrix& zz, const Matrix& yy) {
    if (spec.family == AttackFamily::LatentPgd) return latent_pgd_attack(m.C, m.G, zz, yy, spec);
    return latent_search_from(m.C, m.G, m.D, zz, yy, spec).x_tilde;
  });
  return fraction_correct(classify(m.C, adv), test.labels);
}

}  // namespace puat
