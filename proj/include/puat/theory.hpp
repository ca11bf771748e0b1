#pragma once

// Exact oracles on finite discrete instances. A joint distribution is a dense
// table indexed by (x, y); tables compared with each other must share shape.

#include <Eigen/Core>
#include <Eigen/Cholesky>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

namespace puat::theory {

template <class S>
using Table = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// For each x index, the x-hat indices within the perturbation budget.
using Neighborhoods = std::vector<std::vector<int>>;

class TheoryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr int kMaxBruteforceSupport = 8;
inline constexpr int kMaxBruteforceNeighborhood = 4;
inline constexpr int kMaxVertexCells = 20;

template <class A, class B>
void require_same_support(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw TheoryError("support mismatch");
}

/// Throws unless p is nonnegative and sums to one within tol.
template <class A>
void validate_joint(const Eigen::MatrixBase<A>& p, typename A::Scalar tol = 1e-12) {
  if (p.size() == 0) throw TheoryError("empty distribution");
  if ((p.array() < 0).any()) throw TheoryError("negative probability");
  if (std::abs(p.sum() - 1) > tol) throw TheoryError("probabilities do not sum to one");
}

template <class A, class B>
typename A::Scalar tv(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
  require_same_support(p, q);
  return (p - q).cwiseAbs().sum() / 2;
}

template <class A, class B>
typename A::Scalar kl(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& q) {
  require_same_support(p, q);
  using S = typename A::Scalar;
  S acc = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      const S a = p(i, j);
      if (a <= 0) continue;
      if (q(i, j) <= 0) throw TheoryError("kl: q vanishes where p does not");
      acc += a * std::log(a / q(i, j));
    }
  return acc;
}

/// sign(P - P_GC) pointwise.
template <class A, class B>
Table<typename A::Scalar> optimal_discriminator(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& pgc) {
  require_same_support(p, pgc);
  using S = typename A::Scalar;
  return (p - pgc).unaryExpr([](S v) { return static_cast<S>((v > 0) - (v < 0)); });
}

/// Linear critic objective L_D + L_G / 2 + L_C / 2 for a tabular critic d.
/// With soft labels the critic is linear in the label, so the C-D term is
/// the expectation of d under P_C.
template <class Dd, class A, class B, class C>
typename A::Scalar linear_gan_value(const Eigen::MatrixBase<Dd>& d, const Eigen::MatrixBase<A>& p,
                                    const Eigen::MatrixBase<B>& pg, const Eigen::MatrixBase<C>& pc) {
  require_same_support(d, p);
  require_same_support(p, pg);
  require_same_support(p, pc);
  const auto l_d = (d.array() * p.array()).sum();
  const auto l_g = -(d.array() * pg.array()).sum();
  const auto l_c = -(d.array() * pc.array()).sum();
  return l_d + l_g / 2 + l_c / 2;
}

/// Maximum of the linear objective over critics with values in [-1, 1],
/// found by enumerating every vertex of the cube.
template <class A, class B, class C>
typename A::Scalar max_linear_gan_bruteforce(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& pg,
                                             const Eigen::MatrixBase<C>& pc) {
  using S = typename A::Scalar;
  require_same_support(p, pg);
  require_same_support(p, pc);
  const auto cells = p.size();
  if (cells > kMaxVertexCells) throw TheoryError("instance too large for vertex enumeration");
  Table<S> d(p.rows(), p.cols());
  S best = -std::numeric_limits<S>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << cells); ++mask) {
    for (Eigen::Index k = 0; k < cells; ++k) d(k % p.rows(), k / p.rows()) = (mask >> k) & 1 ? S(1) : S(-1);
    best = std::max(best, linear_gan_value(d, p, pg, pc));
  }
  return best;
}

template <class A, class B, class C>
typename A::Scalar equilibrium_residual(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& pg,
                                        const Eigen::MatrixBase<C>& pc) {
  require_same_support(p, pg);
  require_same_support(p, pc);
  return tv(p, (pg + pc) / 2);
}

template <class L>
void validate_neighborhoods(const Eigen::MatrixBase<L>& loss, const Neighborhoods& nbhd) {
  if (static_cast<Eigen::Index>(nbhd.size()) != loss.rows()) throw TheoryError("one neighborhood per x required");
  for (std::size_t x = 0; x < nbhd.size(); ++x) {
    if (nbhd[x].empty()) throw TheoryError("empty neighborhood");
    for (int v : nbhd[x])
      if (v < 0 || v >= loss.rows()) throw TheoryError("neighborhood index out of range");
  }
}

/// M(x, y) = max over x-hat in nbhd(x) of l(x-hat, y).
template <class L>
Table<typename L::Scalar> neighborhood_max(const Eigen::MatrixBase<L>& loss, const Neighborhoods& nbhd) {
  validate_neighborhoods(loss, nbhd);
  using S = typename L::Scalar;
  Table<S> m(loss.rows(), loss.cols());
  for (Eigen::Index x = 0; x < loss.rows(); ++x)
    for (Eigen::Index y = 0; y < loss.cols(); ++y) {
      S best = -std::numeric_limits<S>::infinity();
      for (int v : nbhd[static_cast<std::size_t>(x)]) best = std::max(best, loss(v, y));
      m(x, y) = best;
    }
  return m;
}

/// E_P max_{x-hat in nbhd(x)} l(x-hat, y).
template <class A, class L>
typename A::Scalar rae_adversary(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<L>& loss,
                                 const Neighborhoods& nbhd) {
  require_same_support(p, loss);
  return (p.array() * neighborhood_max(loss, nbhd).array()).sum();
}

/// Max over every budget-respecting mapping T of E_P l(T(x, y), y), by
/// enumerating all assignments of an x-hat to each support point.
template <class A, class L>
typename A::Scalar uae_adversary_bruteforce(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<L>& loss,
                                            const Neighborhoods& nbhd) {
  using S = typename A::Scalar;
  require_same_support(p, loss);
  validate_neighborhoods(loss, nbhd);
  struct Point {
    Eigen::Index x, y;
    S prob;
  };
  std::vector<Point> support;
  for (Eigen::Index x = 0; x < p.rows(); ++x)
    for (Eigen::Index y = 0; y < p.cols(); ++y)
      if (p(x, y) > 0) support.push_back({x, y, p(x, y)});
  if (static_cast<int>(support.size()) > kMaxBruteforceSupport) throw TheoryError("instance too large: support");
  for (const auto& s : support)
    if (static_cast<int>(nbhd[static_cast<std::size_t>(s.x)].size()) > kMaxBruteforceNeighborhood)
      throw TheoryError("instance too large: neighborhood");

  std::vector<std::size_t> choice(support.size(), 0);
  S best = -std::numeric_limits<S>::infinity();
  while (true) {
    S value = 0;
    for (std::size_t i = 0; i < support.size(); ++i) {
      const auto& s = support[i];
      value += s.prob * loss(nbhd[static_cast<std::size_t>(s.x)][choice[i]], s.y);
    }
    best = std::max(best, value);
    std::size_t k = 0;
    while (k < support.size()) {
      if (++choice[k] < nbhd[static_cast<std::size_t>(support[k].x)].size()) break;
      choice[k++] = 0;
    }
    if (k == support.size()) break;
  }
  return support.empty() ? S(0) : best;
}

template <class S>
struct GapResult {
  S gap;    // |E_{P_G} M - E_P M|
  S bound;  // 2 * B1 * TV(P, P_G)
  S b1;
};

template <class A, class B, class L>
GapResult<typename A::Scalar> adversary_gap(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& pg,
                                            const Eigen::MatrixBase<L>& loss, const Neighborhoods& nbhd) {
  using S = typename A::Scalar;
  require_same_support(p, pg);
  require_same_support(p, loss);
  const Table<S> m = neighborhood_max(loss, nbhd);
  S b1 = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (p(i, j) != pg(i, j)) b1 = std::max(b1, m(i, j));
  const S gap = std::abs(((pg - p).array() * m.array()).sum());
  return {gap, 2 * b1 * tv(p, pg), b1};
}

template <class S>
struct BoundInputs {
  S m = 1;
  S n = 1;
  S delta = S(0.1);
  S b = 1;
  S b1 = 0;
  S gan_sup = 0;
  S Lhat_nat = 0;
  S Lhat_adv_max = 0;
  S R1 = 0;
  S R2 = 0;
};

/// A bound value; a negative radicand is reported through `valid`, never clamped.
template <class S>
struct BoundValue {
  S value;
  S radicand;
  bool valid;
};

template <class S>
void validate(const BoundInputs<S>& in) {
  if (!(in.m >= 1) || !(in.n >= 1)) throw TheoryError("bound inputs need m, n >= 1");
  if (!(in.delta > 0 && in.delta < 1)) throw TheoryError("bound inputs need 0 < delta < 1");
}

template <class S>
BoundValue<S> make_root(S radicand, S scale, S offset) {
  if (radicand < 0) return {std::numeric_limits<S>::quiet_NaN(), radicand, false};
  return {scale * std::sqrt(radicand) + offset, radicand, true};
}

template <class S>
BoundValue<S> bound_B(const BoundInputs<S>& in) {
  validate(in);
  const S l = std::log(1 / in.delta);
  const S r = in.b / 2 + in.gan_sup / 4 + std::sqrt(l / (8 * in.m)) + std::sqrt(l / (32 * in.n));
  return make_root<S>(r, 1, 0);
}

template <class S>
BoundValue<S> nat_generalization_bound(const BoundInputs<S>& in) {
  validate(in);
  const S r = in.Lhat_nat + in.b1 * std::sqrt(std::log(1 / in.delta) / (2 * in.m)) - in.R1;
  return make_root<S>(r, 1 / std::sqrt(S(2)), 0);
}

template <class S>
BoundValue<S> adv_generalization_bound(const BoundInputs<S>& in, S B) {
  validate(in);
  return make_root<S>(in.Lhat_adv_max - in.R2, 1 / (2 * std::sqrt(S(2))), B);
}

/// Row marginal P(x) of a joint table.
template <class A>
Eigen::Matrix<typename A::Scalar, Eigen::Dynamic, 1> x_marginal(const Eigen::MatrixBase<A>& p) {
  return p.rowwise().sum();
}

/// Joint P(x) C(y|x) from a marginal and a row-stochastic conditional table.
template <class V, class C>
Table<typename C::Scalar> compose_joint(const Eigen::MatrixBase<V>& px, const Eigen::MatrixBase<C>& cond) {
  using S = typename C::Scalar;
  if (px.size() != cond.rows()) throw TheoryError("marginal and conditional disagree on |X|");
  const Eigen::Matrix<S, Eigen::Dynamic, 1> v = px.derived().reshaped();
  return cond.array().colwise() * v.array();
}

/// max |log(P / P_GC)| + 1 over cells where either is positive.
template <class A, class B>
typename A::Scalar sup_log_ratio(const Eigen::MatrixBase<A>& p, const Eigen::MatrixBase<B>& pgc) {
  using S = typename A::Scalar;
  require_same_support(p, pgc);
  S best = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) <= 0 && pgc(i, j) <= 0) continue;
      if (p(i, j) <= 0 || pgc(i, j) <= 0) return std::numeric_limits<S>::infinity();
      best = std::max(best, std::abs(std::log(p(i, j) / pgc(i, j))));
    }
  return best + 1;
}

/// -E_P log P(y|x).
template <class A>
typename A::Scalar bayes_error_nat(const Eigen::MatrixBase<A>& p) {
  using S = typename A::Scalar;
  const auto px = x_marginal(p);
  S acc = 0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (p(i, j) > 0) acc -= p(i, j) * std::log(p(i, j) / px(i));
  return acc;
}

/// -E_{P_G} log(P_G(x, y) / P(x)).
template <class A, class B>
typename A::Scalar bayes_error_adv(const Eigen::MatrixBase<A>& pg, const Eigen::MatrixBase<B>& p) {
  using S = typename A::Scalar;
  require_same_support(pg, p);
  const auto px = x_marginal(p);
  S acc = 0;
  for (Eigen::Index i = 0; i < pg.rows(); ++i)
    for (Eigen::Index j = 0; j < pg.cols(); ++j) {
      if (pg(i, j) <= 0) continue;
      if (px(i) <= 0) throw TheoryError("bayes_error_adv: P(x) vanishes where P_G does not");
      acc -= pg(i, j) * std::log(pg(i, j) / px(i));
    }
  return acc;
}

/// Tabular softmax classifier minimizing E_target[-log C(y|x)], fitted by
/// Newton's method on the logits of each row (last logit pinned to zero).
/// Rows of `target` with zero mass are left uniform.
template <class A>
Table<typename A::Scalar> fit_tabular_classifier(const Eigen::MatrixBase<A>& target, int max_iter = 100,
                                                 typename A::Scalar tol = 1e-14) {
  using S = typename A::Scalar;
  using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index K = target.cols();
  Table<S> cond(target.rows(), K);
  for (Eigen::Index x = 0; x < target.rows(); ++x) {
    const S mass = target.row(x).sum();
    Vec q = target.row(x).transpose();
    if (mass > 0) q /= mass;
    Vec theta = Vec::Zero(K);
    Vec p = Vec::Constant(K, S(1) / K);
    for (int it = 0; it < max_iter && mass > 0; ++it) {
      const Vec e = (theta.array() - theta.maxCoeff()).exp();
      p = e / e.sum();
      const Vec g = (p - q).head(K - 1);
      if (g.cwiseAbs().maxCoeff() < tol) break;
      const Mat h = (Mat(p.head(K - 1).asDiagonal()) - p.head(K - 1) * p.head(K - 1).transpose());
      theta.head(K - 1) -= h.ldlt().solve(g);
    }
    cond.row(x) = p.transpose();
  }
  return cond;
}

}  // namespace puat::theory
