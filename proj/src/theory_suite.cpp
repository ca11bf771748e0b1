#include "puat/theory_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <sstream>

namespace puat::theory {
namespace {

using Clock = std::chrono::steady_clock;

struct Tally {
  SuiteRow row;
  Clock::time_point start = Clock::now();
  bool first = true;

  explicit Tally(std::string name) { row.name = std::move(name); }

  void record(double slack) {
    ++row.instances;
    if (!(slack >= 0)) ++row.violations;
    row.worst_slack = first ? slack : std::min(row.worst_slack, slack);
    first = false;
  }

  SuiteRow finish(int allowed_violations = 0) {
    row.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    row.pass = row.instances > 0 && row.violations <= allowed_violations;
    return row;
  }
};

int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

Table<double> random_loss(std::mt19937_64& rng, int nx, int ny) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  Table<double> l(nx, ny);
  for (Eigen::Index i = 0; i < l.size(); ++i) l.data()[i] = u(rng);
  return l;
}

}  // namespace

Table<double> random_joint(std::mt19937_64& rng, int nx, int ny) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Table<double> p(nx, ny);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = g(rng) + 1e-3;
  return p / p.sum();
}

Table<double> random_conditional(std::mt19937_64& rng, int nx, int ny) {
  Table<double> c = random_joint(rng, nx, ny);
  return c.array().colwise() / c.rowwise().sum().array();
}

Neighborhoods lattice_neighborhoods(int rows, int cols, int eps) {
  Neighborhoods n(static_cast<std::size_t>(rows * cols));
  for (int a = 0; a < rows * cols; ++a)
    for (int b = 0; b < rows * cols; ++b)
      if (std::abs(a / cols - b / cols) + std::abs(a % cols - b % cols) <= eps) n[static_cast<std::size_t>(a)].push_back(b);
  return n;
}

Table<double> sample_joint(std::mt19937_64& rng, const Table<double>& p, int m) {
  std::discrete_distribution<int> pick(p.data(), p.data() + p.size());
  Table<double> f = Table<double>::Zero(p.rows(), p.cols());
  for (int i = 0; i < m; ++i) f.data()[pick(rng)] += 1.0;
  return f / m;
}

double failure_allowance(double failure_prob, int trials) {
  return failure_prob + 3.0 * std::sqrt(failure_prob * (1.0 - failure_prob) / trials);
}

SuiteRow check_uae_rae_equivalence(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed);
  Tally t("uae_equals_rae");
  for (int k = 0; k < o.equivalence_instances; ++k) {
    const int rows = uniform_int(rng, 1, 2);
    const int cols = uniform_int(rng, 2, 4);
    const int ny = uniform_int(rng, 2, 3);
    const int nx = rows * cols;
    const auto nbhd = lattice_neighborhoods(rows, cols, uniform_int(rng, 0, 1));

    std::vector<int> cells(static_cast<std::size_t>(nx * ny));
    for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
    std::shuffle(cells.begin(), cells.end(), rng);
    const int support = uniform_int(rng, 1, std::min<int>(kMaxBruteforceSupport, nx * ny));
    Table<double> p = Table<double>::Zero(nx, ny);
    std::gamma_distribution<double> g(1.0, 1.0);
    for (int i = 0; i < support; ++i) p.data()[cells[static_cast<std::size_t>(i)]] = g(rng) + 1e-3;
    p /= p.sum();

    const Table<double> loss = random_loss(rng, nx, ny);
    const double diff = std::abs(uae_adversary_bruteforce(p, loss, nbhd) - rae_adversary(p, loss, nbhd));
    t.record(1e-12 - diff);
  }
  return t.finish();
}

SuiteRow check_equilibrium(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 1);
  Tally t("critic_zero_at_equilibrium");
  for (int k = 0; k < o.critic_instances; ++k) {
    const Table<double> pg = random_joint(rng, 3, 3);
    const Table<double> pc = random_joint(rng, 3, 3);
    const Table<double> p = (pg + pc) / 2;
    const double best = max_linear_gan_bruteforce(p, pg, pc);
    t.record(1e-9 - std::max(std::abs(best), equilibrium_residual(p, pg, pc)));
  }
  return t.finish();
}

SuiteRow check_mismatched_critic(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 2);
  Tally t("critic_max_equals_2tv");
  for (int k = 0; k < o.critic_instances; ++k) {
    const Table<double> p = random_joint(rng, 3, 3);
    const Table<double> pg = random_joint(rng, 3, 3);
    const Table<double> pc = random_joint(rng, 3, 3);
    const Table<double> pgc = (pg + pc) / 2;
    const double best = max_linear_gan_bruteforce(p, pg, pc);
    const double two_tv = 2 * tv(p, pgc);
    const double at_star = linear_gan_value(optimal_discriminator(p, pgc), p, pg, pc);
    const double err = std::max({std::abs(best - two_tv), std::abs(at_star - two_tv),
                                 std::abs(equilibrium_residual(p, pg, pc) - best / 2)});
    t.record(1e-9 - err);
  }
  return t.finish();
}

SuiteRow check_pinsker(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 3);
  Tally t("pinsker");
  for (int k = 0; k < o.inequality_instances; ++k) {
    const int nx = uniform_int(rng, 1, 5), ny = uniform_int(rng, 2, 4);
    const Table<double> p = random_joint(rng, nx, ny);
    const Table<double> q = random_joint(rng, nx, ny);
    t.record(std::sqrt(kl(p, q) / 2) - tv(p, q));
  }
  return t.finish();
}

SuiteRow check_adversary_gap(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 4);
  Tally t("adversary_gap");
  std::bernoulli_distribution share(0.3);
  for (int k = 0; k < o.inequality_instances; ++k) {
    const int rows = uniform_int(rng, 1, 2), cols = uniform_int(rng, 2, 4), ny = uniform_int(rng, 2, 3);
    const int nx = rows * cols;
    const Table<double> p = random_joint(rng, nx, ny);
    Table<double> pg = random_joint(rng, nx, ny);
    // Pin a few cells to P so that B1 excludes them.
    Table<double> mixed = pg;
    double pinned = 0.0;
    std::vector<bool> keep(static_cast<std::size_t>(p.size()), false);
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (share(rng)) keep[static_cast<std::size_t>(i)] = true, pinned += p.data()[i];
    double rest = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (!keep[static_cast<std::size_t>(i)]) rest += pg.data()[i];
    if (pinned < 1.0 && rest > 0) {
      for (Eigen::Index i = 0; i < p.size(); ++i)
        mixed.data()[i] = keep[static_cast<std::size_t>(i)] ? p.data()[i] : pg.data()[i] * (1.0 - pinned) / rest;
      pg = mixed;
    }
    const auto nbhd = lattice_neighborhoods(rows, cols, uniform_int(rng, 0, 1));
    const auto r = adversary_gap(p, pg, random_loss(rng, nx, ny), nbhd);
    t.record(r.bound + 1e-12 - r.gap);
  }
  return t.finish();
}

SuiteRow check_bound_monotonicity(const SuiteOptions&) {
  Tally t("bounds_decrease_in_m_n");
  const double sizes[] = {10, 100, 1000, 10000};
  for (double b : {1.0, 2.5}) {
    for (double gan : {0.0, 0.7}) {
      for (double m : sizes) {
        for (double n : sizes) {
          BoundInputs<double> in;
          in.m = m, in.n = n, in.delta = 0.1, in.b = b, in.gan_sup = gan;
          in.b1 = 2.0, in.Lhat_nat = 0.9, in.R1 = 0.8, in.Lhat_adv_max = 1.2, in.R2 = 1.0;
          auto more_m = in, more_n = in;
          more_m.m = 2 * m;
          more_n.n = 2 * n;
          const double B = bound_B(in).value;
          const double Bm = bound_B(more_m).value, Bn = bound_B(more_n).value;
          t.record(B - Bm);
          t.record(B - Bn);
          t.record(nat_generalization_bound(in).value - nat_generalization_bound(more_m).value);
          t.record(adv_generalization_bound(in, B).value - adv_generalization_bound(more_m, Bm).value);
          t.record(adv_generalization_bound(in, B).value - adv_generalization_bound(more_n, Bn).value);
        }
      }
    }
  }
  // Strictness: record() accepts zero, so demand a positive margin here.
  SuiteRow row = t.finish();
  row.pass = row.pass && row.worst_slack > 0;
  return row;
}

SuiteRow check_nat_bound_validity(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 5);
  Tally t("nat_bound_monte_carlo");
  for (int k = 0; k < o.monte_carlo_instances; ++k) {
    const Table<double> p = random_joint(rng, 4, 3);
    const Table<double> cond = random_conditional(rng, 4, 3);
    const Table<double> loss = -cond.array().log();
    const Table<double> emp = sample_joint(rng, p, o.labeled_samples);
    BoundInputs<double> in;
    in.m = o.labeled_samples, in.n = o.unlabeled_samples, in.delta = o.delta;
    in.Lhat_nat = (emp.array() * loss.array()).sum();
    in.b1 = loss.maxCoeff();
    in.R1 = bayes_error_nat(p);
    const auto bound = nat_generalization_bound(in);
    const double gap = tv(p, compose_joint(x_marginal(p), cond));
    t.record(bound.valid ? bound.value - gap : -1.0);
  }
  const double allowed = failure_allowance(o.delta, o.monte_carlo_instances) * o.monte_carlo_instances;
  return t.finish(static_cast<int>(std::floor(allowed)));
}

SuiteRow check_adv_bound_validity(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 6);
  Tally t("adv_bound_monte_carlo");
  const auto nbhd = lattice_neighborhoods(1, 4, 1);
  for (int k = 0; k < o.monte_carlo_instances; ++k) {
    const Table<double> p = random_joint(rng, 4, 3);
    const Table<double> pg = random_joint(rng, 4, 3);
    const Table<double> cond = random_conditional(rng, 4, 3);
    const Table<double> pc = compose_joint(x_marginal(p), cond);
    const Table<double> emp_l = sample_joint(rng, p, o.labeled_samples);
    const Table<double> emp_x = sample_joint(rng, x_marginal(p), o.unlabeled_samples);
    const Table<double> emp_c = compose_joint(emp_x, cond);

    BoundInputs<double> in;
    in.m = o.labeled_samples, in.n = o.unlabeled_samples, in.delta = o.delta;
    in.b = sup_log_ratio(p, (pg + pc) / 2);
    in.gan_sup = (emp_l - pg / 2 - emp_c / 2).cwiseAbs().sum();
    in.Lhat_adv_max = rae_adversary(pg, Table<double>(-cond.array().log()), nbhd);
    in.R2 = bayes_error_adv(pg, p);
    const auto B = bound_B(in);
    const auto bound = adv_generalization_bound(in, B.value);
    double slack = -1.0;
    if (B.valid && bound.valid)
      slack = std::min({B.value - tv(p, (pg + pc) / 2), bound.value - tv(p, pc), bound.value - tv(p, pg)});
    t.record(slack);
  }
  const double fail = 1.0 - (1.0 - o.delta) * (1.0 - o.delta);
  const double allowed = failure_allowance(fail, o.monte_carlo_instances) * o.monte_carlo_instances;
  return t.finish(static_cast<int>(std::floor(allowed)));
}

SuiteRow check_alignment_optimum(const SuiteOptions& o) {
  std::mt19937_64 rng(o.seed + 7);
  Tally t("aligned_classifier_optimum");
  for (int k = 0; k < o.critic_instances; ++k) {
    const Table<double> p = random_joint(rng, 4, 3);
    const Table<double> pt = p;
    const auto px = x_marginal(p);
    const Table<double> nat = compose_joint(px, fit_tabular_classifier(p));
    const Table<double> adv = compose_joint(px, fit_tabular_classifier(pt));
    const double err = std::max((nat - p).cwiseAbs().maxCoeff(), (adv - pt).cwiseAbs().maxCoeff());
    t.record(1e-9 - err);
  }
  return t.finish();
}

std::vector<SuiteRow> run_suite(const SuiteOptions& o) {
  return {check_uae_rae_equivalence(o), check_equilibrium(o),        check_mismatched_critic(o),
          check_pinsker(o),             check_adversary_gap(o),      check_bound_monotonicity(o),
          check_nat_bound_validity(o),  check_adv_bound_validity(o), check_alignment_optimum(o)};
}

std::string format_suite(const std::vector<SuiteRow>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %9s %10s %14s %8s  %s\n", "property", "instances", "violations",
                "worst_slack", "seconds", "result");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-28s %9d %10d %14.6g %8.3f  %s\n", r.name.c_str(), r.instances, r.violations,
                  r.worst_slack, r.seconds, r.pass ? "PASS" : "FAIL");
    out << line;
  }
  return out.str();
}

}  // namespace puat::theory
