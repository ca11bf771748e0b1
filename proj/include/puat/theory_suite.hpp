#pragma once

#include "puat/theory.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace puat::theory {

struct SuiteRow {
  std::string name;
  int instances = 0;
  int violations = 0;
  double worst_slack = 0.0;  // smallest margin observed; negative means violated
  double seconds = 0.0;
  bool pass = false;
};

struct SuiteOptions {
  std::uint64_t seed = 7;
  int equivalence_instances = 250;
  int critic_instances = 100;
  int inequality_instances = 1000;
  int monte_carlo_instances = 100;
  double delta = 0.1;
  int labeled_samples = 200;
  int unlabeled_samples = 800;
};

/// Random strictly positive joint table (flat Dirichlet).
Table<double> random_joint(std::mt19937_64& rng, int nx, int ny);
/// Random row-stochastic conditional table with strictly positive rows.
Table<double> random_conditional(std::mt19937_64& rng, int nx, int ny);
/// Points on a rows x cols lattice; x-hat is a neighbor of x when their L1
/// distance is at most eps.
Neighborhoods lattice_neighborhoods(int rows, int cols, int eps);

/// Empirical joint frequencies of m draws from p.
Table<double> sample_joint(std::mt19937_64& rng, const Table<double>& p, int m);

double failure_allowance(double failure_prob, int trials);

SuiteRow check_uae_rae_equivalence(const SuiteOptions& o);
SuiteRow check_equilibrium(const SuiteOptions& o);
SuiteRow check_mismatched_critic(const SuiteOptions& o);
SuiteRow check_pinsker(const SuiteOptions& o);
SuiteRow check_adversary_gap(const SuiteOptions& o);
SuiteRow check_bound_monotonicity(const SuiteOptions& o);
SuiteRow check_nat_bound_validity(const SuiteOptions& o);
SuiteRow check_adv_bound_validity(const SuiteOptions& o);
SuiteRow check_alignment_optimum(const SuiteOptions& o);

std::vector<SuiteRow> run_suite(const SuiteOptions& o = {});
std::string format_suite(const std::vector<SuiteRow>& rows);

}  // namespace puat::theory
