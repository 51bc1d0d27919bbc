#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "common.hpp"
#include "expr.hpp"
#include "integrate.hpp"

namespace misode {

struct PolyGenConfig {
  int order_max = 3;  // global cap; per-system order drawn uniformly from 1..order_max
  int terms_max = 5;
  double terms_mean = 2.0;
  double terms_std = 2.0;
  double coeff_mu = 0.0;  // log-normal magnitude parameters
  double coeff_sigma = 1.0;
  int round_decimals = 5;
};

struct TreeGenConfig {
  int binary_max = 5;
  int unary_max = 3;
  double const_min = 0.05;
  double const_max = 20.0;
  int depth_max = 6;
  // sin, square, inverse, identity
  double p_unary[4] = {1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 2};
  double p_add = 0.75;  // vs. multiplication
  double p_leaf_var = 0.8;
};

// One generated system bundled with its observed instances. States are kept
// noiseless; sigma records the noise level to apply to model inputs.
struct SystemRecord {
  long id = 0;
  int dim = 0;
  std::string generator;  // "poly" | "tree"
  std::uint64_t seed = 0;
  double sigma = 0.0;
  OdeSystem system;
  std::vector<Trajectory> instances;
};

// All exponent vectors o in N^D with |o| <= order_max, each exactly once, in
// ascending lexicographic order. Count is C(D + order_max, D).
std::vector<std::vector<int>> enumerate_monomials(int dim, int order_max);

// coeff * x0^o0 * ... as an expression tree (left-folded products).
Expr monomial_expr(double coeff, const std::vector<int>& exponents);

OdeSystem sample_polynomial_system(int dim, Rng& rng, const PolyGenConfig& cfg);
OdeSystem sample_tree_system(int dim, Rng& rng, const TreeGenConfig& cfg);

// n x D i.i.d. standard normal draws.
std::vector<std::vector<double>> sample_initial_values(int dim, int n, Rng& rng);

// Multiplicative noise: every state entry x becomes x * eps with
// eps ~ N(1, sigma^2), independent per entry. The time grid is unchanged.
Trajectory apply_noise(const Trajectory& traj, double sigma, Rng& rng);

// Deterministic noisy view of one stored instance, keyed by the record seed,
// the instance index and the noise level.
Trajectory noisy_instance(const SystemRecord& record, int instance, double sigma);
std::vector<Trajectory> noisy_instances(const SystemRecord& record, double sigma);

// First n instances in original order; the system is untouched.
SystemRecord select_first_n_instances(const SystemRecord& record, int n);

enum class GeneratorKind { Poly, Tree };

struct CorpusConfig {
  long count = 0;
  GeneratorKind generator = GeneratorKind::Poly;
  int dim_min = 1, dim_max = 4;            // drawn uniformly per system
  int instances_min = 4, instances_max = 4;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double t0 = 1.0, t1 = 10.0;
  int grid_points = 100;
  double amplitude_limit = 100.0;
  int coeff_retries = 50;  // fresh constants per structure before resampling it
  int workers = 1;
  PolyGenConfig poly;
  TreeGenConfig tree;
  SolverConfig solver;
};

struct GenStats {
  long accepted = 0;
  long attempts = 0;
  long rejected_divergent = 0;
  long rejected_amplitude = 0;
  long structure_resamples = 0;
};

struct Corpus {
  std::vector<SystemRecord> records;
  GenStats stats;
};

// Generates `count` records passing the amplitude filter. Fully deterministic
// in (seed, config): every record derives its own stream from (seed, id), so
// the result is identical for any worker count. Aborts with a diagnostic when
// the rejection rate exceeds 99% over a trailing window.
Corpus build_corpus(const CorpusConfig& cfg);

}  // namespace misode
