#pragma once

#include <string>
#include <vector>

#include "expr.hpp"

namespace misode {

// Observed (or simulated) path of one instance: s time points, s x D states.
struct Trajectory {
  std::vector<double> times;
  std::vector<std::vector<double>> states;  // states[k] has D entries

  std::size_t points() const { return times.size(); }
  int dim() const { return states.empty() ? 0 : static_cast<int>(states[0].size()); }
  bool valid() const;
};

struct SolverConfig {
  double rtol = 1e-3;
  double atol = 1e-6;
  long max_steps = 100000;
  double blowup_guard = 1e6;  // early exit well beyond the corpus amplitude filter
};

enum class DivergenceReason { None, NonFiniteRhs, Blowup, StepLimit, StepUnderflow };

struct SolveResult {
  bool ok = false;
  Trajectory trajectory;
  DivergenceReason reason = DivergenceReason::None;
  double t_reached = 0.0;

  bool divergent() const { return !ok; }
};

std::string describe(DivergenceReason r);

// Equidistant grid of n points on [t0, t1], endpoints included.
std::vector<double> uniform_grid(double t0, double t1, int n);

// Adaptive Dormand-Prince 4(5) with 4th-order dense output sampled on the
// grid. Divergence (non-finite RHS, blow-up beyond the guard, step-count
// limit) is a returned value, never an exception.
SolveResult solve(const OdeSystem& system, std::span<const double> x0,
                  std::span<const double> grid, const SolverConfig& cfg = {});

// Corpus amplitude filter: true iff max |state entry| <= 100 (inclusive).
bool amplitude_ok(const Trajectory& traj, double limit = 100.0);

}  // namespace misode
