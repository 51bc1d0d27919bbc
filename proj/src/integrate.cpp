#include "integrate.hpp"

#include <algorithm>
#include <cmath>

namespace misode {

bool Trajectory::valid() const {
  if (times.size() < 2 || states.size() != times.size()) return false;
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) return false;
  const std::size_t d = states[0].size();
  for (const auto& row : states) {
    if (row.size() != d) return false;
    for (double v : row)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string describe(DivergenceReason r) {
  switch (r) {
    case DivergenceReason::None:
      return "none";
    case DivergenceReason::NonFiniteRhs:
      return "non-finite rhs";
    case DivergenceReason::Blowup:
      return "state blow-up";
    case DivergenceReason::StepLimit:
      return "step limit";
    case DivergenceReason::StepUnderflow:
      return "step underflow";
  }
  return "unknown";
}

std::vector<double> uniform_grid(double t0, double t1, int n) {
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = t0 + (t1 - t0) * static_cast<double>(i) / (n - 1);
  return g;
}

namespace {

// Dormand-Prince 5(4) tableau (FSAL, 7 stages).
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
// Error coefficients: 5th-order weights minus the embedded 4th-order weights.
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
// Dense-output coefficients (Hairer, Norsett, Wanner).
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

using Vec = std::vector<double>;

bool finite(const Vec& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double max_abs(const Vec& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

SolveResult solve(const OdeSystem& system, std::span<const double> x0,
                  std::span<const double> grid, const SolverConfig& cfg) {
  SolveResult res;
  const int n = system.dim;
  if (static_cast<int>(x0.size()) != n) throw std::invalid_argument("solve: |x0| != dimension");
  if (grid.size() < 2) throw std::invalid_argument("solve: grid needs at least two points");

  auto rhs = [&](const Vec& y, Vec& dy) {
    dy = system.eval(y);
    return finite(dy);
  };

  const double t_end = grid.back();
  double t = grid.front();
  Vec y(x0.begin(), x0.end());
  res.trajectory.times.assign(grid.begin(), grid.end());
  res.trajectory.states.assign(grid.size(), Vec(n, 0.0));
  res.trajectory.states[0] = y;
  std::size_t next_grid = 1;

  Vec k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), yerr(n);

  auto fail = [&](DivergenceReason r, double t_at) {
    res.ok = false;
    res.reason = r;
    res.t_reached = t_at;
    return res;
  };

  if (!finite(y) || max_abs(y) > cfg.blowup_guard) return fail(DivergenceReason::Blowup, t);
  if (!rhs(y, k1)) return fail(DivergenceReason::NonFiniteRhs, t);

  // Initial step from the scale of y and f(y).
  double h = 0.01 * (t_end - t);
  {
    const double dy0 = max_abs(y) + cfg.atol;
    const double df0 = max_abs(k1) + cfg.atol;
    if (df0 > 1e-10) h = std::min(h, 0.01 * dy0 / df0);
    h = std::max(h, 1e-10 * (t_end - t));
  }

  for (long step = 0; step < cfg.max_steps; ++step) {
    if (t + h > t_end) h = t_end - t;

    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + h * a21 * k1[i];
    if (!rhs(ytmp, k2)) return fail(DivergenceReason::NonFiniteRhs, t);
    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
    if (!rhs(ytmp, k3)) return fail(DivergenceReason::NonFiniteRhs, t);
    for (int i = 0; i < n; ++i) ytmp[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
    if (!rhs(ytmp, k4)) return fail(DivergenceReason::NonFiniteRhs, t);
    for (int i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
    if (!rhs(ytmp, k5)) return fail(DivergenceReason::NonFiniteRhs, t);
    for (int i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
    if (!rhs(ytmp, k6)) return fail(DivergenceReason::NonFiniteRhs, t);
    for (int i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
    if (!rhs(ynew, k7)) return fail(DivergenceReason::NonFiniteRhs, t);

    double err = 0.0;
    for (int i = 0; i < n; ++i) {
      yerr[i] = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      const double sc = cfg.atol + cfg.rtol * std::max(std::abs(y[i]), std::abs(ynew[i]));
      const double r = yerr[i] / sc;
      err += r * r;
    }
    err = std::sqrt(err / n);

    if (!std::isfinite(err)) return fail(DivergenceReason::NonFiniteRhs, t);

    if (err <= 1.0) {  // accept
      if (max_abs(ynew) > cfg.blowup_guard) return fail(DivergenceReason::Blowup, t);

      // Dense output over [t, t+h] for grid points inside the step.
      while (next_grid < grid.size() && grid[next_grid] <= t + h + 1e-12 * (t_end - grid.front())) {
        const double theta = (grid[next_grid] - t) / h;
        for (int i = 0; i < n; ++i) {
          const double ydiff = ynew[i] - y[i];
          const double bspl = h * k1[i] - ydiff;
          const double r1 = y[i];
          const double r2 = ydiff;
          const double r3 = bspl;
          const double r4 = ydiff - h * k7[i] - bspl;
          const double r5 = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] +
                                 d7 * k7[i]);
          res.trajectory.states[next_grid][i] =
              r1 + theta * (r2 + (1.0 - theta) * (r3 + theta * (r4 + (1.0 - theta) * r5)));
        }
        ++next_grid;
      }

      t += h;
      y = ynew;
      k1 = k7;  // FSAL

      if (next_grid >= grid.size() || t >= t_end) {
        res.ok = true;
        res.t_reached = t;
        return res;
      }
    }

    const double factor = std::clamp(0.9 * std::pow(std::max(err, 1e-10), -0.2), 0.2, 5.0);
    h *= factor;
    if (t + h == t) return fail(DivergenceReason::StepUnderflow, t);
  }
  return fail(DivergenceReason::StepLimit, t);
}

bool amplitude_ok(const Trajectory& traj, double limit) {
  for (const auto& row : traj.states)
    for (double v : row)
      if (!(std::abs(v) <= limit)) return false;
  return true;
}

}  // namespace misode
