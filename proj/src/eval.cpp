#include "eval.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace misode {

double r2_score(std::span<const double> y_true, std::span<const double> y_pred) {
  if (y_true.size() != y_pred.size()) throw DataError("r2_score: length mismatch");
  if (y_true.size() < 2) throw DataError("r2_score: need at least two values");
  double mean = 0;
  for (double v : y_true) mean += v;
  mean /= static_cast<double>(y_true.size());
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double r = y_true[i] - y_pred[i];
    const double t = y_true[i] - mean;
    ss_res += r * r;
    ss_tot += t * t;
  }
  if (ss_tot == 0.0) {
    if (ss_res == 0.0) return 1.0;
    return std::numeric_limits<double>::quiet_NaN();
  }
  return 1.0 - ss_res / ss_tot;
}

std::string describe(FailReason r) {
  switch (r) {
    case FailReason::None:
      return "none";
    case FailReason::Divergent:
      return "divergent";
    case FailReason::ParseFailure:
      return "parse_failure";
    case FailReason::LowR2:
      return "low_r2";
    case FailReason::UndefinedR2:
      return "undefined_r2";
    case FailReason::Excluded:
      return "excluded";
  }
  return "unknown";
}

namespace {

std::vector<double> flatten(const Trajectory& t) {
  std::vector<double> out;
  out.reserve(t.points() * static_cast<std::size_t>(t.dim()));
  for (const auto& row : t.states) out.insert(out.end(), row.begin(), row.end());
  return out;
}

std::vector<double> dimension_column(const Trajectory& t, int d) {
  std::vector<double> out;
  out.reserve(t.points());
  for (const auto& row : t.states) out.push_back(row[static_cast<std::size_t>(d)]);
  return out;
}

// per-dimension scores pooled over the paired trajectories seen so far
void record_dimension_r2(const Trajectory& truth, const Trajectory& fitted,
                         std::vector<std::vector<double>>& truth_cols,
                         std::vector<std::vector<double>>& fitted_cols) {
  truth_cols.resize(truth.dim());
  fitted_cols.resize(truth.dim());
  for (int d = 0; d < truth.dim(); ++d) {
    const auto tc = dimension_column(truth, d);
    const auto fc = dimension_column(fitted, d);
    truth_cols[static_cast<std::size_t>(d)].insert(truth_cols[static_cast<std::size_t>(d)].end(),
                                                   tc.begin(), tc.end());
    fitted_cols[static_cast<std::size_t>(d)].insert(fitted_cols[static_cast<std::size_t>(d)].end(),
                                                    fc.begin(), fc.end());
  }
}

std::vector<double> finish_dimension_r2(const std::vector<std::vector<double>>& truth_cols,
                                        const std::vector<std::vector<double>>& fitted_cols) {
  std::vector<double> out;
  for (std::size_t d = 0; d < truth_cols.size(); ++d)
    out.push_back(r2_score(truth_cols[d], fitted_cols[d]));
  return out;
}

}  // namespace

TaskOutcome reconstruction_score(const SystemRecord& record, const OdeSystem& pred,
                                 const EvalConfig& cfg) {
  TaskOutcome out;
  double min_r2 = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> truth_cols, fitted_cols;
  for (const Trajectory& inst : record.instances) {
    const SolveResult r = solve(pred, inst.states.front(), inst.times, cfg.solver);
    if (!r.ok) {
      out.reason = FailReason::Divergent;
      out.pass = false;
      return out;
    }
    const auto truth = flatten(inst);
    const auto fitted = flatten(r.trajectory);
    const double r2 = r2_score(truth, fitted);
    out.per_instance_r2.push_back(r2);
    record_dimension_r2(inst, r.trajectory, truth_cols, fitted_cols);
    if (std::isnan(r2)) {
      out.reason = FailReason::UndefinedR2;
      out.pass = false;
      return out;
    }
    min_r2 = std::min(min_r2, r2);
  }
  out.r2 = min_r2;
  out.per_dimension_r2 = finish_dimension_r2(truth_cols, fitted_cols);
  out.pass = min_r2 > cfg.threshold;
  if (!out.pass) out.reason = FailReason::LowR2;
  return out;
}

TaskOutcome generalization_score(const SystemRecord& record, const OdeSystem& pred,
                                 const EvalConfig& cfg) {
  TaskOutcome out;
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(record.id), 0x6E6));
  const auto& grid = record.instances.front().times;

  for (int attempt = 0; attempt <= cfg.gen_redraws; ++attempt) {
    std::vector<double> x0(record.dim);
    for (double& v : x0) v = rng.normal();
    const SolveResult truth = solve(record.system, x0, grid, cfg.solver);
    if (!truth.ok || !amplitude_ok(truth.trajectory, cfg.amplitude_limit)) continue;

    const SolveResult fitted = solve(pred, x0, grid, cfg.solver);
    if (!fitted.ok) {
      out.reason = FailReason::Divergent;
      out.pass = false;
      return out;
    }
    const double r2 = r2_score(flatten(truth.trajectory), flatten(fitted.trajectory));
    out.r2 = r2;
    out.per_instance_r2.push_back(r2);
    std::vector<std::vector<double>> truth_cols, fitted_cols;
    record_dimension_r2(truth.trajectory, fitted.trajectory, truth_cols, fitted_cols);
    out.per_dimension_r2 = finish_dimension_r2(truth_cols, fitted_cols);
    if (std::isnan(r2)) {
      out.reason = FailReason::UndefinedR2;
      return out;
    }
    out.pass = r2 > cfg.threshold;
    if (!out.pass) out.reason = FailReason::LowR2;
    return out;
  }
  out.excluded = true;
  out.reason = FailReason::Excluded;
  return out;
}

double accuracy(const std::vector<TaskOutcome>& outcomes) {
  long passes = 0, total = 0;
  for (const TaskOutcome& o : outcomes) {
    if (o.excluded) continue;
    ++total;
    if (o.pass) ++passes;
  }
  if (total == 0) throw DataError("accuracy: no scoreable outcomes");
  return static_cast<double>(passes) / static_cast<double>(total);
}

std::vector<std::vector<double>> finite_diff(const Trajectory& traj) {
  const long s = static_cast<long>(traj.points());
  const int D = traj.dim();
  if (s < 3) throw DataError("finite_diff: need at least three points");
  const double h = traj.times[1] - traj.times[0];
  for (long k = 1; k + 1 < s; ++k) {
    const double hk = traj.times[static_cast<std::size_t>(k + 1)] - traj.times[static_cast<std::size_t>(k)];
    if (std::abs(hk - h) > 1e-9 * std::max(1.0, std::abs(h)))
      throw DataError("finite_diff: grid must be uniform");
  }
  std::vector<std::vector<double>> out(static_cast<std::size_t>(s), std::vector<double>(D));
  for (int d = 0; d < D; ++d) {
    auto x = [&](long k) { return traj.states[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)]; };
    out[0][static_cast<std::size_t>(d)] = (-3.0 * x(0) + 4.0 * x(1) - x(2)) / (2.0 * h);
    for (long k = 1; k + 1 < s; ++k)
      out[static_cast<std::size_t>(k)][static_cast<std::size_t>(d)] = (x(k + 1) - x(k - 1)) / (2.0 * h);
    out[static_cast<std::size_t>(s - 1)][static_cast<std::size_t>(d)] =
        (3.0 * x(s - 1) - 4.0 * x(s - 2) + x(s - 3)) / (2.0 * h);
  }
  return out;
}

OdeSystem stlsq_fit(const std::vector<Trajectory>& instances, const StlsqConfig& cfg,
                    bool* rank_warning, long* rows_used) {
  if (instances.empty()) throw DataError("stlsq_fit: no instances");
  const int D = instances.front().dim();
  const auto monomials = enumerate_monomials(D, cfg.degree);
  const long n_basis = static_cast<long>(monomials.size());

  long rows = 0;
  for (const Trajectory& t : instances) rows += static_cast<long>(t.points());
  if (rows_used) *rows_used = rows;

  Eigen::MatrixXd theta(rows, n_basis);
  Eigen::MatrixXd dX(rows, D);
  long r = 0;
  for (const Trajectory& t : instances) {
    const auto deriv = finite_diff(t);
    for (std::size_t k = 0; k < t.points(); ++k, ++r) {
      for (long m = 0; m < n_basis; ++m) {
        double v = 1.0;
        for (int d = 0; d < D; ++d)
          for (int e = 0; e < monomials[static_cast<std::size_t>(m)][static_cast<std::size_t>(d)]; ++e)
            v *= t.states[k][static_cast<std::size_t>(d)];
        theta(r, m) = v;
      }
      for (int d = 0; d < D; ++d) dX(r, d) = deriv[k][static_cast<std::size_t>(d)];
    }
  }

  if (rank_warning) *rank_warning = false;
  OdeSystem out;
  out.dim = D;

  for (int d = 0; d < D; ++d) {
    std::vector<long> active(static_cast<std::size_t>(n_basis));
    for (long m = 0; m < n_basis; ++m) active[static_cast<std::size_t>(m)] = m;
    Eigen::VectorXd coeffs = Eigen::VectorXd::Zero(n_basis);

    for (int iter = 0; iter < cfg.max_iterations; ++iter) {
      if (active.empty()) break;
      Eigen::MatrixXd sub(rows, static_cast<long>(active.size()));
      for (std::size_t m = 0; m < active.size(); ++m) sub.col(static_cast<long>(m)) = theta.col(active[m]);
      Eigen::BDCSVD<Eigen::MatrixXd> svd(sub, Eigen::ComputeThinU | Eigen::ComputeThinV);
      if (rank_warning && svd.rank() < static_cast<long>(active.size())) *rank_warning = true;
      const Eigen::VectorXd c = svd.solve(dX.col(d));

      coeffs.setZero();
      std::vector<long> survivors;
      for (std::size_t m = 0; m < active.size(); ++m) {
        if (std::abs(c(static_cast<long>(m))) >= cfg.threshold) {
          survivors.push_back(active[m]);
          coeffs(active[m]) = c(static_cast<long>(m));
        }
      }
      if (survivors.size() == active.size()) break;  // fixpoint
      active = std::move(survivors);
      if (active.empty()) {
        coeffs.setZero();
        break;
      }
    }

    Expr eq;
    bool first = true;
    for (long m = 0; m < n_basis; ++m) {
      if (coeffs(m) == 0.0) continue;
      Expr term = monomial_expr(coeffs(m), monomials[static_cast<std::size_t>(m)]);
      eq = first ? std::move(term) : Expr::binary(ExprKind::Add, std::move(eq), std::move(term));
      first = false;
    }
    if (first) eq = Expr::constant(0.0);
    out.equations.push_back(std::move(eq));
  }
  return out;
}

// ---- results table ----------------------------------------------------------

void ResultsTable::append(const ResultsTable& other) {
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

double ResultsTable::accuracy_for(const std::string& tag, const std::string& task, int dim,
                                  double sigma, int instances) const {
  long passes = 0, total = 0;
  for (const ResultRow& r : rows) {
    if (!tag.empty() && r.tag != tag) continue;
    if (!task.empty() && r.task != task) continue;
    if (dim >= 0 && r.dim != dim) continue;
    if (sigma >= 0 && r.sigma != sigma) continue;
    if (instances >= 0 && r.instances != instances) continue;
    if (r.excluded) continue;
    ++total;
    if (r.pass) ++passes;
  }
  if (total == 0) throw DataError("accuracy_for: no matching outcomes");
  return static_cast<double>(passes) / static_cast<double>(total);
}

namespace {

std::string csv_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

}  // namespace

void write_results_csv(const ResultsTable& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write results to " + path);
  out << "tag,task,dim,sigma,instances,system_id,r2,pass,excluded,reason\n";
  for (const ResultRow& r : table.rows)
    out << r.tag << ',' << r.task << ',' << r.dim << ',' << csv_double(r.sigma) << ','
        << r.instances << ',' << r.system_id << ',' << csv_double(r.r2) << ',' << (r.pass ? 1 : 0)
        << ',' << (r.excluded ? 1 : 0) << ',' << r.reason << '\n';
}

ResultsTable read_results_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open results " + path);
  ResultsTable table;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    std::istringstream ls(line);
    std::string field;
    ResultRow r;
    auto next = [&]() {
      if (!std::getline(ls, field, ',')) throw DataError("results row truncated: " + line);
      return field;
    };
    r.tag = next();
    r.task = next();
    r.dim = std::stoi(next());
    r.sigma = std::stod(next());
    r.instances = std::stoi(next());
    r.system_id = std::stol(next());
    const std::string r2s = next();
    r.r2 = r2s == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(r2s);
    r.pass = next() == "1";
    r.excluded = next() == "1";
    r.reason = next();
    table.rows.push_back(std::move(r));
  }
  return table;
}

void write_summary_csv(const ResultsTable& table, const std::string& path) {
  struct Key {
    std::string tag, task;
    int dim;
    double sigma;
    int instances;
    bool operator<(const Key& o) const {
      return std::tie(tag, task, dim, sigma, instances) <
             std::tie(o.tag, o.task, o.dim, o.sigma, o.instances);
    }
  };
  struct Agg {
    long passes = 0, total = 0, excluded = 0;
  };
  std::map<Key, Agg> groups;
  for (const ResultRow& r : table.rows) {
    Agg& a = groups[Key{r.tag, r.task, r.dim, r.sigma, r.instances}];
    if (r.excluded) {
      ++a.excluded;
      continue;
    }
    ++a.total;
    if (r.pass) ++a.passes;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write summary to " + path);
  out << "tag,task,dim,sigma,instances,systems,excluded,accuracy\n";
  for (const auto& [k, a] : groups)
    out << k.tag << ',' << k.task << ',' << k.dim << ',' << csv_double(k.sigma) << ','
        << k.instances << ',' << a.total << ',' << a.excluded << ','
        << (a.total ? csv_double(static_cast<double>(a.passes) / static_cast<double>(a.total))
                    : "nan")
        << '\n';
}

ResultsTable score_prediction(const SystemRecord& record, const PredictionRow& pred,
                              const EvalConfig& cfg, const std::string& tag, double sigma,
                              int instances) {
  ResultsTable table;
  auto make_row = [&](const std::string& task, const TaskOutcome& o) {
    ResultRow r;
    r.tag = tag;
    r.task = task;
    r.dim = record.dim;
    r.sigma = sigma;
    r.instances = instances;
    r.system_id = record.id;
    r.r2 = o.r2;
    r.pass = o.pass;
    r.excluded = o.excluded;
    r.reason = describe(o.reason);
    return r;
  };
  if (!pred.ok) {
    TaskOutcome fail;
    fail.reason = FailReason::ParseFailure;
    table.rows.push_back(make_row("reconstruction", fail));
    table.rows.push_back(make_row("generalization", fail));
    return table;
  }
  table.rows.push_back(make_row("reconstruction", reconstruction_score(record, pred.system, cfg)));
  table.rows.push_back(make_row("generalization", generalization_score(record, pred.system, cfg)));
  return table;
}

}  // namespace misode
