#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "datagen.hpp"
#include "infer.hpp"

namespace misode {

// Pooled R^2 over flattened values: 1 - SS_res / SS_tot. Constant truth with
// zero residual gives 1; constant truth with nonzero residual is undefined
// (NaN), which downstream counts as a failure.
double r2_score(std::span<const double> y_true, std::span<const double> y_pred);

enum class FailReason { None, Divergent, ParseFailure, LowR2, UndefinedR2, Excluded };
std::string describe(FailReason r);

struct EvalConfig {
  double threshold = 0.9;
  int gen_redraws = 10;
  std::uint64_t seed = 0;
  SolverConfig solver;
  double amplitude_limit = 100.0;
};

struct TaskOutcome {
  bool pass = false;
  bool excluded = false;
  double r2 = std::numeric_limits<double>::quiet_NaN();  // min over instances / single
  std::vector<double> per_instance_r2;
  std::vector<double> per_dimension_r2;  // diagnostics; scoring uses the pooled value
  FailReason reason = FailReason::None;
};

// Solve pred from each instance's (clean) initial value on the record grid;
// pass iff the minimum per-instance R^2 against the noiseless states exceeds
// the threshold.
TaskOutcome reconstruction_score(const SystemRecord& record, const OdeSystem& pred,
                                 const EvalConfig& cfg);

// One unseen standard-normal initial value (seed-deterministic per system id),
// redrawn while the ground truth violates the amplitude filter; pass iff the
// R^2 between ground-truth and predicted solutions exceeds the threshold.
TaskOutcome generalization_score(const SystemRecord& record, const OdeSystem& pred,
                                 const EvalConfig& cfg);

// passes / (passes + fails); excluded systems leave the denominator. Throws
// on an empty effective set.
double accuracy(const std::vector<TaskOutcome>& outcomes);

// Second-order finite differences on a uniform grid (central inside,
// one-sided at the boundaries); returns s x D derivative estimates.
std::vector<std::vector<double>> finite_diff(const Trajectory& traj);

struct StlsqConfig {
  double threshold = 0.1;
  int max_iterations = 400;
  int degree = 3;
  int fd_order = 2;  // fixed: second-order differences
};

// Sequentially thresholded least squares over the monomial library, rows
// stacked across all instances (*rows_used = sum of instance lengths).
// Rank-deficient libraries fall back to the minimum-norm solution and set
// *rank_warning.
OdeSystem stlsq_fit(const std::vector<Trajectory>& instances, const StlsqConfig& cfg,
                    bool* rank_warning = nullptr, long* rows_used = nullptr);

// ---- results table ----------------------------------------------------------

struct ResultRow {
  std::string tag;   // model/aggregator or baseline name
  std::string task;  // "reconstruction" | "generalization"
  int dim = 0;
  double sigma = 0;
  int instances = 0;
  long system_id = 0;
  double r2 = std::numeric_limits<double>::quiet_NaN();
  bool pass = false;
  bool excluded = false;
  std::string reason;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  void append(const ResultsTable& other);
  // accuracy over rows matching the filter (-1 / empty = any)
  double accuracy_for(const std::string& tag, const std::string& task, int dim, double sigma,
                      int instances) const;
};

void write_results_csv(const ResultsTable& table, const std::string& path);
ResultsTable read_results_csv(const std::string& path);
void write_summary_csv(const ResultsTable& table, const std::string& path);

// Scores one prediction (or its absence) on both tasks.
ResultsTable score_prediction(const SystemRecord& record, const PredictionRow& pred,
                              const EvalConfig& cfg, const std::string& tag, double sigma,
                              int instances);

}  // namespace misode
