#pragma once

#include "eval.hpp"

namespace misode {

struct BaselineSweepConfig {
  StlsqConfig stlsq;
  std::vector<int> instance_counts = {1, 2, 3, 4};
  std::vector<double> noise_grid = {0.0, 0.01, 0.05, 0.1};
  EvalConfig eval;
  int workers = 1;
  std::string tag = "stlsq";
};

// Fits STLSQ on the first n noisy instances for every (system, n, sigma) cell
// and scores the fits through the same eval operations as the learned model.
// Multi-instance fusion is row stacking before the regression.
ResultsTable run_baseline(const std::vector<SystemRecord>& corpus, const BaselineSweepConfig& cfg,
                          std::vector<Prediction>* predictions_out = nullptr);

}  // namespace misode
