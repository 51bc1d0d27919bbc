#include "baseline.hpp"

#include <atomic>
#include <mutex>
#include <thread>

namespace misode {

ResultsTable run_baseline(const std::vector<SystemRecord>& corpus, const BaselineSweepConfig& cfg,
                          std::vector<Prediction>* predictions_out) {
  if (corpus.empty()) throw DataError("run_baseline: empty corpus");

  struct Cell {
    std::size_t record;
    int n;
    double sigma;
  };
  std::vector<Cell> cells;
  for (std::size_t r = 0; r < corpus.size(); ++r)
    for (double sigma : cfg.noise_grid)
      for (int n : cfg.instance_counts)
        if (n >= 1 && n <= static_cast<int>(corpus[r].instances.size()))
          cells.push_back({r, n, sigma});

  std::vector<ResultsTable> tables(cells.size());
  std::vector<Prediction> preds(cells.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      const Cell& cell = cells[i];
      const SystemRecord& record = corpus[cell.record];
      std::vector<Trajectory> observed;
      for (int j = 0; j < cell.n; ++j) observed.push_back(noisy_instance(record, j, cell.sigma));

      Prediction p;
      p.system_id = record.id;
      p.dim = record.dim;
      PredictionRow row;
      row.id = record.id;
      row.dim = record.dim;
      try {
        bool rank_warning = false;
        row.system = stlsq_fit(observed, cfg.stlsq, &rank_warning);
        row.ok = true;
        p.ok = true;
        p.system = row.system;
        if (rank_warning) p.failure = "rank-deficient library (minimum-norm fit)";
      } catch (const std::exception& e) {
        row.ok = false;
        p.failure = e.what();
      }
      preds[i] = std::move(p);
      tables[i] = score_prediction(record, row, cfg.eval, cfg.tag, cell.sigma, cell.n);
    }
  };

  const int workers = std::max(1, cfg.workers);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ResultsTable out;
  for (const ResultsTable& t : tables) out.append(t);
  if (predictions_out) *predictions_out = std::move(preds);
  return out;
}

}  // namespace misode
