#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "datagen.hpp"
#include "model.hpp"

namespace misode {

struct CosineScheduleConfig {
  long warmup = 1000;
  long cycle = 30000;
  double period_mult = 1.1;
  double shrink = 0.75;
  double lr_max = 2e-4;
  double lr_min = 1e-9;
};

struct NoamScheduleConfig {
  long warmup = 2000;
  double lr_max = 4e-4;  // 2D default; 3D runs use 1e-4
};

enum class ScheduleKind { Cosine, Noam };

// Linear warmup to lr_max, then per-cycle cosine decay to lr_min; each cycle
// boundary multiplies the length by period_mult and the peak by shrink.
double cosine_schedule(long step, const CosineScheduleConfig& cfg);

// lr_max * min(step/warmup, sqrt(warmup/step)); peak exactly at the warmup step.
double noam_schedule(long step, const NoamScheduleConfig& cfg);

struct CosineCycle {
  long start = 0;  // first step of the cycle (after warmup)
  double length = 0;
  double peak = 0;
};
CosineCycle cosine_cycle_at(long step, const CosineScheduleConfig& cfg);

struct TrainConfig {
  long steps = 2000;
  int batch_size = 55;
  ScheduleKind schedule = ScheduleKind::Cosine;
  CosineScheduleConfig cosine;
  NoamScheduleConfig noam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;  // Noam runs conventionally pair with 0.98
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0: only on completion
  int workers = 2;
  double sigma_override = -1.0;  // < 0: use each record's sigma
  std::string log_path;
  std::string checkpoint_path;
};

// Seed-deterministic epoch shuffling, consecutive chunks as batches.
class Batcher {
 public:
  Batcher(std::size_t count, int batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();
  long epoch() const { return epoch_; }

 private:
  void reshuffle();
  std::size_t count_;
  std::size_t batch_;
  std::uint64_t seed_;
  long epoch_ = -1;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

// Flat encoder mini-batch layout: instances of all systems in one list with
// per-system spans, so aggregation can regroup them losslessly.
struct BatchLayout {
  std::vector<int> instance_counts;
  std::vector<std::pair<int, int>> flat;      // flat index -> (system, instance)
  std::vector<std::vector<int>> groups;       // system -> flat indices
  int total_instances = 0;
};
BatchLayout make_batch_layout(const std::vector<const SystemRecord*>& batch);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  long t = 0;
  void init(const std::vector<Param<T>*>& params) {
    m.clear();
    v.clear();
    for (const Param<T>* p : params) {
      m.push_back(Tensor<T>::zeros(p->value.rows(), p->value.cols()));
      v.push_back(Tensor<T>::zeros(p->value.rows(), p->value.cols()));
    }
    t = 0;
  }
};

// One tokenized training example.
struct PreparedRecord {
  long id = 0;
  std::vector<SlottedTokens> instances;
  std::vector<int> target;
};

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig cfg);

  // Tokenizes the corpus (with its noise applied deterministically); records
  // whose targets exceed the decoder budget are dropped and counted.
  void prepare(const std::vector<SystemRecord>& corpus);

  long prepared_count() const { return static_cast<long>(prepared_.size()); }
  long dropped_count() const { return dropped_; }

  struct StepResult {
    double loss = 0;
    double grad_norm = 0;
    double lr = 0;
  };

  // Forward/backward over one batch of prepared records plus an Adam update.
  StepResult step_on(const std::vector<std::size_t>& batch_indices, long step_index);

  // Full loop: batching, logging, checkpoints. Returns the final loss.
  double run(long start_step = 0);

  double learning_rate(long step) const;
  AdamState<T>& adam() { return adam_; }
  const std::vector<PreparedRecord>& prepared() const { return prepared_; }

  void save_checkpoint(const std::string& path, long step) const;
  long load_optimizer_state(const std::vector<std::pair<std::string, Tensor<T>>>& extra);

 private:
  Model<T>& model_;
  TrainConfig cfg_;
  std::vector<Param<T>*> params_;
  AdamState<T> adam_;
  std::vector<PreparedRecord> prepared_;
  long dropped_ = 0;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace misode
