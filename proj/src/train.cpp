#include "train.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <thread>

namespace misode {

double cosine_schedule(long step, const CosineScheduleConfig& cfg) {
  if (step < 0) throw ConfigError("cosine_schedule: negative step");
  if (step < cfg.warmup)
    return cfg.lr_max * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  const CosineCycle c = cosine_cycle_at(step, cfg);
  const double pos = static_cast<double>(step - c.start);
  const double u = pos / c.length;
  return cfg.lr_min + (c.peak - cfg.lr_min) * 0.5 * (1.0 + std::cos(M_PI * u));
}

CosineCycle cosine_cycle_at(long step, const CosineScheduleConfig& cfg) {
  CosineCycle c;
  c.start = cfg.warmup;
  c.length = static_cast<double>(cfg.cycle);
  c.peak = cfg.lr_max;
  double pos = static_cast<double>(step - cfg.warmup);
  while (pos >= c.length) {
    pos -= c.length;
    c.start += static_cast<long>(c.length);
    c.length *= cfg.period_mult;
    c.peak *= cfg.shrink;
  }
  return c;
}

double noam_schedule(long step, const NoamScheduleConfig& cfg) {
  if (step < 0) throw ConfigError("noam_schedule: negative step");
  if (step == 0) return 0.0;
  const double w = static_cast<double>(cfg.warmup);
  const double s = static_cast<double>(step);
  return cfg.lr_max * std::min(s / w, std::sqrt(w / s));
}

Batcher::Batcher(std::size_t count, int batch_size, std::uint64_t seed)
    : count_(count), batch_(static_cast<std::size_t>(batch_size)), seed_(seed) {
  if (count_ == 0) throw DataError("batcher: empty corpus");
  if (batch_ == 0) throw ConfigError("batcher: batch size must be positive");
  reshuffle();
}

void Batcher::reshuffle() {
  ++epoch_;
  pos_ = 0;
  order_.resize(count_);
  for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, 0xBA7C4, static_cast<std::uint64_t>(epoch_)));
  for (std::size_t i = count_; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(i) - 1));
    std::swap(order_[i - 1], order_[j]);
  }
}

std::vector<std::size_t> Batcher::next() {
  if (pos_ >= count_) reshuffle();
  const std::size_t take = std::min(batch_, count_ - pos_);
  std::vector<std::size_t> out(order_.begin() + static_cast<long>(pos_),
                               order_.begin() + static_cast<long>(pos_ + take));
  pos_ += take;
  return out;
}

BatchLayout make_batch_layout(const std::vector<const SystemRecord*>& batch) {
  BatchLayout layout;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const int n = static_cast<int>(batch[s]->instances.size());
    if (n == 0) throw DataError("batch contains a record with zero instances (id " +
                                std::to_string(batch[s]->id) + ")");
    layout.instance_counts.push_back(n);
    layout.groups.emplace_back();
    for (int i = 0; i < n; ++i) {
      layout.groups.back().push_back(layout.total_instances);
      layout.flat.emplace_back(static_cast<int>(s), i);
      ++layout.total_instances;
    }
  }
  return layout;
}

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
  params_ = model_.parameters();
  adam_.init(params_);
}

template <typename T>
void Trainer<T>::prepare(const std::vector<SystemRecord>& corpus) {
  prepared_.clear();
  dropped_ = 0;
  const Vocab& vocab = Vocab::instance();
  for (const SystemRecord& rec : corpus) {
    if (rec.instances.empty())
      throw DataError("record with zero instances (id " + std::to_string(rec.id) + ")");
    PreparedRecord p;
    p.id = rec.id;
    p.target = encode_system(rec.system, vocab);
    if (static_cast<long>(p.target.size()) - 1 > model_.config().max_target) {
      ++dropped_;
      continue;
    }
    const double sigma = cfg_.sigma_override >= 0 ? cfg_.sigma_override : rec.sigma;
    bool ok = true;
    for (int i = 0; i < static_cast<int>(rec.instances.size()); ++i) {
      const Trajectory noisy = noisy_instance(rec, i, sigma);
      std::vector<int> tokens;
      try {
        tokens = encode_trajectory(noisy, vocab);
      } catch (const std::out_of_range&) {
        ok = false;  // noise pushed a value outside the codec range
        break;
      }
      p.instances.push_back(slot_trajectory_tokens(tokens, rec.dim, model_.config().d_max));
    }
    if (!ok || static_cast<long>(rec.instances[0].times.size()) > model_.config().max_points) {
      ++dropped_;
      continue;
    }
    prepared_.push_back(std::move(p));
  }
  if (prepared_.empty()) throw DataError("no trainable records after preparation");
}

template <typename T>
double Trainer<T>::learning_rate(long step) const {
  return cfg_.schedule == ScheduleKind::Cosine ? cosine_schedule(step, cfg_.cosine)
                                               : noam_schedule(step, cfg_.noam);
}

template <typename T>
typename Trainer<T>::StepResult Trainer<T>::step_on(const std::vector<std::size_t>& batch_indices,
                                                    long step_index) {
  if (batch_indices.empty()) throw DataError("train step: empty batch");
  const std::size_t B = batch_indices.size();

  struct PerSystem {
    std::unique_ptr<Graph<T>> graph;
    typename Graph<T>::Id loss_id = -1;
    double loss = 0;
  };
  std::vector<PerSystem> results(B);

  auto run_system = [&](std::size_t bi) {
    const PreparedRecord& rec = prepared_[batch_indices[bi]];
    auto g = std::make_unique<Graph<T>>(true);
    const auto loss_id = model_.system_loss(*g, rec.instances, rec.target);
    g->backward(loss_id);
    results[bi].loss = static_cast<double>(g->value(loss_id).at(0, 0));
    results[bi].loss_id = loss_id;
    results[bi].graph = std::move(g);
  };

  const int workers = std::max(1, cfg_.workers);
  if (workers == 1 || B == 1) {
    for (std::size_t i = 0; i < B; ++i) run_system(i);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = static_cast<std::size_t>(w); i < B; i += static_cast<std::size_t>(workers))
          run_system(i);
      });
    for (auto& t : pool) t.join();
  }

  // Deterministic reduction in batch order, independent of the worker count.
  model_.zero_grads();
  double loss_sum = 0;
  std::vector<long> bad_ids;
  for (std::size_t i = 0; i < B; ++i) {
    loss_sum += results[i].loss;
    if (!std::isfinite(results[i].loss)) bad_ids.push_back(prepared_[batch_indices[i]].id);
    for (const auto& [param, node] : results[i].graph->params_used())
      param->grad.map() += results[i].graph->grad(node).map();
    results[i].graph.reset();
  }
  if (!bad_ids.empty()) {
    std::string ids;
    for (long id : bad_ids) ids += std::to_string(id) + " ";
    throw RuntimeFailure("non-finite loss at records: " + ids);
  }
  const T inv_b = T(1) / static_cast<T>(B);
  for (Param<T>* p : params_) p->grad.map() *= inv_b;

  double norm_sq = 0;
  for (Param<T>* p : params_) norm_sq += static_cast<double>(p->grad.map().template cast<double>().squaredNorm());
  const double grad_norm = std::sqrt(norm_sq);
  if (cfg_.clip_norm > 0 && grad_norm > cfg_.clip_norm) {
    const T scale = static_cast<T>(cfg_.clip_norm / grad_norm);
    for (Param<T>* p : params_) p->grad.map() *= scale;
  }

  const double lr = learning_rate(step_index);
  adam_.t += 1;
  const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(adam_.t));
  const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(adam_.t));
  const T b1 = static_cast<T>(cfg_.adam_beta1), b2 = static_cast<T>(cfg_.adam_beta2);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto g = params_[i]->grad.map().array();
    auto m = adam_.m[i].map().array();
    auto v = adam_.v[i].map().array();
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.square();
    params_[i]->value.map().array() -=
        static_cast<T>(lr) * (m / static_cast<T>(bc1)) /
        ((v / static_cast<T>(bc2)).sqrt() + static_cast<T>(cfg_.adam_eps));
  }

  return StepResult{loss_sum / static_cast<double>(B), grad_norm, lr};
}

template <typename T>
double Trainer<T>::run(long start_step) {
  if (prepared_.empty()) throw DataError("trainer: prepare() first");
  Batcher batcher(prepared_.size(), cfg_.batch_size, cfg_.seed);
  // Resumed runs replay the batch sequence up to the restart point so the
  // remaining steps see exactly the batches an uninterrupted run would.
  for (long s = 0; s < start_step; ++s) batcher.next();
  std::ofstream log;
  if (!cfg_.log_path.empty()) {
    log.open(cfg_.log_path, start_step > 0 ? std::ios::app : std::ios::trunc);
    if (!log) throw DataError("cannot open training log " + cfg_.log_path);
    if (start_step == 0) log << "step,lr,loss,grad_norm\n";
  }
  double last_loss = 0;
  for (long step = start_step; step < cfg_.steps; ++step) {
    const StepResult r = step_on(batcher.next(), step);
    last_loss = r.loss;
    if (log)
      log << step << ',' << r.lr << ',' << r.loss << ',' << r.grad_norm << '\n' << std::flush;
    if (cfg_.checkpoint_every > 0 && !cfg_.checkpoint_path.empty() &&
        (step + 1) % cfg_.checkpoint_every == 0)
      save_checkpoint(cfg_.checkpoint_path, step + 1);
  }
  if (!cfg_.checkpoint_path.empty()) save_checkpoint(cfg_.checkpoint_path, cfg_.steps);
  return last_loss;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::string& path, long step) const {
  std::vector<std::pair<std::string, Tensor<T>>> extra;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    extra.emplace_back("adam.m." + params_[i]->name, adam_.m[i]);
    extra.emplace_back("adam.v." + params_[i]->name, adam_.v[i]);
  }
  Tensor<T> t_state(1, 1);
  t_state.at(0, 0) = static_cast<T>(adam_.t);
  extra.emplace_back("adam.t", t_state);
  model_.save(path, extra, step);
}

template <typename T>
long Trainer<T>::load_optimizer_state(
    const std::vector<std::pair<std::string, Tensor<T>>>& extra) {
  long found = 0;
  for (const auto& [name, t] : extra) {
    if (name == "adam.t") {
      adam_.t = static_cast<long>(t.at(0, 0));
      ++found;
      continue;
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (name == "adam.m." + params_[i]->name) {
        adam_.m[i] = t;
        ++found;
      } else if (name == "adam.v." + params_[i]->name) {
        adam_.v[i] = t;
        ++found;
      }
    }
  }
  return found;
}

template class Trainer<float>;
template class Trainer<double>;

}  // namespace misode
