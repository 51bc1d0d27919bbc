#include "pipeline.hpp"

#include <atomic>
#include <ostream>
#include <thread>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "baseline.hpp"
#include "corpus_io.hpp"
#include "report.hpp"
#include "train.hpp"

namespace misode {

using nlohmann::json;

namespace {

json parse_config(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
}

std::string require_path(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    throw ConfigError(std::string("missing required path '") + key + "'");
  return j[key].get<std::string>();
}

CorpusConfig corpus_config_from(const json& j) {
  CorpusConfig cfg;
  cfg.count = j.value("count", 0L);
  if (cfg.count < 1) throw ConfigError("datagen: count must be >= 1");
  if (!j.contains("seed")) throw ConfigError("datagen: seed is mandatory");
  cfg.seed = j["seed"].get<std::uint64_t>();

  const std::string gen = j.value("generator", "poly");
  if (gen == "poly")
    cfg.generator = GeneratorKind::Poly;
  else if (gen == "tree")
    cfg.generator = GeneratorKind::Tree;
  else
    throw ConfigError("datagen: generator must be poly or tree");

  const std::string regime = j.value("regime", "");
  if (regime == "exp1") {
    cfg.dim_min = 1;
    cfg.dim_max = 4;
    cfg.instances_min = 1;
    cfg.instances_max = 4;
  } else if (regime == "exp2") {
    cfg.instances_min = cfg.instances_max = 4;
  } else if (!regime.empty()) {
    throw ConfigError("datagen: regime must be exp1 or exp2");
  }
  if (j.contains("dims")) cfg.dim_min = cfg.dim_max = j["dims"].get<int>();
  cfg.dim_min = j.value("dim_min", cfg.dim_min);
  cfg.dim_max = j.value("dim_max", cfg.dim_max);
  if (j.contains("instances")) cfg.instances_min = cfg.instances_max = j["instances"].get<int>();
  cfg.instances_min = j.value("instances_min", cfg.instances_min);
  cfg.instances_max = j.value("instances_max", cfg.instances_max);
  cfg.sigma = j.value("sigma", 0.0);
  cfg.t0 = j.value("t0", 1.0);
  cfg.t1 = j.value("t1", 10.0);
  cfg.grid_points = j.value("grid_points", 100);
  cfg.workers = j.value("workers", 2);
  if (j.contains("poly")) {
    const json& p = j["poly"];
    cfg.poly.order_max = p.value("order_max", cfg.poly.order_max);
    cfg.poly.terms_max = p.value("terms_max", cfg.poly.terms_max);
  }
  if (j.contains("tree")) {
    const json& t = j["tree"];
    cfg.tree.binary_max = t.value("binary_max", cfg.tree.binary_max);
    cfg.tree.unary_max = t.value("unary_max", cfg.tree.unary_max);
    cfg.tree.depth_max = t.value("depth_max", cfg.tree.depth_max);
  }
  return cfg;
}

ModelConfig model_config_from(const json& j) {
  ModelConfig base;
  const std::string preset = j.value("preset", "paper1");
  if (preset == "paper1")
    base = ModelConfig::paper_exp1();
  else if (preset == "paper2")
    base = ModelConfig::paper_exp2();
  else if (preset == "toy")
    base = ModelConfig::toy();
  else if (preset == "tiny")
    base = ModelConfig::tiny_gradcheck();
  else
    throw ConfigError("model preset must be paper1, paper2, toy or tiny");
  base.vocab_size = Vocab::instance().size();

  json merged = json::parse(base.to_json());
  for (auto& [key, value] : j.items())
    if (key != "preset") merged[key] = value;
  return ModelConfig::from_json(merged.dump());
}

TrainConfig train_config_from(const json& j) {
  TrainConfig cfg;
  cfg.steps = j.value("steps", cfg.steps);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  const std::string sched = j.value("schedule", "cosine");
  if (sched == "cosine")
    cfg.schedule = ScheduleKind::Cosine;
  else if (sched == "noam")
    cfg.schedule = ScheduleKind::Noam;
  else
    throw ConfigError("train: schedule must be cosine or noam");
  if (j.contains("cosine")) {
    const json& cj = j["cosine"];
    cfg.cosine.warmup = cj.value("warmup", cfg.cosine.warmup);
    cfg.cosine.cycle = cj.value("cycle", cfg.cosine.cycle);
    cfg.cosine.period_mult = cj.value("period_mult", cfg.cosine.period_mult);
    cfg.cosine.shrink = cj.value("shrink", cfg.cosine.shrink);
    cfg.cosine.lr_max = cj.value("lr_max", cfg.cosine.lr_max);
    cfg.cosine.lr_min = cj.value("lr_min", cfg.cosine.lr_min);
  }
  if (j.contains("noam")) {
    const json& nj = j["noam"];
    cfg.noam.warmup = nj.value("warmup", cfg.noam.warmup);
    cfg.noam.lr_max = nj.value("lr_max", cfg.noam.lr_max);
    cfg.adam_beta2 = 0.98;  // conventional Noam pairing; explicit key still wins
  }
  cfg.adam_beta1 = j.value("beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("beta2", cfg.adam_beta2);
  cfg.adam_eps = j.value("eps", cfg.adam_eps);
  cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
  cfg.seed = j.value("seed", static_cast<std::uint64_t>(0));
  cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
  cfg.workers = j.value("workers", cfg.workers);
  cfg.sigma_override = j.value("sigma_override", cfg.sigma_override);
  return cfg;
}

BeamConfig beam_config_from(const json& j) {
  BeamConfig cfg;
  cfg.beam_size = j.value("size", cfg.beam_size);
  cfg.temperature = j.value("temperature", cfg.temperature);
  cfg.max_len = j.value("max_len", cfg.max_len);
  cfg.stochastic = j.value("stochastic", cfg.stochastic);
  cfg.seed = j.value("seed", cfg.seed);
  return cfg;
}

EvalConfig eval_config_from(const json& j) {
  EvalConfig cfg;
  cfg.threshold = j.value("threshold", cfg.threshold);
  cfg.gen_redraws = j.value("gen_redraws", cfg.gen_redraws);
  if (!j.contains("seed")) throw ConfigError("eval: seed is mandatory");
  cfg.seed = j["seed"].get<std::uint64_t>();
  return cfg;
}

template <typename Fn>
void parallel_over(std::size_t count, int workers, Fn&& fn) {
  workers = std::max(1, workers);
  if (workers == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  for (auto& t : pool) t.join();
}

}  // namespace

void run_datagen(const std::string& config_json, std::ostream& log) {
  const json j = parse_config(config_json);
  const std::string out_path = require_path(j, "out");
  const CorpusConfig cfg = corpus_config_from(j);

  const Corpus corpus = build_corpus(cfg);
  save_corpus(corpus.records, out_path);
  write_corpus_manifest(out_path, cfg, corpus, config_json);
  if (j.contains("dump_vocab")) Vocab::instance().dump(j["dump_vocab"].get<std::string>());

  log << "datagen: wrote " << corpus.records.size() << " records to " << out_path << " ("
      << corpus.stats.attempts << " attempts, " << corpus.stats.rejected_amplitude
      << " amplitude rejections, " << corpus.stats.rejected_divergent << " divergent)\n";
}

void run_train(const std::string& config_json, std::ostream& log) {
  const json j = parse_config(config_json);
  const std::string corpus_path = require_path(j, "corpus");
  const std::string ckpt_path = require_path(j, "checkpoint_out");

  TrainConfig tcfg = train_config_from(j.value("train", json::object()));
  tcfg.checkpoint_path = ckpt_path;
  tcfg.log_path = j.value("log", std::string());

  const auto records = load_corpus(corpus_path);

  std::unique_ptr<Model<float>> model;
  long start_step = 0;
  std::unique_ptr<Trainer<float>> trainer;
  if (j.contains("resume") && !j["resume"].get<std::string>().empty()) {
    auto loaded = Model<float>::load(j["resume"].get<std::string>());
    if (j.contains("model")) {
      const ModelConfig wanted = model_config_from(j["model"]);
      if (wanted.to_json() != loaded.model->config().to_json())
        throw ConfigError("train: model config conflicts with the resume checkpoint");
    }
    model = std::move(loaded.model);
    start_step = loaded.step;
    trainer = std::make_unique<Trainer<float>>(*model, tcfg);
    trainer->load_optimizer_state(loaded.extra);
    log << "train: resumed from step " << start_step << "\n";
  } else {
    const ModelConfig mcfg = model_config_from(j.value("model", json::object()));
    model = std::make_unique<Model<float>>(mcfg, j.value("seed", tcfg.seed));
    trainer = std::make_unique<Trainer<float>>(*model, tcfg);
  }

  trainer->prepare(records);
  if (trainer->dropped_count() > 0)
    log << "train: dropped " << trainer->dropped_count() << " records (length/codec limits)\n";
  const double final_loss = trainer->run(start_step);
  write_manifest(ckpt_path, "checkpoint", config_json, tcfg.seed);
  log << "train: " << tcfg.steps << " steps over " << trainer->prepared_count()
      << " records, final batch loss " << final_loss << ", checkpoint " << ckpt_path << "\n";
}

void run_predict(const std::string& config_json, std::ostream& log) {
  const json j = parse_config(config_json);
  const std::string corpus_path = require_path(j, "corpus");
  const std::string ckpt_path = require_path(j, "checkpoint");
  const std::string out_path = require_path(j, "out");

  const auto records = load_corpus(corpus_path);
  auto loaded = Model<float>::load(ckpt_path);
  const Model<float>& model = *loaded.model;

  PredictConfig pcfg;
  pcfg.beam = beam_config_from(j.value("beam", json::object()));
  pcfg.rescale = j.value("rescale", true);
  pcfg.rms_literal = j.value("rms_literal", false);
  pcfg.sigma = j.value("sigma", -1.0);
  pcfg.instances = j.value("instances", 0);

  std::vector<Prediction> predictions(records.size());
  parallel_over(records.size(), j.value("workers", 2), [&](std::size_t i) {
    predictions[i] = predict(model, records[i], pcfg);
  });

  save_predictions(predictions, out_path);
  write_manifest(out_path, "predictions", config_json, pcfg.beam.seed);
  long ok = 0;
  for (const auto& p : predictions) ok += p.ok ? 1 : 0;
  log << "predict: " << ok << "/" << predictions.size() << " parseable predictions -> " << out_path
      << "\n";
}

void run_eval(const std::string& config_json, std::ostream& log) {
  const json j = parse_config(config_json);
  const std::string corpus_path = require_path(j, "corpus");
  const std::string out_path = require_path(j, "out");
  const auto records = load_corpus(corpus_path);
  const EvalConfig ecfg = eval_config_from(j);
  const int workers = j.value("workers", 2);

  std::vector<int> instance_counts = j.value("instance_counts", std::vector<int>{1, 2, 3, 4});
  std::vector<double> noise_grid = j.value("noise_grid", std::vector<double>{0.0, 0.01, 0.05, 0.1});

  ResultsTable results;

  if (j.contains("predictions")) {
    // Score an existing predictions file against the corpus.
    const std::string tag = j.value("tag", "predictions");
    const auto preds = load_predictions(j["predictions"].get<std::string>());
    std::unordered_map<long, const SystemRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    std::vector<ResultsTable> partial(preds.size());
    parallel_over(preds.size(), workers, [&](std::size_t i) {
      auto it = by_id.find(preds[i].id);
      if (it == by_id.end()) return;
      partial[i] = score_prediction(*it->second, preds[i], ecfg, tag, it->second->sigma,
                                    static_cast<int>(it->second->instances.size()));
    });
    for (const auto& t : partial) results.append(t);
  } else if (j.contains("baseline")) {
    if (j["baseline"].get<std::string>() != "stlsq")
      throw ConfigError("eval: unknown baseline (only stlsq)");
    BaselineSweepConfig bcfg;
    bcfg.eval = ecfg;
    bcfg.instance_counts = instance_counts;
    bcfg.noise_grid = noise_grid;
    bcfg.workers = workers;
    bcfg.tag = j.value("tag", "stlsq");
    if (j.contains("stlsq")) {
      const json& s = j["stlsq"];
      bcfg.stlsq.threshold = s.value("threshold", bcfg.stlsq.threshold);
      bcfg.stlsq.max_iterations = s.value("max_iterations", bcfg.stlsq.max_iterations);
      bcfg.stlsq.degree = s.value("degree", bcfg.stlsq.degree);
    }
    std::vector<Prediction> preds;
    results = run_baseline(records, bcfg, &preds);
    if (j.contains("predictions_out"))
      save_predictions(preds, j["predictions_out"].get<std::string>());
  } else if (j.value("predictor", "") == "truth") {
    // Ground-truth systems scored as predictions: protocol self-consistency.
    const std::string tag = j.value("tag", "truth");
    struct Cell {
      std::size_t rec;
      int n;
    };
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < records.size(); ++r)
      for (int n : instance_counts)
        if (n <= static_cast<int>(records[r].instances.size())) cells.push_back({r, n});
    std::vector<ResultsTable> partial(cells.size());
    parallel_over(cells.size(), workers, [&](std::size_t i) {
      const SystemRecord trimmed = select_first_n_instances(records[cells[i].rec], cells[i].n);
      PredictionRow row{trimmed.id, trimmed.dim, true, trimmed.system};
      partial[i] = score_prediction(trimmed, row, ecfg, tag, 0.0, cells[i].n);
    });
    for (const auto& t : partial) results.append(t);
  } else if (j.contains("checkpoint")) {
    // Model sweep across the noise grid and instance counts.
    auto loaded = Model<float>::load(j["checkpoint"].get<std::string>());
    const Model<float>& model = *loaded.model;
    const std::string tag = j.value("tag", agg_name(model.config().aggregator));
    PredictConfig pcfg;
    pcfg.beam = beam_config_from(j.value("beam", json::object()));
    pcfg.rescale = j.value("rescale", true);
    struct Cell {
      std::size_t rec;
      int n;
      double sigma;
    };
    std::vector<Cell> cells;
    for (std::size_t r = 0; r < records.size(); ++r)
      for (double sigma : noise_grid)
        for (int n : instance_counts)
          if (n <= static_cast<int>(records[r].instances.size())) cells.push_back({r, n, sigma});
    std::vector<ResultsTable> partial(cells.size());
    parallel_over(cells.size(), workers, [&](std::size_t i) {
      const SystemRecord trimmed = select_first_n_instances(records[cells[i].rec], cells[i].n);
      PredictConfig cell_cfg = pcfg;
      cell_cfg.sigma = cells[i].sigma;
      const Prediction p = predict(model, trimmed, cell_cfg);
      PredictionRow row{p.system_id, p.dim, p.ok, p.system};
      partial[i] = score_prediction(trimmed, row, ecfg, tag, cells[i].sigma, cells[i].n);
    });
    for (const auto& t : partial) results.append(t);
  } else {
    throw ConfigError("eval: provide one of predictions, checkpoint, baseline, predictor=truth");
  }

  if (results.rows.empty()) throw DataError("eval: produced no result rows");
  write_results_csv(results, out_path);
  if (j.contains("summary_out")) write_summary_csv(results, j["summary_out"].get<std::string>());
  write_manifest(out_path, "results", config_json, ecfg.seed);
  log << "eval: " << results.rows.size() << " result rows -> " << out_path << "\n";
}

void run_report(const std::string& config_json, std::ostream& log) {
  const json j = parse_config(config_json);
  const std::string results_path = require_path(j, "results");
  const std::string outdir = require_path(j, "outdir");
  const ResultsTable results = read_results_csv(results_path);
  write_report(results, outdir);
  log << "report: plots and tables in " << outdir << "\n";
}

}  // namespace misode
