// Command-line front end. All functionality is reached through the C API in
// misode.h; this binary only assembles configuration documents from flags.

#include <misode.h>

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

using nlohmann::json;

namespace {

int finish(misode_status status) {
  if (status != MISODE_OK) std::fprintf(stderr, "error: %s\n", misode_last_error());
  return static_cast<int>(status);
}

struct DatagenArgs {
  std::string out, generator = "poly", regime, dump_vocab;
  long count = 0;
  std::uint64_t seed = 0;
  int dims = 0, instances = 0, grid_points = 100, workers = 2, order_max = 3;
  double sigma = 0.0, t0 = 1.0, t1 = 10.0;
};

struct TrainArgs {
  std::string corpus, checkpoint_out, log, resume;
  std::string preset = "toy", aggregator = "mean", schedule = "cosine";
  long steps = 2000, checkpoint_every = 0;
  int batch = 16, workers = 2, dec_layers = 0, enc_layers = 0;
  double lr_max = 0.0, sigma_override = -1.0, clip_norm = 1.0;
  long warmup = -1;
  std::uint64_t seed = 0;
};

struct PredictArgs {
  std::string corpus, checkpoint, out;
  int beam = 20, max_len = 384, instances = 0, workers = 2;
  double temperature = 0.1, sigma = -1.0;
  bool no_rescale = false, stochastic = false, rms_literal = false;
  std::uint64_t seed = 0;
};

struct EvalArgs {
  std::string corpus, out, summary_out, predictions, checkpoint, baseline, tag;
  bool truth = false, no_rescale = false;
  std::vector<double> noise_grid;
  std::vector<int> instance_counts;
  std::uint64_t seed = 0;
  int workers = 2, beam = 20;
  double temperature = 0.1, stlsq_threshold = 0.1;
  int stlsq_degree = 3;
};

struct ReportArgs {
  std::string results, outdir;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"misode - multi-instance symbolic regression for ODE systems"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Plain-text config file (INI; flags take precedence)");

  DatagenArgs dg;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic ODE corpus");
  datagen->add_option("--out", dg.out, "Corpus output path (.jsonl or .jsonl.gz)")
      ->envname("MISODE_CORPUS")
      ->required();
  datagen->add_option("--count", dg.count, "Number of systems")->required();
  datagen->add_option("--seed", dg.seed, "Generation seed")->required();
  datagen->add_option("--generator", dg.generator, "poly | tree");
  datagen->add_option("--regime", dg.regime, "exp1 (D,instances ~ U[1,4]) | exp2 (4 instances)");
  datagen->add_option("--dims", dg.dims, "Fixed dimension (overrides regime)");
  datagen->add_option("--instances", dg.instances, "Fixed instance count (overrides regime)");
  datagen->add_option("--sigma", dg.sigma, "Noise level recorded for model inputs");
  datagen->add_option("--grid-points", dg.grid_points, "Support points per trajectory");
  datagen->add_option("--t0", dg.t0, "Grid start");
  datagen->add_option("--t1", dg.t1, "Grid end");
  datagen->add_option("--order-max", dg.order_max, "Polynomial order cap");
  datagen->add_option("--workers", dg.workers, "Generation threads");
  datagen->add_option("--dump-vocab", dg.dump_vocab, "Also write the vocabulary to this path");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "Train a model on a corpus");
  train->add_option("--corpus", tr.corpus, "Corpus path")->envname("MISODE_CORPUS")->required();
  train->add_option("--checkpoint-out", tr.checkpoint_out, "Checkpoint output path")
      ->envname("MISODE_CHECKPOINT")
      ->required();
  train->add_option("--log", tr.log, "Training log CSV path");
  train->add_option("--resume", tr.resume, "Resume from this checkpoint");
  train->add_option("--preset", tr.preset, "Model preset: toy | paper1 | paper2 | tiny");
  train->add_option("--aggregator", tr.aggregator, "mean | attentive | xattn | timeaware");
  train->add_option("--enc-layers", tr.enc_layers, "Encoder depth override");
  train->add_option("--dec-layers", tr.dec_layers, "Decoder depth override");
  train->add_option("--steps", tr.steps, "Optimizer steps");
  train->add_option("--batch", tr.batch, "Batch size (systems)");
  train->add_option("--schedule", tr.schedule, "cosine | noam");
  train->add_option("--lr-max", tr.lr_max, "Peak learning rate override");
  train->add_option("--warmup", tr.warmup, "Warmup steps override");
  train->add_option("--clip-norm", tr.clip_norm, "Gradient clip (<=0 disables)");
  train->add_option("--sigma", tr.sigma_override, "Input-noise override (<0: per-record sigma)");
  train->add_option("--checkpoint-every", tr.checkpoint_every, "Checkpoint cadence in steps");
  train->add_option("--seed", tr.seed, "Training seed")->required();
  train->add_option("--workers", tr.workers, "Forward/backward threads");

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "Predict symbolic systems for a corpus");
  predict->add_option("--corpus", pr.corpus, "Corpus path")->envname("MISODE_CORPUS")->required();
  predict->add_option("--checkpoint", pr.checkpoint, "Model checkpoint")
      ->envname("MISODE_CHECKPOINT")
      ->required();
  predict->add_option("--out", pr.out, "Predictions JSONL output")
      ->envname("MISODE_PREDICTIONS")
      ->required();
  predict->add_option("--beam", pr.beam, "Beam size");
  predict->add_option("--temperature", pr.temperature, "Beam temperature");
  predict->add_option("--max-len", pr.max_len, "Maximum decode length");
  predict->add_flag("--no-rescale", pr.no_rescale, "Disable shared RMS input rescaling");
  predict->add_flag("--rms-literal", pr.rms_literal,
                    "Use the inverse-RMS convention (inputs scaled up by the RMS)");
  predict->add_flag("--stochastic", pr.stochastic, "Sample beam expansions instead of top-k");
  predict->add_option("--sigma", pr.sigma, "Input-noise override (<0: per-record sigma)");
  predict->add_option("--instances", pr.instances, "Use only the first n instances (0: all)");
  predict->add_option("--seed", pr.seed, "Sampling seed (stochastic mode)");
  predict->add_option("--workers", pr.workers, "Prediction threads");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score predictions / models / baselines");
  eval->add_option("--corpus", ev.corpus, "Corpus path")->envname("MISODE_CORPUS")->required();
  eval->add_option("--out", ev.out, "Results CSV output")->envname("MISODE_RESULTS")->required();
  eval->add_option("--summary-out", ev.summary_out, "Summary CSV output");
  eval->add_option("--predictions", ev.predictions, "Score an existing predictions file");
  eval->add_option("--checkpoint", ev.checkpoint, "Sweep a model over noise x instances");
  eval->add_option("--baseline", ev.baseline, "Run a baseline (stlsq)");
  eval->add_flag("--truth", ev.truth, "Score ground-truth systems as predictions");
  eval->add_option("--noise-grid", ev.noise_grid, "Noise levels (default 0 0.01 0.05 0.1)");
  eval->add_option("--instance-counts", ev.instance_counts, "Instance counts (default 1..4)");
  eval->add_option("--tag", ev.tag, "Tag column value for this run");
  eval->add_option("--beam", ev.beam, "Beam size (model sweep)");
  eval->add_option("--temperature", ev.temperature, "Beam temperature (model sweep)");
  eval->add_flag("--no-rescale", ev.no_rescale, "Disable RMS rescaling (model sweep)");
  eval->add_option("--stlsq-threshold", ev.stlsq_threshold, "STLSQ pruning threshold");
  eval->add_option("--stlsq-degree", ev.stlsq_degree, "STLSQ library degree");
  eval->add_option("--seed", ev.seed, "Evaluation seed")->required();
  eval->add_option("--workers", ev.workers, "Scoring threads");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Render plots and tables from results");
  report->add_option("--results", rp.results, "Results CSV")->envname("MISODE_RESULTS")->required();
  report->add_option("--outdir", rp.outdir, "Output directory")
      ->envname("MISODE_OUTDIR")
      ->required();

  auto* selftest = app.add_subcommand("selftest", "Run the invariant suites");
  std::string selftest_vocab;
  selftest->add_option("--dump-vocab", selftest_vocab, "Also write the vocabulary to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(MISODE_ERR_CONFIG);
  }

  if (datagen->parsed()) {
    json j;
    j["out"] = dg.out;
    j["count"] = dg.count;
    j["seed"] = dg.seed;
    j["generator"] = dg.generator;
    if (!dg.regime.empty()) j["regime"] = dg.regime;
    if (dg.dims > 0) j["dims"] = dg.dims;
    if (dg.instances > 0) j["instances"] = dg.instances;
    j["sigma"] = dg.sigma;
    j["grid_points"] = dg.grid_points;
    j["t0"] = dg.t0;
    j["t1"] = dg.t1;
    j["workers"] = dg.workers;
    j["poly"] = {{"order_max", dg.order_max}};
    if (!dg.dump_vocab.empty()) j["dump_vocab"] = dg.dump_vocab;
    return finish(misode_datagen(j.dump().c_str()));
  }

  if (train->parsed()) {
    json model;
    model["preset"] = tr.preset;
    model["aggregator"] = tr.aggregator;
    if (tr.enc_layers > 0) model["enc_layers"] = tr.enc_layers;
    if (tr.dec_layers > 0) model["dec_layers"] = tr.dec_layers;
    json train_j;
    train_j["steps"] = tr.steps;
    train_j["batch_size"] = tr.batch;
    train_j["schedule"] = tr.schedule;
    train_j["seed"] = tr.seed;
    train_j["workers"] = tr.workers;
    train_j["clip_norm"] = tr.clip_norm;
    train_j["sigma_override"] = tr.sigma_override;
    train_j["checkpoint_every"] = tr.checkpoint_every;
    if (tr.lr_max > 0 || tr.warmup >= 0) {
      json sched;
      if (tr.lr_max > 0) sched["lr_max"] = tr.lr_max;
      if (tr.warmup >= 0) sched["warmup"] = tr.warmup;
      train_j[tr.schedule] = sched;
    }
    json j;
    j["corpus"] = tr.corpus;
    j["checkpoint_out"] = tr.checkpoint_out;
    if (!tr.log.empty()) j["log"] = tr.log;
    if (!tr.resume.empty()) j["resume"] = tr.resume;
    j["model"] = model;
    j["train"] = train_j;
    j["seed"] = tr.seed;
    return finish(misode_train(j.dump().c_str()));
  }

  if (predict->parsed()) {
    json j;
    j["corpus"] = pr.corpus;
    j["checkpoint"] = pr.checkpoint;
    j["out"] = pr.out;
    j["beam"] = {{"size", pr.beam},
                 {"temperature", pr.temperature},
                 {"max_len", pr.max_len},
                 {"stochastic", pr.stochastic},
                 {"seed", pr.seed}};
    j["rescale"] = !pr.no_rescale;
    j["rms_literal"] = pr.rms_literal;
    j["sigma"] = pr.sigma;
    j["instances"] = pr.instances;
    j["workers"] = pr.workers;
    return finish(misode_predict(j.dump().c_str()));
  }

  if (eval->parsed()) {
    json j;
    j["corpus"] = ev.corpus;
    j["out"] = ev.out;
    if (!ev.summary_out.empty()) j["summary_out"] = ev.summary_out;
    if (!ev.predictions.empty()) j["predictions"] = ev.predictions;
    if (!ev.checkpoint.empty()) j["checkpoint"] = ev.checkpoint;
    if (!ev.baseline.empty()) j["baseline"] = ev.baseline;
    if (ev.truth) j["predictor"] = "truth";
    if (!ev.noise_grid.empty()) j["noise_grid"] = ev.noise_grid;
    if (!ev.instance_counts.empty()) j["instance_counts"] = ev.instance_counts;
    if (!ev.tag.empty()) j["tag"] = ev.tag;
    j["beam"] = {{"size", ev.beam}, {"temperature", ev.temperature}};
    j["rescale"] = !ev.no_rescale;
    j["stlsq"] = {{"threshold", ev.stlsq_threshold}, {"degree", ev.stlsq_degree}};
    j["seed"] = ev.seed;
    j["workers"] = ev.workers;
    return finish(misode_eval(j.dump().c_str()));
  }

  if (report->parsed()) {
    json j;
    j["results"] = rp.results;
    j["outdir"] = rp.outdir;
    return finish(misode_report(j.dump().c_str()));
  }

  if (selftest->parsed()) {
    if (!selftest_vocab.empty()) {
      const misode_status s = misode_dump_vocab(selftest_vocab.c_str());
      if (s != MISODE_OK) return finish(s);
    }
    int failures = 0;
    return finish(misode_selftest(&failures));
  }

  return static_cast<int>(MISODE_ERR_CONFIG);
}
