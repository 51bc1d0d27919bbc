#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "corpus_io.hpp"
#include "train.hpp"

using namespace misode;

namespace {

std::vector<SystemRecord> toy_corpus(long count, std::uint64_t seed, int grid_points = 20) {
  CorpusConfig cfg;
  cfg.count = count;
  cfg.seed = seed;
  cfg.dim_min = cfg.dim_max = 1;
  cfg.instances_min = 1;
  cfg.instances_max = 2;
  cfg.grid_points = grid_points;
  cfg.workers = 2;
  return build_corpus(cfg).records;
}

ModelConfig small_model_config() {
  ModelConfig cfg = ModelConfig::tiny_gradcheck();
  cfg.vocab_size = Vocab::instance().size();
  cfg.max_points = 32;
  cfg.max_target = 64;
  return cfg;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("cosine schedule hits the documented values") {
  CosineScheduleConfig cfg;
  CHECK(cosine_schedule(0, cfg) == 0.0);
  CHECK(cosine_schedule(500, cfg) == doctest::Approx(1e-4).epsilon(1e-12));  // linear warmup
  CHECK(cosine_schedule(1000, cfg) == doctest::Approx(2e-4).epsilon(1e-12));
  const CosineCycle second = cosine_cycle_at(1000 + 30000, cfg);
  CHECK(second.peak == doctest::Approx(1.5e-4).epsilon(1e-12));
  CHECK(second.length == doctest::Approx(33000.0).epsilon(1e-12));
  CHECK(cosine_schedule(31000, cfg) == doctest::Approx(1.5e-4).epsilon(1e-9));
  // decays toward lr_min within a cycle
  CHECK(cosine_schedule(1000 + 15000, cfg) < 2e-4);
  CHECK(cosine_schedule(1000 + 29999, cfg) > cfg.lr_min);
}

TEST_CASE("noam schedule peaks at warmup and halves at 4x warmup") {
  NoamScheduleConfig cfg;
  CHECK(noam_schedule(0, cfg) == 0.0);
  CHECK(noam_schedule(2000, cfg) == doctest::Approx(cfg.lr_max).epsilon(1e-15));
  CHECK(noam_schedule(8000, cfg) == doctest::Approx(cfg.lr_max / 2).epsilon(1e-15));
  for (long s = 1; s < 2000; s += 100) CHECK(noam_schedule(s, cfg) < noam_schedule(s + 100, cfg));
  for (long s = 2000; s < 10000; s += 500)
    CHECK(noam_schedule(s, cfg) >= noam_schedule(s + 500, cfg));
}

TEST_CASE("batcher is deterministic and covers the corpus") {
  Batcher a(10, 3, 77), b(10, 3, 77);
  std::set<std::size_t> seen;
  for (int i = 0; i < 4; ++i) {
    const auto ba = a.next();
    const auto bb = b.next();
    CHECK(ba == bb);
    seen.insert(ba.begin(), ba.end());
  }
  CHECK(seen.size() == 10);  // one epoch covers everything
  Batcher c(10, 3, 78);
  bool any_different = false;
  Batcher a2(10, 3, 77);
  for (int i = 0; i < 4; ++i) any_different |= (a2.next() != c.next());
  CHECK(any_different);
}

TEST_CASE("batch layout flattens and regroups losslessly") {
  SystemRecord r1, r2, r3;
  Trajectory t;
  t.times = {1.0, 2.0};
  t.states = {{0.0}, {0.0}};
  r1.instances = {t};
  r2.instances = {t, t};
  r3.instances = {t, t, t, t};
  const std::vector<const SystemRecord*> batch = {&r1, &r2, &r3};
  const BatchLayout layout = make_batch_layout(batch);
  CHECK(layout.total_instances == 7);
  CHECK(layout.groups.size() == 3);
  CHECK(layout.instance_counts == std::vector<int>{1, 2, 4});
  // scatter -> gather round trip
  int flat = 0;
  for (std::size_t s = 0; s < layout.groups.size(); ++s)
    for (std::size_t i = 0; i < layout.groups[s].size(); ++i, ++flat) {
      CHECK(layout.groups[s][i] == flat);
      CHECK(layout.flat[flat] == std::pair<int, int>(static_cast<int>(s), static_cast<int>(i)));
    }

  SystemRecord empty;
  const std::vector<const SystemRecord*> bad = {&empty};
  CHECK_THROWS_AS(make_batch_layout(bad), DataError);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const auto corpus = toy_corpus(4, 3);
  Model<float> model(small_model_config(), 5);
  TrainConfig tcfg;
  tcfg.steps = 1;
  tcfg.batch_size = 2;
  tcfg.seed = 1;
  tcfg.workers = 2;
  tcfg.schedule = ScheduleKind::Cosine;
  tcfg.cosine.lr_max = 0.0;
  tcfg.cosine.lr_min = 0.0;
  Trainer<float> trainer(model, tcfg);
  trainer.prepare(corpus);
  std::vector<Tensor<float>> before;
  for (Param<float>* p : model.parameters()) before.push_back(p->value);
  const long count_before = model.parameter_count();
  trainer.step_on({0, 1}, 0);
  CHECK(model.parameter_count() == count_before);  // steps never reshape parameters
  const auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i]->value.rows() == before[i].rows());
    CHECK(params[i]->value.cols() == before[i].cols());
    for (long k = 0; k < params[i]->value.size(); ++k)
      CHECK(params[i]->value.data()[k] == before[i].data()[k]);
  }
}

TEST_CASE("same seed reproduces the loss curve exactly") {
  const auto corpus = toy_corpus(6, 4);
  std::vector<double> curve_a, curve_b;
  for (int run = 0; run < 2; ++run) {
    Model<float> model(small_model_config(), 7);
    TrainConfig tcfg;
    tcfg.steps = 4;
    tcfg.batch_size = 3;
    tcfg.seed = 99;
    tcfg.workers = 2;
    Trainer<float> trainer(model, tcfg);
    trainer.prepare(corpus);
    Batcher batcher(trainer.prepared_count(), tcfg.batch_size, tcfg.seed);
    for (long s = 0; s < tcfg.steps; ++s) {
      const auto r = trainer.step_on(batcher.next(), s);
      (run == 0 ? curve_a : curve_b).push_back(r.loss);
    }
  }
  CHECK(curve_a == curve_b);
}

TEST_CASE("loss on a fixed toy batch halves within 200 steps") {
  const auto corpus = toy_corpus(4, 8);
  Model<float> model(small_model_config(), 9);
  TrainConfig tcfg;
  tcfg.steps = 200;
  tcfg.batch_size = 4;
  tcfg.seed = 2;
  tcfg.workers = 2;
  tcfg.schedule = ScheduleKind::Cosine;
  tcfg.cosine.warmup = 20;
  tcfg.cosine.cycle = 100000;
  tcfg.cosine.lr_max = 2e-3;
  Trainer<float> trainer(model, tcfg);
  trainer.prepare(corpus);
  const std::vector<std::size_t> batch = {0, 1, 2, 3};
  double first = 0, last = 0;
  for (long s = 0; s < tcfg.steps; ++s) {
    const auto r = trainer.step_on(batch, s);
    if (s == 0) first = r.loss;
    last = r.loss;
  }
  CHECK(last <= 0.5 * first);
}

TEST_CASE("training log is written and resume continues the schedule") {
  const auto corpus = toy_corpus(6, 10);
  const std::string ckpt = "/tmp/misode_train_resume.bin";
  const std::string log_a = "/tmp/misode_train_a.csv";
  const std::string log_b = "/tmp/misode_train_b.csv";

  TrainConfig tcfg;
  tcfg.steps = 6;
  tcfg.batch_size = 3;
  tcfg.seed = 55;
  tcfg.workers = 2;
  tcfg.log_path = log_a;
  tcfg.checkpoint_path = ckpt;

  // straight 6-step run
  Model<float> straight(small_model_config(), 12);
  Trainer<float> t1(straight, tcfg);
  t1.prepare(corpus);
  t1.run();

  // 3 steps, checkpoint, resume for the rest
  TrainConfig half = tcfg;
  half.steps = 3;
  half.log_path.clear();
  Model<float> part(small_model_config(), 12);
  Trainer<float> t2(part, half);
  t2.prepare(corpus);
  t2.run();

  auto loaded = Model<float>::load(ckpt);
  CHECK(loaded.step == 3);
  TrainConfig rest = tcfg;
  rest.log_path = log_b;
  Trainer<float> t3(*loaded.model, rest);
  t3.load_optimizer_state(loaded.extra);
  t3.prepare(corpus);
  t3.run(loaded.step);

  // resumed parameters equal the straight run's
  const auto pa = straight.parameters();
  const auto pb = loaded.model->parameters();
  double max_diff = 0;
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (long k = 0; k < pa[i]->value.size(); ++k)
      max_diff = std::max(max_diff, std::abs(static_cast<double>(pa[i]->value.data()[k]) -
                                             static_cast<double>(pb[i]->value.data()[k])));
  CHECK(max_diff <= 1e-6);

  std::ifstream log(log_b);
  REQUIRE(log.good());
  std::string line;
  std::getline(log, line);  // resumed log appends rows starting at step 3
  CHECK(line.rfind("3,", 0) == 0);

  std::remove(ckpt.c_str());
  std::remove((ckpt + ".manifest.json").c_str());
  std::remove(log_a.c_str());
  std::remove(log_b.c_str());
}

TEST_CASE("non-finite losses abort with the offending record ids") {
  const auto corpus = toy_corpus(2, 13);
  Model<float> model(small_model_config(), 14);
  // poison one parameter
  model.parameter("head.W")->value.at(0, 0) = std::numeric_limits<float>::quiet_NaN();
  TrainConfig tcfg;
  tcfg.steps = 1;
  tcfg.batch_size = 2;
  tcfg.seed = 1;
  Trainer<float> trainer(model, tcfg);
  trainer.prepare(corpus);
  CHECK_THROWS_AS(trainer.step_on({0, 1}, 0), RuntimeFailure);
}

}  // TEST_SUITE
