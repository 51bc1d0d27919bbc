#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "corpus_io.hpp"
#include "infer.hpp"

using namespace misode;

namespace {

Trajectory flat_instance(std::initializer_list<double> initial) {
  Trajectory t;
  t.times = {1.0, 2.0, 3.0};
  const std::vector<double> row(initial);
  t.states = {row, row, row};
  return t;
}

ModelConfig small_model_config() {
  ModelConfig cfg = ModelConfig::tiny_gradcheck();
  cfg.vocab_size = Vocab::instance().size();
  cfg.max_points = 40;
  cfg.max_target = 64;
  return cfg;
}

std::vector<SystemRecord> tiny_corpus(std::uint64_t seed, double sigma = 0.0) {
  CorpusConfig cfg;
  cfg.count = 3;
  cfg.seed = seed;
  cfg.dim_min = cfg.dim_max = 1;
  cfg.instances_min = cfg.instances_max = 3;
  cfg.sigma = sigma;
  cfg.grid_points = 20;
  cfg.workers = 1;
  return build_corpus(cfg).records;
}

}  // namespace

TEST_SUITE("infer") {

TEST_CASE("rms scaling matches the hand-computed example") {
  const auto scaled = rms_scale({flat_instance({3.0}), flat_instance({4.0})});
  CHECK(scaled.scale == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
  CHECK(scaled.instances[0].states[0][0] == doctest::Approx(0.848528).epsilon(1e-5));
  CHECK(scaled.instances[1].states[0][0] == doctest::Approx(1.131371).epsilon(1e-5));
  // unit RMS after scaling
  double ss = 0;
  for (const auto& t : scaled.instances) ss += t.states[0][0] * t.states[0][0];
  CHECK(std::sqrt(ss / 2.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rms scaling edge cases") {
  const auto one = rms_scale({flat_instance({1.0})});
  CHECK(one.scale == 1.0);
  CHECK(one.instances[0].states[0][0] == 1.0);

  const auto sym = rms_scale({flat_instance({20.0}), flat_instance({-20.0})});
  CHECK(sym.scale == doctest::Approx(20.0).epsilon(1e-12));

  const auto zeros = rms_scale({flat_instance({0.0, 0.0})});
  CHECK(zeros.scale == 1.0);
}

TEST_CASE("scaling then multiplying back reproduces inputs") {
  Rng rng(3);
  Trajectory t;
  t.times = uniform_grid(1.0, 10.0, 30);
  for (std::size_t i = 0; i < t.times.size(); ++i) t.states.push_back({rng.normal() * 5, rng.normal()});
  const auto scaled = rms_scale({t});
  for (std::size_t i = 0; i < t.times.size(); ++i)
    for (int d = 0; d < 2; ++d) {
      const double back = scaled.instances[0].states[i][d] * scaled.scale;
      CHECK(back == doctest::Approx(t.states[i][d]).epsilon(1e-12));
    }
}

TEST_CASE("unscale_system realizes the chain rule symbolically") {
  OdeSystem sys;
  sys.dim = 1;
  sys.equations.push_back(Expr::unary(ExprKind::Square, Expr::variable(0)));
  // f~(x~) = x~^2 with R=2 -> f(x) = x^2/2
  const OdeSystem out = unscale_system(sys, 2.0);
  for (double x : {0.5, 1.0, -3.0, 7.0}) {
    const std::vector<double> v = {x};
    CHECK(out.equations[0].eval(v) == doctest::Approx(x * x / 2.0).epsilon(1e-12));
  }

  OdeSystem linear;
  linear.dim = 1;
  linear.equations.push_back(
      Expr::binary(ExprKind::Mul, Expr::constant(-1.0), Expr::variable(0)));
  for (double R : {0.25, 1.0, 3.0, 17.5}) {
    const OdeSystem u = unscale_system(linear, R);
    for (double x : {0.1, -2.0, 5.0}) {
      const std::vector<double> v = {x};
      CHECK(u.equations[0].eval(v) == doctest::Approx(-x).epsilon(1e-12));
    }
  }

  CHECK(structurally_equal(unscale_system(sys, 1.0), sys));  // R=1 identity
  CHECK_THROWS_AS(unscale_system(sys, 0.0), DataError);
}

TEST_CASE("constant folding keeps values and collapses constant subtrees") {
  const Expr e = Expr::binary(
      ExprKind::Mul, Expr::constant(2.0),
      Expr::binary(ExprKind::Mul, Expr::constant(3.0),
                   Expr::binary(ExprKind::Add, Expr::variable(0), Expr::constant(1.0))));
  const Expr folded = fold_constants(e);
  CHECK(folded.children()[0].kind() == ExprKind::Constant);
  CHECK(folded.children()[0].value() == 6.0);
  const std::vector<double> x = {2.0};
  CHECK(folded.eval(x) == e.eval(x));

  const Expr all_const = Expr::unary(
      ExprKind::Sin, Expr::binary(ExprKind::Add, Expr::constant(1.0), Expr::constant(2.0)));
  const Expr fc = fold_constants(all_const);
  CHECK(fc.kind() == ExprKind::Constant);
  CHECK(fc.value() == doctest::Approx(std::sin(3.0)).epsilon(1e-15));

  // singular fold attempts stay symbolic instead of producing non-finite constants
  const Expr inv0 = Expr::unary(ExprKind::Inverse, Expr::constant(0.0));
  CHECK(fold_constants(inv0).kind() == ExprKind::Inverse);
}

TEST_CASE("beam size one reduces to greedy decoding") {
  Model<float> model(small_model_config(), 31);
  const auto corpus = tiny_corpus(41);
  const Vocab& vocab = Vocab::instance();
  std::vector<SlottedTokens> inputs;
  for (const auto& inst : corpus[0].instances)
    inputs.push_back(slot_trajectory_tokens(encode_trajectory(inst, vocab), 1, model.config().d_max));
  const Tensor<float> memory = model.encode_and_aggregate(inputs);

  BeamConfig bc;
  bc.beam_size = 1;
  bc.max_len = 12;
  const auto beam = beam_decode(model, memory, bc);
  REQUIRE(beam.size() == 1);

  // manual greedy rollout
  std::vector<int> greedy = {vocab.bos_id()};
  for (int step = 0; step < 12; ++step) {
    const auto logits = model.decode_step(memory, greedy);
    int best = 0;
    for (int i = 1; i < model.config().vocab_size; ++i)
      if (logits.at(0, i) > logits.at(0, best)) best = i;
    greedy.push_back(best);
    if (best == vocab.eos_id()) break;
  }
  CHECK(beam[0].ids == greedy);
}

TEST_CASE("beam scores are sorted non-increasing and candidates well-formed or flagged") {
  Model<float> model(small_model_config(), 32);
  const auto corpus = tiny_corpus(42);
  const Vocab& vocab = Vocab::instance();
  std::vector<SlottedTokens> inputs;
  for (const auto& inst : corpus[1].instances)
    inputs.push_back(slot_trajectory_tokens(encode_trajectory(inst, vocab), 1, model.config().d_max));
  const Tensor<float> memory = model.encode_and_aggregate(inputs);

  BeamConfig bc;
  bc.beam_size = 5;
  bc.max_len = 16;
  const auto beam = beam_decode(model, memory, bc);
  REQUIRE(!beam.empty());
  for (std::size_t i = 1; i < beam.size(); ++i) CHECK(beam[i - 1].score >= beam[i].score);
  for (const auto& cand : beam) {
    CHECK(cand.ids.front() == vocab.bos_id());
    if (cand.complete)
      CHECK(cand.ids.back() == vocab.eos_id());
    else
      CHECK(static_cast<int>(cand.ids.size()) >= bc.max_len);  // ran out of budget
  }

  // a larger beam keeps the smaller beam's best completion and never scores worse
  BeamConfig big = bc;
  big.beam_size = 10;
  const auto wide = beam_decode(model, memory, big);
  bool top_found = false;
  for (const auto& w : wide) top_found |= w.ids == beam[0].ids;
  CHECK(top_found);
  CHECK(wide[0].score >= beam[0].score - 1e-12);
}

TEST_CASE("invalid beam configs are rejected") {
  CHECK_THROWS_AS(
      beam_decode(Model<float>(small_model_config(), 1), Tensor<float>(4, 32),
                  BeamConfig{0, 0.1, 10, false, 0}),
      ConfigError);
  CHECK_THROWS_AS(
      beam_decode(Model<float>(small_model_config(), 1), Tensor<float>(4, 32),
                  BeamConfig{2, 0.0, 10, false, 0}),
      ConfigError);
}

TEST_CASE("predict reports R, respects the rescale flag and permutation invariance") {
  Model<float> model(small_model_config(), 33);
  auto records = tiny_corpus(43);
  SystemRecord rec = records[0];

  PredictConfig cfg;
  cfg.beam.beam_size = 2;
  cfg.beam.max_len = 16;
  const Prediction with_scale = predict(model, rec, cfg);
  CHECK(with_scale.rms != 1.0);  // standard-normal initials are almost never unit RMS

  cfg.rescale = false;
  const Prediction without = predict(model, rec, cfg);
  CHECK(without.rms == 1.0);

  cfg.rescale = true;
  cfg.rms_literal = true;  // inverse convention: R is the reciprocal
  const Prediction literal = predict(model, rec, cfg);
  CHECK(literal.rms == doctest::Approx(1.0 / with_scale.rms).epsilon(1e-12));
  cfg.rms_literal = false;

  // mean aggregation: instance order does not change the decoded tokens
  cfg.rescale = true;
  SystemRecord swapped = rec;
  std::swap(swapped.instances[0], swapped.instances[2]);
  // keep the per-instance noise assignment out of the picture (sigma = 0)
  const Prediction a = predict(model, rec, cfg);
  const Prediction b = predict(model, swapped, cfg);
  REQUIRE(a.candidates.size() == b.candidates.size());
  CHECK(a.candidates[0].ids == b.candidates[0].ids);
}

TEST_CASE("predictions file round trip") {
  Model<float> model(small_model_config(), 34);
  auto records = tiny_corpus(44);
  PredictConfig cfg;
  cfg.beam.beam_size = 2;
  cfg.beam.max_len = 16;
  std::vector<Prediction> preds;
  for (const auto& r : records) preds.push_back(predict(model, r, cfg));
  // ensure at least one parseable prediction exists for the round trip by
  // injecting the ground truth for record 0
  preds[0].ok = true;
  preds[0].system = records[0].system;
  preds[0].failure.clear();

  const std::string path = "/tmp/misode_predictions_test.jsonl";
  save_predictions(preds, path);
  const auto rows = load_predictions(path);
  REQUIRE(rows.size() == preds.size());
  CHECK(rows[0].ok);
  CHECK(structurally_equal(rows[0].system, records[0].system));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].id == preds[i].system_id);
    CHECK(rows[i].ok == preds[i].ok);
  }
  std::remove(path.c_str());
}

}  // TEST_SUITE
