#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "model.hpp"

using namespace misode;

namespace {

std::vector<int> random_slot_tokens(Rng& rng, int points, int dim, int vocab) {
  std::vector<int> tokens;
  for (int p = 0; p < points * 3 * (dim + 1); ++p)
    tokens.push_back(static_cast<int>(rng.uniform_int(0, vocab - 1)));
  return tokens;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  double m = 0;
  for (long i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

struct Fixture {
  ModelConfig cfg = ModelConfig::tiny_gradcheck();
  Rng rng{202};
  int s = 8, n = 3, dim = 2;
  std::vector<SlottedTokens> instances;
  std::vector<int> target = {1, 4, 7, 2, 9, 3};

  Fixture() {
    for (int j = 0; j < n; ++j)
      instances.push_back(
          slot_trajectory_tokens(random_slot_tokens(rng, s, dim, cfg.vocab_size), dim, cfg.d_max));
  }
};

}  // namespace

TEST_SUITE("model") {

TEST_CASE("slot layout pads missing dimensions with -1") {
  std::vector<int> tokens(5 * 3 * 3);  // s=5, D=2 -> 9 tokens per point
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i % 11);
  const SlottedTokens slots = slot_trajectory_tokens(tokens, 2, 4);
  CHECK(slots.points == 5);
  CHECK(slots.slots == 15);  // 3 * (4 + 1)
  for (long p = 0; p < 5; ++p) {
    for (long i = 0; i < 9; ++i) CHECK(slots.slot_ids[p * 15 + i] == tokens[p * 9 + i]);
    for (long i = 9; i < 15; ++i) CHECK(slots.slot_ids[p * 15 + i] == -1);
  }
  CHECK_THROWS_AS(slot_trajectory_tokens(tokens, 5, 4), DataError);   // dim > d_max
  CHECK_THROWS_AS(slot_trajectory_tokens({1, 2, 3}, 2, 4), DataError);  // wrong length
}

TEST_CASE("embedder and encoder produce (s, d_enc)") {
  Fixture f;
  Model<float> model(f.cfg, 1);
  Graph<float> g(false);
  const auto h = model.embed_trajectory(g, f.instances[0]);
  CHECK(g.value(h).rows() == f.s);
  CHECK(g.value(h).cols() == f.cfg.d_enc);
  const auto z = model.encode(g, h);
  CHECK(g.value(z).rows() == f.s);
  CHECK(g.value(z).cols() == f.cfg.d_enc);
}

TEST_CASE("embedder feedforward input width is 3*(d_max+1)*d_enc") {
  ModelConfig cfg = ModelConfig::toy();
  Model<float> model(cfg, 1);
  CHECK(model.parameter("embedder.ff1.W")->value.rows() == 15 * cfg.d_enc);
}

TEST_CASE("eval-mode forward passes are bit-identical") {
  Fixture f;
  Model<float> model(f.cfg, 2);
  const auto a = model.eval_logits(f.instances, f.target);
  const auto b = model.eval_logits(f.instances, f.target);
  CHECK(max_abs_diff(a, b) == 0.0);
}

TEST_CASE("mean aggregation with one instance is the identity") {
  Fixture f;
  Model<float> model(f.cfg, 3);
  Graph<float> g(false);
  const auto z = model.encode(g, model.embed_trajectory(g, f.instances[0]));
  const auto zbar = model.aggregate_mean(g, {z});
  CHECK(max_abs_diff(g.value(z), g.value(zbar)) == 0.0);
}

TEST_CASE("mean aggregation averages and cancels opposites") {
  Fixture f;
  Model<float> model(f.cfg, 3);
  Graph<float> g(false);
  Tensor<float> a(4, f.cfg.d_enc), b(4, f.cfg.d_enc);
  Rng rng(5);
  for (long i = 0; i < a.size(); ++i) {
    a.data()[i] = static_cast<float>(rng.normal());
    b.data()[i] = -a.data()[i];
  }
  const auto zbar = model.aggregate_mean(g, {g.input(a), g.input(b)});
  double m = 0;
  for (long i = 0; i < g.value(zbar).size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(g.value(zbar).data()[i])));
  CHECK(m == 0.0);
  CHECK_THROWS_AS(model.aggregate_mean(g, {}), std::invalid_argument);
}

TEST_CASE("permutation invariance of logits for every aggregator") {
  Fixture f;
  for (AggKind kind : {AggKind::Mean, AggKind::Attentive, AggKind::XAttnTimeAgnostic,
                       AggKind::AttnTimeAware}) {
    ModelConfig cfg = f.cfg;
    cfg.aggregator = kind;
    Model<float> model(cfg, 4);
    const auto base = model.eval_logits(f.instances, f.target);
    std::vector<SlottedTokens> perm = {f.instances[1], f.instances[2], f.instances[0]};
    const auto permuted = model.eval_logits(perm, f.target);
    CHECK_MESSAGE(max_abs_diff(base, permuted) <= 1e-5, agg_name(kind));
  }
}

TEST_CASE("attentive weights live on the simplex and reduce to [1] for n=1") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::Attentive;
  Model<float> model(cfg, 6);
  std::vector<double> w;
  model.encode_and_aggregate(f.instances, &w);
  REQUIRE(w.size() == 3);
  double sum = 0;
  for (double x : w) {
    CHECK(x >= 0.0);
    sum += x;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));

  std::vector<double> w1;
  model.encode_and_aggregate({f.instances[0]}, &w1);
  REQUIRE(w1.size() == 1);
  CHECK(w1[0] == doctest::Approx(1.0).epsilon(1e-7));

  // permuting instances permutes the weights identically
  std::vector<double> wp;
  model.encode_and_aggregate({f.instances[2], f.instances[0], f.instances[1]}, &wp);
  CHECK(wp[0] == doctest::Approx(w[2]).epsilon(1e-4));
  CHECK(wp[1] == doctest::Approx(w[0]).epsilon(1e-4));
}

TEST_CASE("attentive n=1 aggregation returns Z_1") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::Attentive;
  Model<float> model(cfg, 6);
  Graph<float> g(false);
  const auto z = model.encode(g, model.embed_trajectory(g, f.instances[0]));
  const auto zbar = model.aggregate_attentive(g, {z}, nullptr);
  CHECK(max_abs_diff(g.value(z), g.value(zbar)) <= 1e-7);
}

TEST_CASE("time-agnostic pooling with n=1 is the value projection path") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::XAttnTimeAgnostic;
  Model<float> model(cfg, 7);
  Graph<float> g(false);
  Rng rng(9);
  Tensor<float> z(f.s, cfg.d_enc);
  for (long i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.normal());
  const auto zi = g.input(z);
  const auto zbar = model.aggregate_xattn_time_agnostic(g, {zi});
  const auto expect = g.linear(
      g.linear(zi, g.param(*model.parameter("agg.xattn.v.W")),
               g.param(*model.parameter("agg.xattn.v.b"))),
      g.param(*model.parameter("agg.xattn.o.W")), g.param(*model.parameter("agg.xattn.o.b")));
  CHECK(max_abs_diff(g.value(zbar), g.value(expect)) <= 1e-6);
}

TEST_CASE("time-agnostic pooling is per-time-index independent") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::XAttnTimeAgnostic;
  Model<float> model(cfg, 8);
  Rng rng(10);
  Tensor<float> z1(f.s, cfg.d_enc), z2(f.s, cfg.d_enc);
  for (long i = 0; i < z1.size(); ++i) {
    z1.data()[i] = static_cast<float>(rng.normal());
    z2.data()[i] = static_cast<float>(rng.normal());
  }
  Graph<float> g1(false);
  const auto out1 = g1.value(model.aggregate_xattn_time_agnostic(g1, {g1.input(z1), g1.input(z2)}));
  // perturb one time index of one instance
  Tensor<float> z1b = z1;
  const long t_edit = 3;
  for (long c = 0; c < cfg.d_enc; ++c) z1b.at(t_edit, c) += 1.5f;
  Graph<float> g2(false);
  const auto out2 = g2.value(model.aggregate_xattn_time_agnostic(g2, {g2.input(z1b), g2.input(z2)}));
  for (long t = 0; t < f.s; ++t)
    for (long c = 0; c < cfg.d_enc; ++c) {
      if (t == t_edit) continue;
      CHECK(out1.at(t, c) == out2.at(t, c));
    }
  double changed = 0;
  for (long c = 0; c < cfg.d_enc; ++c)
    changed = std::max(changed, std::abs(static_cast<double>(out1.at(t_edit, c) - out2.at(t_edit, c))));
  CHECK(changed > 0.0);
}

TEST_CASE("time-aware pooling returns (s, d_enc) and needs no instance positions") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::AttnTimeAware;
  Model<float> model(cfg, 11);
  Graph<float> g(false);
  std::vector<Graph<float>::Id> zs;
  Rng rng(12);
  for (int j = 0; j < 3; ++j) {
    Tensor<float> z(f.s, cfg.d_enc);
    for (long i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.normal());
    zs.push_back(g.input(z));
  }
  const auto zbar = model.aggregate_attn_time_aware(g, zs);
  CHECK(g.value(zbar).rows() == f.s);
  CHECK(g.value(zbar).cols() == cfg.d_enc);
  // joint permutation of latents (condensed latents follow automatically)
  const auto permuted = model.aggregate_attn_time_aware(g, {zs[2], zs[0], zs[1]});
  CHECK(max_abs_diff(g.value(zbar), g.value(permuted)) <= 1e-5);
}

TEST_CASE("condense_time is sensitive to time order") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::Attentive;
  Model<float> model(cfg, 13);
  Rng rng(14);
  Tensor<float> z(f.s, cfg.d_enc);
  for (long i = 0; i < z.size(); ++i) z.data()[i] = static_cast<float>(rng.normal());
  Tensor<float> reversed(f.s, cfg.d_enc);
  for (long t = 0; t < f.s; ++t)
    for (long c = 0; c < cfg.d_enc; ++c) reversed.at(t, c) = z.at(f.s - 1 - t, c);
  Graph<float> g(false);
  const auto a = g.value(model.condense_time(g, g.input(z)));
  const auto b = g.value(model.condense_time(g, g.input(reversed)));
  CHECK(a.rows() == 1);
  CHECK(a.cols() == cfg.d_enc);
  CHECK(max_abs_diff(a, b) > 1e-4);
}

TEST_CASE("decoder is causal: later target edits leave earlier logits unchanged") {
  Fixture f;
  Model<float> model(f.cfg, 15);
  const auto base = model.eval_logits(f.instances, f.target);
  auto edited = f.target;
  edited.back() = (edited.back() + 1) % f.cfg.vocab_size;
  const auto changed = model.eval_logits(f.instances, edited);
  const long k = static_cast<long>(f.target.size()) - 1;
  for (long r = 0; r < k; ++r)
    for (long c = 0; c < f.cfg.vocab_size; ++c) CHECK(base.at(r, c) == changed.at(r, c));
  CHECK(base.rows() == static_cast<long>(f.target.size()));
  CHECK(base.cols() == f.cfg.vocab_size);
}

TEST_CASE("decode rejects over-long targets") {
  Fixture f;
  Model<float> model(f.cfg, 16);
  std::vector<int> target(f.cfg.max_target + 2, 1);
  Graph<float> g(false);
  Tensor<float> mem(f.s, f.cfg.d_dec);
  CHECK_THROWS_AS(model.decode_logits(g, g.input(mem), target), DataError);
}

TEST_CASE("checkpoint round trip restores parameters and config") {
  Fixture f;
  ModelConfig cfg = f.cfg;
  cfg.aggregator = AggKind::Attentive;
  Model<float> model(cfg, 17);
  const std::string path = "/tmp/misode_ckpt_test.bin";
  model.save(path, {{"probe", Tensor<float>(2, 2)}}, 42);

  auto loaded = Model<float>::load(path);
  CHECK(loaded.step == 42);
  CHECK(loaded.model->config().to_json() == cfg.to_json());
  REQUIRE(loaded.extra.size() == 1);
  CHECK(loaded.extra[0].first == "probe");
  const auto params = model.parameters();
  const auto lparams = loaded.model->parameters();
  REQUIRE(params.size() == lparams.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i]->name == lparams[i]->name);
    CHECK(max_abs_diff(params[i]->value, lparams[i]->value) == 0.0);
  }

  // identical forward behavior
  const auto a = model.eval_logits(f.instances, f.target);
  const auto b = loaded.model->eval_logits(f.instances, f.target);
  CHECK(max_abs_diff(a, b) == 0.0);

  CHECK_THROWS_AS(Model<double>::load(path), DataError);  // dtype mismatch
  std::remove(path.c_str());
  CHECK_THROWS_AS(Model<float>::load(path), DataError);   // missing file
}

TEST_CASE("spot finite-difference check across all parameter groups (mean)") {
  ModelConfig cfg = ModelConfig::tiny_gradcheck();
  Model<double> model(cfg, 18);
  Rng jitter(19);
  for (Param<double>* p : model.parameters())
    for (long i = 0; i < p->value.size(); ++i) p->value.data()[i] += 0.05 * jitter.normal();

  Rng rng(20);
  std::vector<SlottedTokens> instances;
  for (int j = 0; j < 2; ++j)
    instances.push_back(
        slot_trajectory_tokens(random_slot_tokens(rng, 8, 1, cfg.vocab_size), 1, cfg.d_max));
  const std::vector<int> target = {1, 6, 3, 9, 2};

  Graph<double> g(true);
  const auto loss = model.system_loss(g, instances, target);
  g.backward(loss);
  std::vector<std::pair<Param<double>*, Tensor<double>>> grads;
  for (const auto& [p, id] : g.params_used()) grads.emplace_back(p, g.grad(id));

  auto eval = [&]() {
    Graph<double> ng(false);
    return ng.value(model.system_loss(ng, instances, target)).at(0, 0);
  };

  const double h = 1e-5;
  Rng pick(21);
  for (const auto& [p, grad] : grads) {
    for (int probe = 0; probe < 3; ++probe) {
      const long i = pick.uniform_int(0, p->value.size() - 1);
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + h;
      const double up = eval();
      p->value.data()[i] = keep - h;
      const double down = eval();
      p->value.data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double a = grad.data()[i];
      CHECK_MESSAGE(std::abs(a - fd) <= 1e-4 * std::max({1.0, std::abs(a), std::abs(fd)}),
                    p->name, "[", i, "] analytic ", a, " fd ", fd);
    }
  }
}

}  // TEST_SUITE
