#include "selftest.hpp"

#include <cmath>
#include <functional>
#include <ostream>
#include <sstream>

#include "baseline.hpp"
#include "datagen.hpp"
#include "eval.hpp"
#include "infer.hpp"
#include "model.hpp"
#include "train.hpp"

namespace misode {

namespace {

struct Checker {
  std::vector<CheckResult> results;
  bool current_ok = true;
  std::string current_detail;

  void expect(bool ok, const std::string& what) {
    if (!ok && current_ok) {
      current_ok = false;
      current_detail = what;
    }
  }
  void expect_near(double got, double want, double tol, const std::string& what) {
    expect(std::abs(got - want) <= tol,
           what + ": got " + std::to_string(got) + ", want " + std::to_string(want));
  }
  void run(const std::string& name, const std::function<void(Checker&)>& fn) {
    current_ok = true;
    current_detail.clear();
    try {
      fn(*this);
    } catch (const std::exception& e) {
      current_ok = false;
      current_detail = std::string("exception: ") + e.what();
    }
    results.push_back({name, current_ok, current_detail});
  }
};

long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

std::vector<int> random_trajectory_tokens(Rng& rng, int points, int dim) {
  const Vocab& v = Vocab::instance();
  std::vector<int> tokens;
  for (int p = 0; p < points; ++p)
    for (int c = 0; c < 3 * (dim + 1); ++c) {
      const int kind = c % 3;
      if (kind == 0)
        tokens.push_back(v.sign_id(rng.coin()));
      else if (kind == 1)
        tokens.push_back(v.mantissa_id(1000 + static_cast<int>(rng.uniform_int(0, 8999))));
      else
        tokens.push_back(v.exponent_id(static_cast<int>(rng.uniform_int(-5, 5))));
    }
  return tokens;
}

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b) {
  double m = 0;
  for (long i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

}  // namespace

std::vector<CheckResult> run_selftest() {
  Checker c;

  c.run("vocab layout", [](Checker& c) {
    const Vocab& v = Vocab::instance();
    c.expect(v.numeric_count() == 10203, "numeric sub-vocabulary must be 10203");
    c.expect(v.size() == 10219, "total vocabulary must be 10219");
    c.expect(Vocab::build().hash() == Vocab::build().hash(), "rebuild must be id-stable");
    c.expect(v.id_of("E-100") == 10002 && v.id_of("E100") == 10202, "exponent id range");
  });

  c.run("float codec", [](Checker& c) {
    c.expect(encode_float(3.14159) == TokenTriple{false, 3142, -3}, "3.14159 -> (+,3142,-3)");
    c.expect(encode_float(-0.05) == TokenTriple{true, 5000, -5}, "-0.05 -> (-,5000,-5)");
    c.expect(encode_float(0.0) == TokenTriple{false, 0, 0}, "zero convention");
    c.expect(encode_float(0.99995).mantissa == 1000, "carry into exponent");
    c.expect_near(decode_float(encode_float(123456.7)), 123500.0, 1e-9, "123456.7 quantized");
    Rng rng(7);
    for (int i = 0; i < 2000; ++i) {
      const double mag = std::pow(10.0, rng.uniform() * 100.0 - 50.0);
      const double v = rng.coin() ? mag : -mag;
      const double rt = decode_float(encode_float(v));
      c.expect(std::abs(rt - v) / std::abs(v) <= 5e-4, "round-trip bound at " + std::to_string(v));
    }
  });

  c.run("monomial enumeration", [](Checker& c) {
    for (int d = 1; d <= 4; ++d)
      for (int o = 1; o <= 3; ++o)
        c.expect(static_cast<long>(enumerate_monomials(d, o).size()) == binomial(d + o, d),
                 "count at D=" + std::to_string(d) + " o=" + std::to_string(o));
    const auto set = enumerate_monomials(2, 3);
    const std::vector<std::vector<int>> expected = {{0, 0}, {0, 1}, {0, 2}, {0, 3}, {1, 0},
                                                    {1, 1}, {1, 2}, {2, 0}, {2, 1}, {3, 0}};
    c.expect(set == expected, "2D order-3 basis mismatch");
  });

  c.run("prefix round trip", [](Checker& c) {
    Rng rng(11);
    PolyGenConfig pcfg;
    TreeGenConfig tcfg;
    for (int i = 0; i < 100; ++i) {
      const int dim = 1 + static_cast<int>(rng.uniform_int(0, 3));
      const OdeSystem s = (i % 2 == 0) ? sample_polynomial_system(dim, rng, pcfg)
                                       : sample_tree_system(dim, rng, tcfg);
      const auto tokens = to_prefix(s);
      std::string err;
      auto back = parse_prefix(tokens, dim, &err);
      c.expect(back.has_value(), "parse failed: " + err);
      if (back) c.expect(structurally_equal(s, *back), "round trip not structural");
    }
  });

  c.run("integrator oracles", [](Checker& c) {
    const auto grid = uniform_grid(1.0, 10.0, 100);
    OdeSystem decay;
    decay.dim = 1;
    decay.equations.push_back(
        Expr::binary(ExprKind::Mul, Expr::constant(-1.0), Expr::variable(0)));
    auto r = solve(decay, std::vector<double>{1.0}, grid);
    c.expect(r.ok, "decay must integrate");
    if (r.ok)
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const double want = std::exp(-(grid[k] - 1.0));
        c.expect(std::abs(r.trajectory.states[k][0] - want) / want <= 1e-2, "decay accuracy");
      }
    OdeSystem growth;
    growth.dim = 1;
    growth.equations.push_back(Expr::variable(0));
    auto g = solve(growth, std::vector<double>{1.0}, grid);
    c.expect(g.ok && !amplitude_ok(g.trajectory), "e^9 must fail the amplitude filter");
  });

  c.run("schedules", [](Checker& c) {
    CosineScheduleConfig cos_cfg;
    c.expect_near(cosine_schedule(0, cos_cfg), 0.0, 1e-18, "cosine warmup start");
    c.expect_near(cosine_schedule(1000, cos_cfg), 2e-4, 1e-12, "cosine peak at warmup");
    const auto cyc = cosine_cycle_at(1000 + 30000, cos_cfg);
    c.expect_near(cyc.peak, 1.5e-4, 1e-12, "second cycle peak");
    c.expect_near(cyc.length, 33000.0, 1e-6, "second cycle length");
    NoamScheduleConfig noam_cfg;
    c.expect_near(noam_schedule(2000, noam_cfg), noam_cfg.lr_max, 1e-15, "noam peak");
    c.expect_near(noam_schedule(8000, noam_cfg), noam_cfg.lr_max / 2, 1e-15, "noam decay");
  });

  c.run("rms rescaling", [](Checker& c) {
    Trajectory a, b;
    a.times = b.times = {1.0, 2.0};
    a.states = {{3.0}, {3.0}};
    b.states = {{4.0}, {4.0}};
    const auto scaled = rms_scale({a, b});
    c.expect_near(scaled.scale, std::sqrt(12.5), 1e-12, "R = sqrt(12.5)");
    c.expect_near(scaled.instances[0].states[0][0], 3.0 / std::sqrt(12.5), 1e-12, "scaled initial");
    Trajectory p = a, q = a;
    p.states = {{20.0}, {20.0}};
    q.states = {{-20.0}, {-20.0}};
    c.expect_near(rms_scale({p, q}).scale, 20.0, 1e-12, "no symmetric cancellation");

    Rng rng(3);
    OdeSystem sys;
    sys.dim = 2;
    sys.equations.push_back(Expr::unary(ExprKind::Square, Expr::variable(0)));
    sys.equations.push_back(Expr::binary(
        ExprKind::Add, Expr::binary(ExprKind::Mul, Expr::constant(-1.0), Expr::variable(1)),
        Expr::unary(ExprKind::Sin, Expr::variable(0))));
    const double R = 2.5;
    const OdeSystem unscaled = unscale_system(sys, R);
    for (int i = 0; i < 200; ++i) {
      const std::vector<double> x = {rng.normal() * 3, rng.normal() * 3};
      const std::vector<double> x_over_r = {x[0] / R, x[1] / R};
      for (int d = 0; d < 2; ++d) {
        const double direct = R * sys.equations[d].eval(x_over_r);
        const double via = unscaled.equations[d].eval(x);
        c.expect(std::abs(direct - via) <= 1e-12 * std::max(1.0, std::abs(direct)),
                 "chain-rule identity");
      }
    }
  });

  c.run("r2 score", [](Checker& c) {
    const std::vector<double> y = {1.0, 2.0, 3.0};
    c.expect_near(r2_score(y, y), 1.0, 1e-15, "identity");
    const std::vector<double> m = {2.0, 2.0, 2.0};
    c.expect_near(r2_score(y, m), 0.0, 1e-15, "mean prediction");
    const std::vector<double> p = {1.0, 2.0, 4.0};
    c.expect_near(r2_score(y, p), 0.5, 1e-15, "hand example");
  });

  c.run("finite differences", [](Checker& c) {
    Trajectory t;
    const auto grid = uniform_grid(0.0, 2.0, 21);
    t.times = grid;
    for (double x : grid) t.states.push_back({x * x});
    const auto d = finite_diff(t);
    for (std::size_t k = 0; k < grid.size(); ++k)
      c.expect(std::abs(d[k][0] - 2.0 * grid[k]) <= 1e-10, "d/dt t^2 exact");
  });

  c.run("aggregator invariants", [](Checker& c) {
    ModelConfig cfg = ModelConfig::tiny_gradcheck();
    cfg.vocab_size = Vocab::instance().size();
    const int s = 10, n = 3, dim = 2;
    Rng rng(21);
    std::vector<SlottedTokens> inst;
    for (int j = 0; j < n; ++j)
      inst.push_back(slot_trajectory_tokens(random_trajectory_tokens(rng, s, dim), dim, cfg.d_max));
    std::vector<int> target = {Vocab::instance().bos_id(), Vocab::instance().var_id(0),
                               Vocab::instance().add_id(), Vocab::instance().var_id(1)};

    for (AggKind kind : {AggKind::Mean, AggKind::Attentive, AggKind::XAttnTimeAgnostic,
                         AggKind::AttnTimeAware}) {
      cfg.aggregator = kind;
      Model<float> model(cfg, 5);
      const Tensor<float> base = model.eval_logits(inst, target);
      std::vector<SlottedTokens> perm = {inst[2], inst[0], inst[1]};
      const Tensor<float> permuted = model.eval_logits(perm, target);
      c.expect(max_abs_diff(base, permuted) <= 1e-5,
               agg_name(kind) + " permutation invariance, diff " +
                   std::to_string(max_abs_diff(base, permuted)));
      if (kind == AggKind::Attentive) {
        std::vector<double> w;
        model.encode_and_aggregate(inst, &w);
        double sum = 0;
        for (double x : w) {
          c.expect(x >= 0, "attentive weight nonnegative");
          sum += x;
        }
        c.expect(std::abs(sum - 1.0) <= 1e-6, "attentive weights sum to 1");
      }
      if (kind == AggKind::Mean) {
        Graph<float> g(false);
        auto z = model.encode(g, model.embed_trajectory(g, inst[0]));
        auto zbar = model.aggregate_mean(g, {z});
        c.expect(max_abs_diff(g.value(z), g.value(zbar)) == 0.0, "mean n=1 exact identity");
      }
    }
  });

  return c.results;
}

int print_selftest(std::ostream& os) {
  int failures = 0;
  for (const CheckResult& r : run_selftest()) {
    os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.pass) os << " - " << r.detail;
    os << "\n";
    if (!r.pass) ++failures;
  }
  return failures;
}

}  // namespace misode
