#include <doctest.h>

#include <cmath>

#include "common.hpp"
#include "datagen.hpp"
#include "expr.hpp"

using namespace misode;

namespace {

Expr times(Expr a, Expr b) { return Expr::binary(ExprKind::Mul, std::move(a), std::move(b)); }
Expr plus(Expr a, Expr b) { return Expr::binary(ExprKind::Add, std::move(a), std::move(b)); }

}  // namespace

TEST_SUITE("exprtree") {

TEST_CASE("evaluation matches hand results") {
  const Expr sq = Expr::unary(ExprKind::Square, Expr::variable(0));
  const std::vector<double> x1 = {3.0};
  CHECK(sq.eval(x1) == 9.0);

  const Expr e2 = plus(Expr::unary(ExprKind::Sin, Expr::variable(0)), Expr::variable(1));
  const std::vector<double> x2 = {0.0, 2.0};
  CHECK(e2.eval(x2) == 2.0);

  // 1.5 * x0 * x1^2 at (2, 3) = 27
  const Expr e3 = times(times(Expr::constant(1.5), Expr::variable(0)),
                        Expr::unary(ExprKind::Square, Expr::variable(1)));
  const std::vector<double> x3 = {2.0, 3.0};
  CHECK(e3.eval(x3) == doctest::Approx(27.0).epsilon(1e-15));
}

TEST_CASE("singular evaluations return non-finite, not exceptions") {
  const Expr inv = Expr::unary(ExprKind::Inverse, Expr::variable(0));
  const std::vector<double> zero = {0.0};
  CHECK(!std::isfinite(inv.eval(zero)));
}

TEST_CASE("identity is exact") {
  Rng rng(5);
  const Expr inner = plus(times(Expr::constant(2.5), Expr::variable(0)),
                          Expr::unary(ExprKind::Sin, Expr::variable(1)));
  const Expr wrapped = Expr::unary(ExprKind::Identity, inner);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x = {rng.normal(), rng.normal()};
    CHECK(wrapped.eval(x) == inner.eval(x));
  }
}

TEST_CASE("variable index beyond the state dimension throws") {
  const Expr e = Expr::variable(2);
  const std::vector<double> x = {1.0, 2.0};
  CHECK_THROWS_AS(e.eval(x), std::invalid_argument);
}

TEST_CASE("prefix serialization of single-leaf and two-equation systems") {
  OdeSystem s1;
  s1.dim = 1;
  s1.equations.push_back(Expr::variable(0));
  CHECK(to_prefix(s1) == std::vector<std::string>{"x0"});

  // dx0/dt = x0 + x1, dx1/dt = -1 * x1
  OdeSystem s2;
  s2.dim = 2;
  s2.equations.push_back(plus(Expr::variable(0), Expr::variable(1)));
  s2.equations.push_back(times(Expr::constant(-1.0), Expr::variable(1)));
  const std::vector<std::string> want = {"add", "x0",   "x1", "<sep>", "mul",
                                         "<const>", "-", "1000", "E-3",   "x1"};
  CHECK(to_prefix(s2) == want);

  const Expr chain = Expr::unary(ExprKind::Sin, Expr::unary(ExprKind::Square, Expr::variable(0)));
  CHECK(to_prefix(chain) == std::vector<std::string>{"sin", "pow2", "x0"});
}

TEST_CASE("parse rejects malformed sequences") {
  std::string err;
  const std::vector<std::string> underflow = {"add", "x0"};
  CHECK(!parse_prefix(underflow, 1, &err));
  CHECK(err.find("underflow") != std::string::npos);

  const std::vector<std::string> overflow = {"x0", "x0"};
  CHECK(!parse_prefix(overflow, 1, &err));

  const std::vector<std::string> unknown = {"exp", "x0"};
  CHECK(!parse_prefix(unknown, 1, &err));
  CHECK(err.find("unknown") != std::string::npos);

  const std::vector<std::string> bad_var = {"x3"};
  CHECK(!parse_prefix(bad_var, 2, &err));

  const std::vector<std::string> wrong_segments = {"x0", "<sep>", "x0"};
  CHECK(!parse_prefix(wrong_segments, 1, &err));

  const std::vector<std::string> bad_const = {"<const>", "+", "12", "E-3"};
  CHECK(!parse_prefix(bad_const, 1, &err));

  const std::vector<std::string> truncated_const = {"<const>", "+", "1200"};
  CHECK(!parse_prefix(truncated_const, 1, &err));
}

TEST_CASE("single-token round trip") {
  const std::vector<std::string> tokens = {"x0"};
  auto s = parse_prefix(tokens, 1);
  REQUIRE(s.has_value());
  CHECK(s->dim == 1);
  CHECK(s->equations[0].kind() == ExprKind::Variable);
}

TEST_CASE("round trip is structural over random generated systems") {
  Rng rng(31);
  PolyGenConfig pcfg;
  TreeGenConfig tcfg;
  for (int i = 0; i < 1000; ++i) {
    const int dim = 1 + static_cast<int>(rng.uniform_int(0, 3));
    const OdeSystem s = (i % 2 == 0) ? sample_polynomial_system(dim, rng, pcfg)
                                     : sample_tree_system(dim, rng, tcfg);
    std::string err;
    const auto back = parse_prefix(to_prefix(s), dim, &err);
    REQUIRE_MESSAGE(back.has_value(), err);
    CHECK(structurally_equal(s, *back));
  }
}

TEST_CASE("infix rendering reads naturally") {
  OdeSystem s;
  s.dim = 2;
  s.equations.push_back(times(times(Expr::constant(1.5), Expr::variable(0)),
                              Expr::unary(ExprKind::Square, Expr::variable(1))));
  s.equations.push_back(Expr::unary(ExprKind::Inverse, Expr::variable(0)));
  const std::string r = render_system(s);
  CHECK(r.find("dx0/dt = 1.5*x0*x1^2") != std::string::npos);
  CHECK(r.find("dx1/dt = 1/(x0)") != std::string::npos);
}

}  // TEST_SUITE
