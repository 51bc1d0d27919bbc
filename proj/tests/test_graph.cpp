#include <doctest.h>

#include <cmath>
#include <functional>

#include "common.hpp"
#include "graph.hpp"

using namespace misode;
using G = Graph<double>;

namespace {

Tensor<double> random_tensor(Rng& rng, long r, long c, double scale = 1.0) {
  Tensor<double> t(r, c);
  for (long i = 0; i < t.size(); ++i) t.data()[i] = rng.normal() * scale;
  return t;
}

// Reduces an op output to a scalar through fixed random weights so every
// entry influences the loss: loss = ones * (X o W) * ones.
G::Id to_scalar(G& g, G::Id x, G::Id weights) {
  Tensor<double> ones_row(1, g.value(x).rows());
  for (long i = 0; i < ones_row.size(); ++i) ones_row.data()[i] = 1.0;
  Tensor<double> ones_col(g.value(x).cols(), 1);
  for (long i = 0; i < ones_col.size(); ++i) ones_col.data()[i] = 1.0;
  G::Id weighted = g.mul(x, weights);
  return g.matmul(g.matmul(g.input(std::move(ones_row)), weighted), g.input(std::move(ones_col)));
}

// Central-difference check of d(loss)/d(inputs) for a builder that maps leaf
// ids to a scalar node.
void check_gradients(const std::vector<Tensor<double>>& inputs,
                     const std::function<G::Id(G&, const std::vector<G::Id>&)>& builder,
                     double tol = 1e-6) {
  std::vector<Tensor<double>> work = inputs;

  auto eval = [&]() {
    G g(false);
    std::vector<G::Id> ids;
    for (const auto& t : work) ids.push_back(g.input(t));
    return g.value(builder(g, ids)).at(0, 0);
  };

  G g(true);
  std::vector<G::Id> ids;
  for (const auto& t : work) ids.push_back(g.input(t));
  const G::Id loss = builder(g, ids);
  g.backward(loss);

  const double h = 1e-6;
  for (std::size_t k = 0; k < work.size(); ++k) {
    const Tensor<double>& analytic = g.grad(ids[k]);
    for (long i = 0; i < work[k].size(); ++i) {
      const double keep = work[k].data()[i];
      work[k].data()[i] = keep + h;
      const double up = eval();
      work[k].data()[i] = keep - h;
      const double down = eval();
      work[k].data()[i] = keep;
      const double fd = (up - down) / (2 * h);
      const double a = analytic.data()[i];
      const double err = std::abs(a - fd);
      CHECK_MESSAGE(err <= tol * std::max({1.0, std::abs(a), std::abs(fd)}),
                    "input ", k, " entry ", i, ": analytic ", a, " fd ", fd);
    }
  }
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("linear gradients") {
  Rng rng(1);
  check_gradients({random_tensor(rng, 3, 4), random_tensor(rng, 4, 5), random_tensor(rng, 1, 5),
                   random_tensor(rng, 3, 5)},
                  [](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.linear(in[0], in[1], in[2]), in[3]);
                  });
}

TEST_CASE("matmul, add, scale, mul gradients") {
  Rng rng(2);
  const Tensor<double> w = random_tensor(rng, 3, 3);
  check_gradients({random_tensor(rng, 3, 2), random_tensor(rng, 2, 3), random_tensor(rng, 3, 3)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    G::Id y = g.matmul(in[0], in[1]);
                    y = g.add(y, in[2]);
                    y = g.scale(y, 1.7);
                    y = g.mul(y, in[2]);
                    return to_scalar(g, y, g.input(w));
                  });
}

TEST_CASE("scale_by scalar node gradients") {
  Rng rng(3);
  const Tensor<double> w = random_tensor(rng, 2, 3);
  check_gradients({random_tensor(rng, 2, 3), random_tensor(rng, 1, 1)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.scale_by(in[0], in[1]), g.input(w));
                  });
}

TEST_CASE("average and weighted_sum gradients") {
  Rng rng(4);
  const Tensor<double> w = random_tensor(rng, 2, 3);
  check_gradients({random_tensor(rng, 2, 3), random_tensor(rng, 2, 3), random_tensor(rng, 2, 3)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.average({in[0], in[1], in[2]}), g.input(w));
                  });
  check_gradients({random_tensor(rng, 2, 3), random_tensor(rng, 2, 3), random_tensor(rng, 3, 1)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    G::Id sm = g.softmax_col(in[2]);
                    return to_scalar(g, g.weighted_sum({in[0], in[1], in[0]}, sm), g.input(w));
                  });
}

TEST_CASE("gelu and layer_norm gradients") {
  Rng rng(5);
  const Tensor<double> w = random_tensor(rng, 4, 6);
  check_gradients({random_tensor(rng, 4, 6)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.gelu(in[0]), g.input(w));
                  });
  check_gradients(
      {random_tensor(rng, 4, 6), random_tensor(rng, 1, 6, 0.5), random_tensor(rng, 1, 6, 0.5)},
      [&](G& g, const std::vector<G::Id>& in) {
        return to_scalar(g, g.layer_norm(in[0], in[1], in[2]), g.input(w));
      },
      5e-6);
}

TEST_CASE("softmax_col gradients and simplex output") {
  Rng rng(6);
  const Tensor<double> w = random_tensor(rng, 5, 1);
  check_gradients({random_tensor(rng, 5, 1)}, [&](G& g, const std::vector<G::Id>& in) {
    return to_scalar(g, g.softmax_col(in[0]), g.input(w));
  });
  G g(false);
  const G::Id sm = g.softmax_col(g.input(random_tensor(rng, 7, 1)));
  double sum = 0;
  for (long i = 0; i < 7; ++i) {
    CHECK(g.value(sm).at(i, 0) >= 0);
    sum += g.value(sm).at(i, 0);
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("full attention gradients") {
  Rng rng(7);
  const long s = 5, d = 8;
  const Tensor<double> w = random_tensor(rng, s, d);
  check_gradients({random_tensor(rng, s, d), random_tensor(rng, s, d), random_tensor(rng, s, d)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.mha(in[0], in[1], in[2], 2, 1, s, s, false), g.input(w));
                  });
}

TEST_CASE("causal attention gradients and exact causality") {
  Rng rng(8);
  const long s = 5, d = 4;
  const Tensor<double> w = random_tensor(rng, s, d);
  check_gradients({random_tensor(rng, s, d), random_tensor(rng, s, d), random_tensor(rng, s, d)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.mha(in[0], in[1], in[2], 2, 1, s, s, true), g.input(w));
                  });

  Tensor<double> q = random_tensor(rng, s, d), k = random_tensor(rng, s, d),
                 v = random_tensor(rng, s, d);
  G g1(false);
  const auto out1 = g1.value(g1.mha(g1.input(q), g1.input(k), g1.input(v), 2, 1, s, s, true));
  // editing the last row of k and v must leave rows before it untouched
  for (long c = 0; c < d; ++c) {
    k.at(s - 1, c) += 3.0;
    v.at(s - 1, c) -= 5.0;
  }
  G g2(false);
  const auto out2 = g2.value(g2.mha(g2.input(q), g2.input(k), g2.input(v), 2, 1, s, s, true));
  for (long r = 0; r + 1 < s; ++r)
    for (long c = 0; c < d; ++c) CHECK(out1.at(r, c) == out2.at(r, c));
}

TEST_CASE("block attention gradients (cross-instance layout)") {
  Rng rng(9);
  const long s = 3, n = 2, d = 4;
  const Tensor<double> w = random_tensor(rng, s, d);
  // queries: one per block; keys/values: n per block
  check_gradients(
      {random_tensor(rng, s, d), random_tensor(rng, s * n, d), random_tensor(rng, s * n, d)},
      [&](G& g, const std::vector<G::Id>& in) {
        return to_scalar(g, g.mha(in[0], in[1], in[2], 2, s, 1, n, false), g.input(w));
      });
}

TEST_CASE("embedding gather gradients including repeated and padded ids") {
  Rng rng(10);
  const Tensor<double> w = random_tensor(rng, 4, 3);
  check_gradients({random_tensor(rng, 6, 3)}, [&](G& g, const std::vector<G::Id>& in) {
    return to_scalar(g, g.embed_rows(in[0], {2, 0, 2, 5}), g.input(w));
  });
  const Tensor<double> w2 = random_tensor(rng, 2, 6);
  check_gradients({random_tensor(rng, 6, 3)}, [&](G& g, const std::vector<G::Id>& in) {
    return to_scalar(g, g.embed_slots(in[0], {1, -1, 4, 4}, 2, 2), g.input(w2));
  });

  G g(false);
  const auto out = g.value(g.embed_slots(g.input(random_tensor(rng, 6, 3)), {1, -1}, 1, 2));
  for (long c = 3; c < 6; ++c) CHECK(out.at(0, c) == 0.0);  // -1 slot stays zero
}

TEST_CASE("row plumbing gradients: concat, take, repeat") {
  Rng rng(11);
  const Tensor<double> w = random_tensor(rng, 5, 3);
  check_gradients({random_tensor(rng, 2, 3), random_tensor(rng, 3, 3)},
                  [&](G& g, const std::vector<G::Id>& in) {
                    return to_scalar(g, g.concat_rows({in[0], in[1]}), g.input(w));
                  });
  const Tensor<double> w2 = random_tensor(rng, 4, 3);
  check_gradients({random_tensor(rng, 3, 3)}, [&](G& g, const std::vector<G::Id>& in) {
    return to_scalar(g, g.take_rows(in[0], {2, 0, 2, 1}), g.input(w2));
  });
  const Tensor<double> w3 = random_tensor(rng, 6, 3);
  check_gradients({random_tensor(rng, 1, 3)}, [&](G& g, const std::vector<G::Id>& in) {
    return to_scalar(g, g.repeat_row(in[0], 6), g.input(w3));
  });
}

TEST_CASE("cross entropy value and gradients") {
  Rng rng(12);
  const long V = 7;
  // uniform logits -> ln V
  G g(false);
  Tensor<double> uniform(3, V);
  const G::Id ce = g.cross_entropy(g.input(uniform), {1, 4, 6}, -1);
  CHECK(g.value(ce).at(0, 0) == doctest::Approx(std::log(static_cast<double>(V))).epsilon(1e-12));

  check_gradients({random_tensor(rng, 4, V)}, [&](G& g2, const std::vector<G::Id>& in) {
    return g2.cross_entropy(in[0], {0, 3, 5, 3}, -1);
  });

  // pad masking: pad rows contribute nothing
  check_gradients({random_tensor(rng, 4, V)}, [&](G& g2, const std::vector<G::Id>& in) {
    return g2.cross_entropy(in[0], {0, 6, 5, 6}, 6);
  });

  G g3(true);
  Tensor<double> logits(2, V);
  CHECK_THROWS_AS(g3.cross_entropy(g3.input(logits), {5, 5}, 5), std::invalid_argument);
}

TEST_CASE("one-hot logits drive the loss toward zero") {
  G g(false);
  Tensor<double> logits(2, 5);
  logits.at(0, 3) = 50.0;
  logits.at(1, 1) = 50.0;
  const G::Id ce = g.cross_entropy(g.input(logits), {3, 1}, -1);
  CHECK(g.value(ce).at(0, 0) <= 1e-12);
}

TEST_CASE("no-grad graphs refuse backward") {
  G g(false);
  Tensor<double> one(1, 1);
  const G::Id x = g.input(one);
  CHECK_THROWS_AS(g.backward(x), std::logic_error);
}

TEST_CASE("parameters are deduplicated within a graph") {
  Param<double> p("w", Tensor<double>(2, 2));
  G g(true);
  const G::Id a = g.param(p);
  const G::Id b = g.param(p);
  CHECK(a == b);
  CHECK(g.params_used().size() == 1);
}

}  // TEST_SUITE
