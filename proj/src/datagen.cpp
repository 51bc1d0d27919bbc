#include "datagen.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <mutex>
#include <thread>

#include "floatcodec.hpp"

namespace misode {

std::vector<std::vector<int>> enumerate_monomials(int dim, int order_max) {
  if (dim < 1 || order_max < 1) throw ConfigError("enumerate_monomials: dim and order must be >= 1");
  std::vector<std::vector<int>> out;
  std::vector<int> current(dim, 0);
  // Ascending lexicographic enumeration with a degree budget.
  std::function<void(int, int)> recurse = [&](int pos, int remaining) {
    if (pos == dim) {
      out.push_back(current);
      return;
    }
    for (int e = 0; e <= remaining; ++e) {
      current[pos] = e;
      recurse(pos + 1, remaining - e);
    }
    current[pos] = 0;
  };
  recurse(0, order_max);
  return out;
}

Expr monomial_expr(double coeff, const std::vector<int>& exponents) {
  Expr term = Expr::constant(coeff);
  for (std::size_t i = 0; i < exponents.size(); ++i)
    for (int k = 0; k < exponents[i]; ++k)
      term = Expr::binary(ExprKind::Mul, std::move(term), Expr::variable(static_cast<int>(i)));
  return term;
}

namespace {

double round_decimals(double v, int places) {
  const double scale = std::pow(10.0, places);
  return std::round(v * scale) / scale;
}

// +-lognormal, rounded; zero-rounded draws are redrawn so every coefficient
// survives serialization.
double sample_poly_coeff(Rng& rng, const PolyGenConfig& cfg) {
  for (;;) {
    double c = rng.lognormal(cfg.coeff_mu, cfg.coeff_sigma);
    if (rng.coin()) c = -c;
    c = round_decimals(c, cfg.round_decimals);
    if (c != 0.0) return c;
  }
}

int sample_term_count(Rng& rng, const PolyGenConfig& cfg) {
  double x = rng.normal(cfg.terms_mean, cfg.terms_std);
  x = std::clamp(x, 1.0, static_cast<double>(cfg.terms_max));  // trim, then round
  const int n = static_cast<int>(std::floor(x + 0.5));         // half away from zero
  return std::clamp(n, 1, cfg.terms_max);
}

struct PolyStructure {
  std::vector<std::vector<std::vector<int>>> monomials;  // per dim, selected exponent vectors
};

PolyStructure sample_poly_structure(int dim, Rng& rng, const PolyGenConfig& cfg) {
  PolyStructure s;
  const int o_max = static_cast<int>(rng.uniform_int(1, cfg.order_max));
  const auto candidates = enumerate_monomials(dim, o_max);
  s.monomials.resize(dim);
  for (int d = 0; d < dim; ++d) {
    const int n_terms = sample_term_count(rng, cfg);
    if (static_cast<int>(candidates.size()) <= n_terms) {
      s.monomials[d] = candidates;
    } else {
      auto idx = rng.sample_without_replacement(candidates.size(), n_terms);
      std::sort(idx.begin(), idx.end());
      for (std::size_t i : idx) s.monomials[d].push_back(candidates[i]);
    }
  }
  return s;
}

OdeSystem realize_poly(int dim, const PolyStructure& s, Rng& rng, const PolyGenConfig& cfg) {
  OdeSystem sys;
  sys.dim = dim;
  for (int d = 0; d < dim; ++d) {
    Expr eq;
    bool first = true;
    for (const auto& mono : s.monomials[d]) {
      Expr term = monomial_expr(sample_poly_coeff(rng, cfg), mono);
      eq = first ? std::move(term) : Expr::binary(ExprKind::Add, std::move(eq), std::move(term));
      first = false;
    }
    sys.equations.push_back(std::move(eq));
  }
  return sys;
}

// ---- tree generator ----------------------------------------------------

struct TreeNode {
  int kind = -1;  // -1 leaf slot, 0 add, 1 mul
  int depth = 0;
  int left = -1, right = -1;
};

double sample_tree_const(Rng& rng, const TreeGenConfig& cfg) {
  double c = rng.loguniform(cfg.const_min, cfg.const_max);
  return rng.coin() ? c : -c;
}

ExprKind sample_unary_kind(Rng& rng, const TreeGenConfig& cfg) {
  const double u = rng.uniform();
  double acc = 0.0;
  const ExprKind kinds[4] = {ExprKind::Sin, ExprKind::Square, ExprKind::Inverse,
                             ExprKind::Identity};
  for (int i = 0; i < 4; ++i) {
    acc += cfg.p_unary[i];
    if (u < acc) return kinds[i];
  }
  return ExprKind::Identity;
}

Expr sample_tree_equation(int dim, Rng& rng, const TreeGenConfig& cfg) {
  // Binary skeleton: grow by replacing random leaf slots, depth-capped.
  std::vector<TreeNode> nodes(1);
  std::vector<int> leaves = {0};
  const int n_binary = static_cast<int>(rng.uniform_int(0, cfg.binary_max));
  for (int b = 0; b < n_binary; ++b) {
    std::vector<int> eligible;
    for (int l : leaves)
      if (nodes[l].depth < cfg.depth_max - 1) eligible.push_back(l);
    if (eligible.empty()) break;
    const int pick = eligible[rng.uniform_int(0, static_cast<int>(eligible.size()) - 1)];
    nodes[pick].kind = rng.uniform() < cfg.p_add ? 0 : 1;
    TreeNode child;
    child.depth = nodes[pick].depth + 1;
    nodes[pick].left = static_cast<int>(nodes.size());
    nodes.push_back(child);
    nodes[pick].right = static_cast<int>(nodes.size());
    nodes.push_back(child);
    leaves.erase(std::find(leaves.begin(), leaves.end(), pick));
    leaves.push_back(nodes[pick].left);
    leaves.push_back(nodes[pick].right);
  }

  std::function<Expr(int)> build = [&](int i) -> Expr {
    const TreeNode& n = nodes[i];
    if (n.kind < 0) {
      if (rng.uniform() < cfg.p_leaf_var)
        return Expr::variable(static_cast<int>(rng.uniform_int(0, dim - 1)));
      return Expr::constant(sample_tree_const(rng, cfg));
    }
    return Expr::binary(n.kind == 0 ? ExprKind::Add : ExprKind::Mul, build(n.left),
                        build(n.right));
  };
  Expr root = build(0);

  // Unary insertion: wrap a uniformly chosen subtree as a*u(sub) + b.
  const int n_unary = static_cast<int>(rng.uniform_int(0, cfg.unary_max));
  for (int u = 0; u < n_unary; ++u) {
    std::vector<Expr*> all;
    std::function<void(Expr&)> collect = [&](Expr& e) {
      all.push_back(&e);
      for (Expr& c : e.children()) collect(c);
    };
    collect(root);
    Expr* target = all[rng.uniform_int(0, static_cast<int>(all.size()) - 1)];
    const ExprKind op = sample_unary_kind(rng, cfg);
    const double a = sample_tree_const(rng, cfg);
    const double b = sample_tree_const(rng, cfg);
    Expr wrapped = Expr::binary(
        ExprKind::Add,
        Expr::binary(ExprKind::Mul, Expr::constant(a), Expr::unary(op, std::move(*target))),
        Expr::constant(b));
    *target = std::move(wrapped);
  }
  return root;
}

void resample_constants(Expr& e, const std::function<double()>& draw) {
  if (e.kind() == ExprKind::Constant) {
    e = Expr::constant(draw());
    return;
  }
  for (Expr& c : e.children()) resample_constants(c, draw);
}

// Serialized expressions carry 4-significant-digit constants; quantizing
// before integration keeps the stored tokens and the stored trajectories
// describing the same system.
void quantize_constants(Expr& e) {
  if (e.kind() == ExprKind::Constant) {
    e = Expr::constant(quantize_float(e.value()));
    return;
  }
  for (Expr& c : e.children()) quantize_constants(c);
}

void quantize_constants(OdeSystem& s) {
  for (Expr& e : s.equations) quantize_constants(e);
}

}  // namespace

OdeSystem sample_polynomial_system(int dim, Rng& rng, const PolyGenConfig& cfg) {
  if (dim < 1 || dim > 4) throw ConfigError("sample_polynomial_system: dim must be in [1, 4]");
  const PolyStructure s = sample_poly_structure(dim, rng, cfg);
  return realize_poly(dim, s, rng, cfg);
}

OdeSystem sample_tree_system(int dim, Rng& rng, const TreeGenConfig& cfg) {
  if (dim < 1 || dim > 4) throw ConfigError("sample_tree_system: dim must be in [1, 4]");
  OdeSystem sys;
  sys.dim = dim;
  for (int d = 0; d < dim; ++d) sys.equations.push_back(sample_tree_equation(dim, rng, cfg));
  return sys;
}

std::vector<std::vector<double>> sample_initial_values(int dim, int n, Rng& rng) {
  if (n < 1 || n > 4) throw ConfigError("sample_initial_values: n must be in [1, 4]");
  std::vector<std::vector<double>> out(n, std::vector<double>(dim));
  for (auto& row : out)
    for (double& v : row) v = rng.normal();
  return out;
}

Trajectory apply_noise(const Trajectory& traj, double sigma, Rng& rng) {
  if (sigma < 0) throw ConfigError("apply_noise: sigma must be >= 0");
  Trajectory out = traj;
  if (sigma == 0.0) return out;
  for (auto& row : out.states)
    for (double& v : row) v *= 1.0 + sigma * rng.normal();
  return out;
}

Trajectory noisy_instance(const SystemRecord& record, int instance, double sigma) {
  const std::uint64_t sigma_key = std::bit_cast<std::uint64_t>(sigma);
  Rng rng(derive_seed(record.seed ^ sigma_key, 0xB00B5 + instance));
  return apply_noise(record.instances.at(instance), sigma, rng);
}

std::vector<Trajectory> noisy_instances(const SystemRecord& record, double sigma) {
  std::vector<Trajectory> out;
  out.reserve(record.instances.size());
  for (int i = 0; i < static_cast<int>(record.instances.size()); ++i)
    out.push_back(noisy_instance(record, i, sigma));
  return out;
}

SystemRecord select_first_n_instances(const SystemRecord& record, int n) {
  if (n < 1 || n > static_cast<int>(record.instances.size()))
    throw DataError("select_first_n_instances: n outside [1, available]");
  SystemRecord out = record;
  out.instances.resize(n);
  return out;
}

namespace {

struct RecordAttempt {
  bool ok = false;
  SystemRecord record;
  long attempts = 0;
  long rejected_divergent = 0;
  long rejected_amplitude = 0;
  long structure_resamples = 0;
};

RecordAttempt generate_record(long id, const CorpusConfig& cfg) {
  RecordAttempt out;
  const std::uint64_t record_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(id));
  Rng rng(record_seed);
  const auto grid = uniform_grid(cfg.t0, cfg.t1, cfg.grid_points);

  const int dim = static_cast<int>(rng.uniform_int(cfg.dim_min, cfg.dim_max));
  const int n_inst = static_cast<int>(rng.uniform_int(cfg.instances_min, cfg.instances_max));

  // The outer loop draws a fresh structure; the inner loop retries it with
  // fresh constants so divergence-prone shapes cannot stall generation.
  for (int structure_try = 0; structure_try < 200; ++structure_try) {
    if (structure_try > 0) ++out.structure_resamples;
    OdeSystem base = cfg.generator == GeneratorKind::Poly
                         ? sample_polynomial_system(dim, rng, cfg.poly)
                         : sample_tree_system(dim, rng, cfg.tree);

    for (int coeff_try = 0; coeff_try < cfg.coeff_retries; ++coeff_try) {
      OdeSystem candidate = base;
      if (coeff_try > 0) {
        auto draw = cfg.generator == GeneratorKind::Poly
                        ? std::function<double()>([&] { return sample_poly_coeff(rng, cfg.poly); })
                        : std::function<double()>([&] { return sample_tree_const(rng, cfg.tree); });
        for (Expr& e : candidate.equations) resample_constants(e, draw);
      }
      quantize_constants(candidate);

      const auto initials = sample_initial_values(dim, n_inst, rng);
      ++out.attempts;
      std::vector<Trajectory> instances;
      bool good = true;
      for (const auto& x0 : initials) {
        SolveResult r = solve(candidate, x0, grid, cfg.solver);
        if (!r.ok) {
          ++out.rejected_divergent;
          good = false;
          break;
        }
        if (!amplitude_ok(r.trajectory, cfg.amplitude_limit)) {
          ++out.rejected_amplitude;
          good = false;
          break;
        }
        instances.push_back(std::move(r.trajectory));
      }
      if (!good) continue;

      out.ok = true;
      out.record.id = id;
      out.record.dim = dim;
      out.record.generator = cfg.generator == GeneratorKind::Poly ? "poly" : "tree";
      out.record.seed = record_seed;
      out.record.sigma = cfg.sigma;
      out.record.system = std::move(candidate);
      out.record.instances = std::move(instances);
      return out;
    }
  }
  return out;
}

}  // namespace

Corpus build_corpus(const CorpusConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("build_corpus: count must be >= 1");
  if (cfg.dim_min < 1 || cfg.dim_max > 4 || cfg.dim_min > cfg.dim_max)
    throw ConfigError("build_corpus: dimension range must lie in [1, 4]");
  if (cfg.instances_min < 1 || cfg.instances_max > 4 || cfg.instances_min > cfg.instances_max)
    throw ConfigError("build_corpus: instance range must lie in [1, 4]");

  Corpus corpus;
  corpus.records.resize(cfg.count);
  std::vector<char> done(cfg.count, 0);

  std::atomic<long> next{0};
  std::mutex stats_mu;
  std::string failure;
  // Stall detection over a trailing window of solve attempts.
  long window_attempts = 0, window_accepts = 0;

  auto worker = [&] {
    for (;;) {
      const long id = next.fetch_add(1);
      if (id >= cfg.count) return;
      RecordAttempt r = generate_record(id, cfg);
      std::lock_guard<std::mutex> lock(stats_mu);
      corpus.stats.attempts += r.attempts;
      corpus.stats.rejected_divergent += r.rejected_divergent;
      corpus.stats.rejected_amplitude += r.rejected_amplitude;
      corpus.stats.structure_resamples += r.structure_resamples;
      window_attempts += r.attempts;
      window_accepts += r.ok ? 1 : 0;
      if (!r.ok) {
        if (failure.empty()) failure = "generation stalled for record " + std::to_string(id);
        return;
      }
      corpus.stats.accepted += 1;
      corpus.records[id] = std::move(r.record);
      done[id] = 1;
      if (window_attempts >= 2000) {
        if (window_accepts * 100 < window_attempts && failure.empty())
          failure = "generation stalling: " + std::to_string(window_accepts) + " accepts in " +
                    std::to_string(window_attempts) + " attempts";
        window_attempts = 0;
        window_accepts = 0;
      }
    }
  };

  const int n_workers = std::max(1, cfg.workers);
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (!failure.empty()) throw RuntimeFailure("build_corpus: " + failure);
  for (long i = 0; i < cfg.count; ++i)
    if (!done[i]) throw RuntimeFailure("build_corpus: record " + std::to_string(i) + " missing");
  return corpus;
}

}  // namespace misode
