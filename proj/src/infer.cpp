#include "infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace misode {

using nlohmann::json;

RmsScaled rms_scale(const std::vector<Trajectory>& instances) {
  if (instances.empty()) throw DataError("rms_scale: no instances");
  double sum_sq = 0;
  long count = 0;
  for (const Trajectory& t : instances) {
    if (t.states.empty()) throw DataError("rms_scale: empty trajectory");
    for (double v : t.states.front()) {
      sum_sq += v * v;
      ++count;
    }
  }
  RmsScaled out;
  out.scale = sum_sq == 0.0 ? 1.0 : std::sqrt(sum_sq / static_cast<double>(count));
  out.instances = instances;
  if (out.scale != 1.0) {
    const double inv = 1.0 / out.scale;
    for (Trajectory& t : out.instances)
      for (auto& row : t.states)
        for (double& v : row) v *= inv;
  }
  return out;
}

Expr fold_constants(const Expr& e) {
  if (arity(e.kind()) == 0) return e;
  std::vector<Expr> folded;
  folded.reserve(e.children().size());
  for (const Expr& c : e.children()) folded.push_back(fold_constants(c));

  bool all_const = true;
  for (const Expr& c : folded) all_const &= c.kind() == ExprKind::Constant;
  if (all_const) {
    double v = 0;
    switch (e.kind()) {
      case ExprKind::Add:
        v = folded[0].value() + folded[1].value();
        break;
      case ExprKind::Mul:
        v = folded[0].value() * folded[1].value();
        break;
      case ExprKind::Sin:
        v = std::sin(folded[0].value());
        break;
      case ExprKind::Square:
        v = folded[0].value() * folded[0].value();
        break;
      case ExprKind::Inverse:
        v = 1.0 / folded[0].value();
        break;
      case ExprKind::Identity:
        v = folded[0].value();
        break;
      default:
        break;
    }
    if (std::isfinite(v)) return Expr::constant(v);
  }

  // c1 * (c2 * g) -> (c1*c2) * g, in any nesting arrangement.
  if (e.kind() == ExprKind::Mul) {
    Expr a = folded[0], b = folded[1];
    if (b.kind() == ExprKind::Constant) std::swap(a, b);
    if (a.kind() == ExprKind::Constant && b.kind() == ExprKind::Mul) {
      Expr inner_l = b.children()[0], inner_r = b.children()[1];
      if (inner_l.kind() == ExprKind::Constant || inner_r.kind() == ExprKind::Constant) {
        if (inner_r.kind() == ExprKind::Constant) std::swap(inner_l, inner_r);
        const double merged = a.value() * inner_l.value();
        if (std::isfinite(merged))
          return Expr::binary(ExprKind::Mul, Expr::constant(merged), std::move(inner_r));
      }
    }
    return Expr::binary(ExprKind::Mul, std::move(a), std::move(b));
  }
  if (arity(e.kind()) == 2)
    return Expr::binary(e.kind(), std::move(folded[0]), std::move(folded[1]));
  return Expr::unary(e.kind(), std::move(folded[0]));
}

namespace {

Expr substitute_scaled_vars(const Expr& e, double inv_scale) {
  if (e.kind() == ExprKind::Variable)
    return Expr::binary(ExprKind::Mul, Expr::constant(inv_scale), e);
  if (arity(e.kind()) == 0) return e;
  if (arity(e.kind()) == 1)
    return Expr::unary(e.kind(), substitute_scaled_vars(e.children()[0], inv_scale));
  return Expr::binary(e.kind(), substitute_scaled_vars(e.children()[0], inv_scale),
                      substitute_scaled_vars(e.children()[1], inv_scale));
}

}  // namespace

OdeSystem unscale_system(const OdeSystem& pred, double R) {
  if (!(R > 0)) throw DataError("unscale_system: R must be positive");
  if (R == 1.0) return pred;
  OdeSystem out;
  out.dim = pred.dim;
  const double inv = 1.0 / R;
  for (const Expr& eq : pred.equations) {
    Expr scaled = Expr::binary(ExprKind::Mul, Expr::constant(R),
                               substitute_scaled_vars(eq, inv));
    out.equations.push_back(fold_constants(scaled));
  }
  return out;
}

namespace {

struct Beam {
  std::vector<int> ids;
  double cum = 0;       // cumulative temperature-scaled log-probability
  double sort_key = 0;  // cum, or Gumbel-perturbed in stochastic mode
};

bool ids_less(const std::vector<int>& a, const std::vector<int>& b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

template <typename T>
std::vector<BeamCandidate> beam_decode(const Model<T>& model, const Tensor<T>& memory,
                                       const BeamConfig& cfg) {
  if (cfg.beam_size < 1) throw ConfigError("beam_decode: beam size must be >= 1");
  if (!(cfg.temperature > 0)) throw ConfigError("beam_decode: temperature must be positive");
  const Vocab& vocab = Vocab::instance();
  const int V = model.config().vocab_size;
  const int eos = vocab.eos_id();
  const int max_len = std::min<long>(cfg.max_len, model.config().max_target - 1);
  Rng rng(derive_seed(cfg.seed, 0xBEA3));

  std::vector<Beam> live{Beam{{vocab.bos_id()}, 0.0, 0.0}};
  std::vector<BeamCandidate> done;

  for (int step = 0; step < max_len && !live.empty(); ++step) {
    struct Expansion {
      std::size_t parent;
      int token;
      double cum;
      double key;
    };
    std::vector<Expansion> pool;
    pool.reserve(live.size() * static_cast<std::size_t>(cfg.beam_size) * 2);

    for (std::size_t b = 0; b < live.size(); ++b) {
      const Tensor<T> logits = model.decode_step(memory, live[b].ids);
      // log softmax of logits / temperature
      std::vector<double> logp(static_cast<std::size_t>(V));
      double mx = -1e300;
      for (int i = 0; i < V; ++i)
        mx = std::max(mx, static_cast<double>(logits.at(0, i)) / cfg.temperature);
      double z = 0;
      for (int i = 0; i < V; ++i) {
        logp[static_cast<std::size_t>(i)] =
            static_cast<double>(logits.at(0, i)) / cfg.temperature - mx;
        z += std::exp(logp[static_cast<std::size_t>(i)]);
      }
      const double logz = std::log(z);
      // Keep the beam_size best tokens of this parent; more never survive the pool cut.
      std::vector<int> order(static_cast<std::size_t>(V));
      for (int i = 0; i < V; ++i) order[static_cast<std::size_t>(i)] = i;
      const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.beam_size),
                                                     order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<long>(keep), order.end(),
                        [&](int a, int c) {
                          const double la = logp[static_cast<std::size_t>(a)];
                          const double lc = logp[static_cast<std::size_t>(c)];
                          if (la != lc) return la > lc;
                          return a < c;
                        });
      for (std::size_t i = 0; i < keep; ++i) {
        const int tok = order[i];
        const double cum = live[b].cum + logp[static_cast<std::size_t>(tok)] - logz;
        double key = cum;
        if (cfg.stochastic) key = cum - std::log(-std::log(rng.uniform_pos()));
        pool.push_back({b, tok, cum, key});
      }
    }

    std::sort(pool.begin(), pool.end(), [&](const Expansion& a, const Expansion& b) {
      if (a.key != b.key) return a.key > b.key;
      if (a.token != b.token) return a.token < b.token;  // ties: ascending token id
      return ids_less(live[a.parent].ids, live[b.parent].ids);
    });
    if (pool.size() > static_cast<std::size_t>(cfg.beam_size))
      pool.resize(static_cast<std::size_t>(cfg.beam_size));

    std::vector<Beam> next_live;
    for (const Expansion& e : pool) {
      Beam nb;
      nb.ids = live[e.parent].ids;
      nb.ids.push_back(e.token);
      nb.cum = e.cum;
      nb.sort_key = e.key;
      if (e.token == eos) {
        BeamCandidate c;
        c.ids = std::move(nb.ids);
        c.complete = true;
        c.score = nb.cum / static_cast<double>(c.ids.size() - 1);
        done.push_back(std::move(c));
      } else {
        next_live.push_back(std::move(nb));
      }
    }
    live = std::move(next_live);
    if (static_cast<int>(done.size()) >= cfg.beam_size) break;
  }

  if (done.empty())
    for (const Beam& b : live) {
      BeamCandidate c;
      c.ids = b.ids;
      c.complete = false;
      c.score = b.cum / std::max<double>(1.0, static_cast<double>(b.ids.size() - 1));
      done.push_back(std::move(c));
    }

  std::stable_sort(done.begin(), done.end(), [](const BeamCandidate& a, const BeamCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids_less(a.ids, b.ids);
  });
  if (done.size() > static_cast<std::size_t>(cfg.beam_size))
    done.resize(static_cast<std::size_t>(cfg.beam_size));
  return done;
}

template std::vector<BeamCandidate> beam_decode<float>(const Model<float>&, const Tensor<float>&,
                                                       const BeamConfig&);
template std::vector<BeamCandidate> beam_decode<double>(const Model<double>&,
                                                        const Tensor<double>&, const BeamConfig&);

template <typename T>
Prediction predict(const Model<T>& model, const SystemRecord& record, const PredictConfig& cfg) {
  Prediction out;
  out.system_id = record.id;
  out.dim = record.dim;
  const Vocab& vocab = Vocab::instance();

  const double sigma = cfg.sigma >= 0 ? cfg.sigma : record.sigma;
  const int n = cfg.instances > 0
                    ? std::min<int>(cfg.instances, static_cast<int>(record.instances.size()))
                    : static_cast<int>(record.instances.size());
  std::vector<Trajectory> observed;
  for (int i = 0; i < n; ++i) observed.push_back(noisy_instance(record, i, sigma));

  double R = 1.0;
  if (cfg.rescale) {
    RmsScaled scaled = rms_scale(observed);
    if (cfg.rms_literal && scaled.scale != 1.0) {
      // divide by 1/RMS, i.e. multiply inputs by the RMS
      R = 1.0 / scaled.scale;
      observed.clear();
      for (int i = 0; i < n; ++i) {
        Trajectory t = noisy_instance(record, i, sigma);
        for (auto& row : t.states)
          for (double& v : row) v /= R;
        observed.push_back(std::move(t));
      }
    } else {
      R = scaled.scale;
      observed = std::move(scaled.instances);
    }
  }
  out.rms = R;

  std::vector<SlottedTokens> inputs;
  try {
    for (const Trajectory& t : observed)
      inputs.push_back(
          slot_trajectory_tokens(encode_trajectory(t, vocab), record.dim, model.config().d_max));
  } catch (const std::out_of_range& e) {
    out.failure = std::string("input tokenization out of range: ") + e.what();
    return out;
  }

  const Tensor<T> memory = model.encode_and_aggregate(inputs, &out.agg_weights);
  out.candidates = beam_decode(model, memory, cfg.beam);

  for (std::size_t i = 0; i < out.candidates.size(); ++i) {
    if (!out.candidates[i].complete) continue;
    std::string err;
    auto parsed = decode_system(out.candidates[i].ids, vocab, record.dim, &err);
    if (!parsed) continue;
    out.chosen = static_cast<int>(i);
    out.system = cfg.rescale ? unscale_system(*parsed, R) : *parsed;
    out.ok = true;
    break;
  }
  if (!out.ok) out.failure = "no parseable beam candidate";
  return out;
}

template Prediction predict<float>(const Model<float>&, const SystemRecord&, const PredictConfig&);
template Prediction predict<double>(const Model<double>&, const SystemRecord&,
                                    const PredictConfig&);

void save_predictions(const std::vector<Prediction>& predictions, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write predictions to " + path);
  for (const Prediction& p : predictions) {
    json j;
    j["id"] = p.system_id;
    j["dim"] = p.dim;
    j["ok"] = p.ok;
    if (p.ok) {
      std::string tokens;
      const auto prefix = to_prefix(p.system);
      for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (i) tokens += ' ';
        tokens += prefix[i];
      }
      j["tokens"] = tokens;
      j["infix"] = render_system(p.system);
    } else {
      j["failure"] = p.failure;
    }
    j["rms"] = p.rms;
    std::vector<double> scores;
    for (const auto& c : p.candidates) scores.push_back(c.score);
    j["beam_scores"] = scores;
    if (!p.agg_weights.empty()) j["weights"] = p.agg_weights;
    out << j.dump() << "\n";
  }
}

std::vector<PredictionRow> load_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open predictions " + path);
  std::vector<PredictionRow> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(std::string("predictions line malformed: ") + e.what());
    }
    PredictionRow row;
    row.id = j.at("id").get<long>();
    row.dim = j.at("dim").get<int>();
    row.ok = j.at("ok").get<bool>();
    if (row.ok) {
      std::istringstream ts(j.at("tokens").get<std::string>());
      std::vector<std::string> tokens;
      std::string tok;
      while (ts >> tok) tokens.push_back(tok);
      std::string err;
      auto sys = parse_prefix(tokens, row.dim, &err);
      if (!sys) throw DataError("predictions row " + std::to_string(row.id) + " unparseable: " + err);
      row.system = std::move(*sys);
    }
    out.push_back(std::move(row));
  }
  if (out.empty()) throw DataError("predictions file " + path + " is empty");
  return out;
}

}  // namespace misode
