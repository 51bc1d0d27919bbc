#include "model.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace misode {

using nlohmann::json;

std::string agg_name(AggKind k) {
  switch (k) {
    case AggKind::Mean:
      return "mean";
    case AggKind::Attentive:
      return "attentive";
    case AggKind::XAttnTimeAgnostic:
      return "xattn";
    case AggKind::AttnTimeAware:
      return "timeaware";
  }
  return "mean";
}

std::optional<AggKind> agg_from_name(const std::string& name) {
  if (name == "mean") return AggKind::Mean;
  if (name == "attentive") return AggKind::Attentive;
  if (name == "xattn") return AggKind::XAttnTimeAgnostic;
  if (name == "timeaware") return AggKind::AttnTimeAware;
  return std::nullopt;
}

ModelConfig ModelConfig::paper_exp1() { return ModelConfig{}; }

ModelConfig ModelConfig::paper_exp2() {
  ModelConfig c;
  c.dec_layers = 16;
  return c;
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.d_enc = 64;
  c.enc_layers = 2;
  c.enc_heads = 4;
  c.enc_ffn = 256;
  c.embed_hidden = 128;
  c.d_dec = 64;
  c.dec_layers = 2;
  c.dec_heads = 4;
  c.dec_ffn = 256;
  c.agg_heads = 8;
  c.agg_ffn = 256;
  c.max_points = 128;
  c.max_target = 256;
  return c;
}

ModelConfig ModelConfig::tiny_gradcheck() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_max = 2;
  c.d_enc = 32;
  c.enc_layers = 2;
  c.enc_heads = 4;
  c.enc_ffn = 64;
  c.embed_hidden = 32;
  c.d_dec = 32;
  c.dec_layers = 2;
  c.dec_heads = 4;
  c.dec_ffn = 64;
  c.agg_heads = 8;
  c.agg_ffn = 64;
  c.max_points = 16;
  c.max_target = 16;
  return c;
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("model config: ") + what);
  };
  require(vocab_size > 0, "vocab size must be positive");
  require(d_max >= 1 && d_max <= 4, "d_max must be in [1, 4]");
  require(d_enc > 0 && d_dec > 0, "embedding widths must be positive");
  require(enc_layers > 0 && dec_layers > 0 && agg_layers > 0, "depths must be positive");
  require(d_enc % enc_heads == 0, "encoder heads must divide d_enc");
  require(d_dec % dec_heads == 0, "decoder heads must divide d_dec");
  require(d_enc % agg_heads == 0, "aggregator heads must divide d_enc");
  require(embed_hidden > 0 && enc_ffn > 0 && dec_ffn > 0 && agg_ffn > 0,
          "feedforward widths must be positive");
  require(max_points > 1 && max_target > 1, "position budgets must exceed 1");
}

std::string ModelConfig::to_json() const {
  json j;
  j["vocab_size"] = vocab_size;
  j["d_max"] = d_max;
  j["d_enc"] = d_enc;
  j["enc_layers"] = enc_layers;
  j["enc_heads"] = enc_heads;
  j["enc_ffn"] = enc_ffn;
  j["embed_hidden"] = embed_hidden;
  j["d_dec"] = d_dec;
  j["dec_layers"] = dec_layers;
  j["dec_heads"] = dec_heads;
  j["dec_ffn"] = dec_ffn;
  j["aggregator"] = agg_name(aggregator);
  j["agg_layers"] = agg_layers;
  j["agg_heads"] = agg_heads;
  j["agg_ffn"] = agg_ffn;
  j["share_time_encoder"] = share_time_encoder;
  j["max_points"] = max_points;
  j["max_target"] = max_target;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_max = j.value("d_max", c.d_max);
    c.d_enc = j.value("d_enc", c.d_enc);
    c.enc_layers = j.value("enc_layers", c.enc_layers);
    c.enc_heads = j.value("enc_heads", c.enc_heads);
    c.enc_ffn = j.value("enc_ffn", c.enc_ffn);
    c.embed_hidden = j.value("embed_hidden", c.embed_hidden);
    c.d_dec = j.value("d_dec", c.d_dec);
    c.dec_layers = j.value("dec_layers", c.dec_layers);
    c.dec_heads = j.value("dec_heads", c.dec_heads);
    c.dec_ffn = j.value("dec_ffn", c.dec_ffn);
    if (j.contains("aggregator")) {
      auto k = agg_from_name(j["aggregator"].get<std::string>());
      if (!k) throw ConfigError("unknown aggregator: " + j["aggregator"].get<std::string>());
      c.aggregator = *k;
    }
    c.agg_layers = j.value("agg_layers", c.agg_layers);
    c.agg_heads = j.value("agg_heads", c.agg_heads);
    c.agg_ffn = j.value("agg_ffn", c.agg_ffn);
    c.share_time_encoder = j.value("share_time_encoder", c.share_time_encoder);
    c.max_points = j.value("max_points", c.max_points);
    c.max_target = j.value("max_target", c.max_target);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config malformed: ") + e.what());
  }
  c.validate();
  return c;
}

SlottedTokens slot_trajectory_tokens(const std::vector<int>& tokens, int dim, int d_max) {
  if (dim > d_max) throw DataError("trajectory dimension exceeds the model's d_max");
  const long per_point = 3L * (dim + 1);
  if (tokens.empty() || tokens.size() % per_point != 0)
    throw DataError("trajectory token stream has wrong length");
  SlottedTokens out;
  out.points = static_cast<long>(tokens.size()) / per_point;
  out.slots = 3L * (d_max + 1);
  out.slot_ids.assign(static_cast<std::size_t>(out.points * out.slots), -1);
  for (long p = 0; p < out.points; ++p)
    for (long i = 0; i < per_point; ++i)
      out.slot_ids[static_cast<std::size_t>(p * out.slots + i)] =
          tokens[static_cast<std::size_t>(p * per_point + i)];
  return out;
}

namespace {

template <typename T>
Tensor<T> sinusoidal_positions(long max_pos, long d) {
  Tensor<T> pe(max_pos, d);
  for (long pos = 0; pos < max_pos; ++pos)
    for (long i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / d);
      pe.at(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe.at(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  return pe;
}

}  // namespace

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), init_rng_(seed) {
  cfg_.validate();
  const long d_enc = cfg_.d_enc, d_dec = cfg_.d_dec;
  const long slots = 3L * (cfg_.d_max + 1);

  enc_token_table_ = make_param("embedder.table", cfg_.vocab_size, d_enc, "embed");
  emb1_ = make_linear("embedder.ff1", slots * d_enc, cfg_.embed_hidden);
  emb2_ = make_linear("embedder.ff2", cfg_.embed_hidden, d_enc);

  for (int l = 0; l < cfg_.enc_layers; ++l)
    enc_layers_.push_back(make_block("encoder." + std::to_string(l), d_enc, cfg_.enc_ffn));
  enc_final_ln_ = make_norm("encoder.final_ln", d_enc);

  switch (cfg_.aggregator) {
    case AggKind::Mean:
      break;
    case AggKind::Attentive:
      time_enc_ = make_time_enc("agg.time", d_enc, cfg_.agg_ffn, cfg_.agg_layers);
      attn_score_w_ = make_param("agg.score_w", d_enc, 1, "xavier");
      break;
    case AggKind::XAttnTimeAgnostic:
      xattn_query_ = make_param("agg.query", 1, d_enc, "embed");
      xattn_ = make_attn("agg.xattn", d_enc);
      break;
    case AggKind::AttnTimeAware:
      time_enc_ = make_time_enc("agg.time", d_enc, cfg_.agg_ffn, cfg_.agg_layers);
      fusion_cls_ = make_param("agg.fusion_cls", 1, d_enc, "embed");
      for (int l = 0; l < cfg_.agg_layers; ++l)
        fusion_layers_.push_back(make_block("agg.fusion." + std::to_string(l), d_enc, cfg_.agg_ffn));
      fusion_final_ln_ = make_norm("agg.fusion.final_ln", d_enc);
      break;
  }

  bridge_ = make_linear("bridge", d_enc, d_dec);
  dec_token_table_ = make_param("decoder.table", cfg_.vocab_size, d_dec, "embed");
  for (int l = 0; l < cfg_.dec_layers; ++l)
    dec_layers_.push_back(make_dec_block("decoder." + std::to_string(l), d_dec, cfg_.dec_ffn));
  dec_final_ln_ = make_norm("decoder.final_ln", d_dec);
  head_ = make_linear("head", d_dec, cfg_.vocab_size);

  pe_enc_ = sinusoidal_positions<T>(cfg_.max_points + 1, d_enc);
  pe_dec_ = sinusoidal_positions<T>(cfg_.max_target, d_dec);
}

template <typename T>
Param<T>* Model<T>::make_param(const std::string& name, long rows, long cols,
                               const std::string& init) {
  Tensor<T> v(rows, cols);
  if (init == "xavier") {
    const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
    for (long i = 0; i < v.size(); ++i)
      v.data()[i] = static_cast<T>((init_rng_.uniform() * 2.0 - 1.0) * limit);
  } else if (init == "embed") {
    for (long i = 0; i < v.size(); ++i) v.data()[i] = static_cast<T>(init_rng_.normal() * 0.02);
  } else if (init == "ones") {
    for (long i = 0; i < v.size(); ++i) v.data()[i] = T(1);
  }  // "zeros": already zero
  params_.push_back(std::make_unique<Param<T>>(name, std::move(v)));
  return params_.back().get();
}

template <typename T>
typename Model<T>::LinearP Model<T>::make_linear(const std::string& name, long in, long out) {
  LinearP p;
  p.W = make_param(name + ".W", in, out, "xavier");
  p.b = make_param(name + ".b", 1, out, "zeros");
  return p;
}

template <typename T>
typename Model<T>::NormP Model<T>::make_norm(const std::string& name, long d) {
  NormP p;
  p.gamma = make_param(name + ".gamma", 1, d, "ones");
  p.beta = make_param(name + ".beta", 1, d, "zeros");
  return p;
}

template <typename T>
typename Model<T>::AttnP Model<T>::make_attn(const std::string& name, long d) {
  AttnP p;
  p.q = make_linear(name + ".q", d, d);
  p.k = make_linear(name + ".k", d, d);
  p.v = make_linear(name + ".v", d, d);
  p.o = make_linear(name + ".o", d, d);
  return p;
}

template <typename T>
typename Model<T>::BlockP Model<T>::make_block(const std::string& name, long d, long ffn) {
  BlockP p;
  p.ln1 = make_norm(name + ".ln1", d);
  p.ln2 = make_norm(name + ".ln2", d);
  p.attn = make_attn(name + ".attn", d);
  p.ff1 = make_linear(name + ".ff1", d, ffn);
  p.ff2 = make_linear(name + ".ff2", ffn, d);
  return p;
}

template <typename T>
typename Model<T>::DecBlockP Model<T>::make_dec_block(const std::string& name, long d, long ffn) {
  DecBlockP p;
  p.ln1 = make_norm(name + ".ln1", d);
  p.ln2 = make_norm(name + ".ln2", d);
  p.ln3 = make_norm(name + ".ln3", d);
  p.self_attn = make_attn(name + ".self", d);
  p.cross_attn = make_attn(name + ".cross", d);
  p.ff1 = make_linear(name + ".ff1", d, ffn);
  p.ff2 = make_linear(name + ".ff2", ffn, d);
  return p;
}

template <typename T>
typename Model<T>::TimeEncP Model<T>::make_time_enc(const std::string& name, long d, long ffn,
                                                    int layers) {
  TimeEncP p;
  p.cls = make_param(name + ".cls", 1, d, "embed");
  for (int l = 0; l < layers; ++l)
    p.layers.push_back(make_block(name + "." + std::to_string(l), d, ffn));
  p.final_ln = make_norm(name + ".final_ln", d);
  return p;
}

// ---- forward pieces -------------------------------------------------------

template <typename T>
typename Model<T>::Id Model<T>::add_positions(Graph<T>& g, Id x, const Tensor<T>& table) const {
  const auto& xv = g.value(x);
  if (xv.rows() > table.rows()) throw DataError("sequence exceeds the positional table");
  Tensor<T> pe(xv.rows(), xv.cols());
  pe.map() = table.map().topRows(xv.rows());
  return g.add(x, g.input(std::move(pe)));
}

template <typename T>
typename Model<T>::Id Model<T>::embed_trajectory(Graph<T>& g, const SlottedTokens& tokens) const {
  if (tokens.slots != 3L * (cfg_.d_max + 1)) throw DataError("slot layout mismatch");
  if (tokens.points > cfg_.max_points) throw DataError("trajectory longer than max_points");
  Id cat = g.embed_slots(g.param(*enc_token_table_), tokens.slot_ids, tokens.points, tokens.slots);
  Id h = g.linear(cat, g.param(*emb1_.W), g.param(*emb1_.b));
  h = g.gelu(h);
  h = g.linear(h, g.param(*emb2_.W), g.param(*emb2_.b));
  return add_positions(g, h, pe_enc_);
}

template <typename T>
typename Model<T>::Id Model<T>::attn_full(Graph<T>& g, const AttnP& p, Id x_q, Id x_kv, int heads,
                                          bool causal) const {
  Id q = g.linear(x_q, g.param(*p.q.W), g.param(*p.q.b));
  Id k = g.linear(x_kv, g.param(*p.k.W), g.param(*p.k.b));
  Id v = g.linear(x_kv, g.param(*p.v.W), g.param(*p.v.b));
  Id a = g.mha(q, k, v, heads, 1, g.value(x_q).rows(), g.value(x_kv).rows(), causal);
  return g.linear(a, g.param(*p.o.W), g.param(*p.o.b));
}

template <typename T>
typename Model<T>::Id Model<T>::attn_blocks(Graph<T>& g, const AttnP& p, Id x, int heads, long nb,
                                            long block) const {
  Id q = g.linear(x, g.param(*p.q.W), g.param(*p.q.b));
  Id k = g.linear(x, g.param(*p.k.W), g.param(*p.k.b));
  Id v = g.linear(x, g.param(*p.v.W), g.param(*p.v.b));
  Id a = g.mha(q, k, v, heads, nb, block, block, false);
  return g.linear(a, g.param(*p.o.W), g.param(*p.o.b));
}

template <typename T>
typename Model<T>::Id Model<T>::ffn_forward(Graph<T>& g, const LinearP& a, const LinearP& b,
                                            Id x) const {
  Id h = g.linear(x, g.param(*a.W), g.param(*a.b));
  h = g.gelu(h);
  return g.linear(h, g.param(*b.W), g.param(*b.b));
}

// Pre-norm block; nb*block must equal the row count.
template <typename T>
typename Model<T>::Id Model<T>::block_forward(Graph<T>& g, const BlockP& p, Id x, int heads,
                                              long nb, long block) const {
  Id u = g.layer_norm(x, g.param(*p.ln1.gamma), g.param(*p.ln1.beta));
  x = g.add(x, attn_blocks(g, p.attn, u, heads, nb, block));
  u = g.layer_norm(x, g.param(*p.ln2.gamma), g.param(*p.ln2.beta));
  return g.add(x, ffn_forward(g, p.ff1, p.ff2, u));
}

template <typename T>
typename Model<T>::Id Model<T>::encode(Graph<T>& g, Id h) const {
  const long s = g.value(h).rows();
  Id x = h;
  for (const BlockP& p : enc_layers_) x = block_forward(g, p, x, cfg_.enc_heads, 1, s);
  return g.layer_norm(x, g.param(*enc_final_ln_.gamma), g.param(*enc_final_ln_.beta));
}

template <typename T>
typename Model<T>::Id Model<T>::time_encoder_forward(Graph<T>& g, const TimeEncP& p, Id z) const {
  Id seq = g.concat_rows({g.param(*p.cls), z});
  seq = add_positions(g, seq, pe_enc_);
  const long rows = g.value(seq).rows();
  for (const BlockP& b : p.layers) seq = block_forward(g, b, seq, cfg_.agg_heads, 1, rows);
  seq = g.layer_norm(seq, g.param(*p.final_ln.gamma), g.param(*p.final_ln.beta));
  return g.take_rows(seq, {0});
}

template <typename T>
typename Model<T>::Id Model<T>::condense_time(Graph<T>& g, Id z) const {
  if (!time_enc_.cls) throw RuntimeFailure("condense_time: model has no time encoder");
  return time_encoder_forward(g, time_enc_, z);
}

template <typename T>
typename Model<T>::Id Model<T>::aggregate_mean(Graph<T>& g, const std::vector<Id>& zs) const {
  if (zs.empty()) throw std::invalid_argument("aggregate: empty instance list");
  return g.average(zs);
}

template <typename T>
typename Model<T>::Id Model<T>::aggregate_attentive(Graph<T>& g, const std::vector<Id>& zs,
                                                    std::vector<double>* weights) const {
  if (zs.empty()) throw std::invalid_argument("aggregate: empty instance list");
  std::vector<Id> condensed;
  condensed.reserve(zs.size());
  for (Id z : zs) condensed.push_back(condense_time(g, z));
  Id stacked = g.concat_rows(condensed);                       // (n, d)
  Id scores = g.matmul(stacked, g.param(*attn_score_w_));      // (n, 1)
  Id w = g.softmax_col(scores);
  if (weights) {
    weights->clear();
    for (long j = 0; j < g.value(w).rows(); ++j)
      weights->push_back(static_cast<double>(g.value(w).at(j, 0)));
  }
  return g.weighted_sum(zs, w);
}

template <typename T>
typename Model<T>::Id Model<T>::aggregate_xattn_time_agnostic(Graph<T>& g,
                                                              const std::vector<Id>& zs) const {
  if (zs.empty()) throw std::invalid_argument("aggregate: empty instance list");
  const long n = static_cast<long>(zs.size());
  const long s = g.value(zs[0]).rows();
  // Row t*n + j holds instance j at time t.
  Id stacked = g.concat_rows(zs);  // (n*s, d), instance-major
  std::vector<long> interleave(static_cast<std::size_t>(n * s));
  for (long t = 0; t < s; ++t)
    for (long j = 0; j < n; ++j) interleave[static_cast<std::size_t>(t * n + j)] = j * s + t;
  Id kv_src = g.take_rows(stacked, std::move(interleave));
  Id k = g.linear(kv_src, g.param(*xattn_.k.W), g.param(*xattn_.k.b));
  Id v = g.linear(kv_src, g.param(*xattn_.v.W), g.param(*xattn_.v.b));
  Id qrow = g.linear(g.param(*xattn_query_), g.param(*xattn_.q.W), g.param(*xattn_.q.b));
  Id q = g.repeat_row(qrow, s);  // the broadcast learnable query
  Id a = g.mha(q, k, v, cfg_.agg_heads, s, 1, n, false);
  return g.linear(a, g.param(*xattn_.o.W), g.param(*xattn_.o.b));
}

template <typename T>
typename Model<T>::Id Model<T>::aggregate_attn_time_aware(Graph<T>& g,
                                                          const std::vector<Id>& zs) const {
  if (zs.empty()) throw std::invalid_argument("aggregate: empty instance list");
  const long n = static_cast<long>(zs.size());
  const long s = g.value(zs[0]).rows();
  std::vector<Id> sources = zs;
  for (Id z : zs) sources.push_back(condense_time(g, z));  // (1, d) each
  sources.push_back(g.param(*fusion_cls_));
  Id stacked = g.concat_rows(sources);  // rows: n*s latents, n condensed, class

  // Per time index: n latents, n condensed, class token -> width 2n+1.
  const long width = 2 * n + 1;
  std::vector<long> gather(static_cast<std::size_t>(s * width));
  for (long t = 0; t < s; ++t) {
    for (long j = 0; j < n; ++j) gather[static_cast<std::size_t>(t * width + j)] = j * s + t;
    for (long j = 0; j < n; ++j) gather[static_cast<std::size_t>(t * width + n + j)] = n * s + j;
    gather[static_cast<std::size_t>(t * width + 2 * n)] = n * s + n;
  }
  // No positions on the instance axis: the class token is distinguished by
  // its learned value only, keeping the fusion permutation-invariant.
  Id zp = g.take_rows(stacked, std::move(gather));
  for (const BlockP& b : fusion_layers_) zp = block_forward(g, b, zp, cfg_.agg_heads, s, width);
  zp = g.layer_norm(zp, g.param(*fusion_final_ln_.gamma), g.param(*fusion_final_ln_.beta));
  std::vector<long> cls_rows(static_cast<std::size_t>(s));
  for (long t = 0; t < s; ++t) cls_rows[static_cast<std::size_t>(t)] = t * width + 2 * n;
  return g.take_rows(zp, std::move(cls_rows));
}

template <typename T>
typename Model<T>::Aggregated Model<T>::aggregate(Graph<T>& g,
                                                  const std::vector<Id>& instance_latents) const {
  Aggregated out;
  switch (cfg_.aggregator) {
    case AggKind::Mean:
      out.zbar = aggregate_mean(g, instance_latents);
      break;
    case AggKind::Attentive:
      out.zbar = aggregate_attentive(g, instance_latents, &out.weights);
      break;
    case AggKind::XAttnTimeAgnostic:
      out.zbar = aggregate_xattn_time_agnostic(g, instance_latents);
      break;
    case AggKind::AttnTimeAware:
      out.zbar = aggregate_attn_time_aware(g, instance_latents);
      break;
  }
  return out;
}

template <typename T>
typename Model<T>::Id Model<T>::bridge(Graph<T>& g, Id zbar) const {
  return g.linear(zbar, g.param(*bridge_.W), g.param(*bridge_.b));
}

template <typename T>
typename Model<T>::Id Model<T>::decode_logits(Graph<T>& g, Id memory,
                                              const std::vector<int>& target_in) const {
  if (target_in.empty()) throw DataError("decode_logits: empty target");
  if (static_cast<long>(target_in.size()) > cfg_.max_target)
    throw DataError("decode_logits: target exceeds maximum length");
  Id x = g.embed_rows(g.param(*dec_token_table_), target_in);
  x = g.scale(x, static_cast<T>(std::sqrt(static_cast<double>(cfg_.d_dec))));
  x = add_positions(g, x, pe_dec_);
  for (const DecBlockP& p : dec_layers_) {
    Id u = g.layer_norm(x, g.param(*p.ln1.gamma), g.param(*p.ln1.beta));
    x = g.add(x, attn_full(g, p.self_attn, u, u, cfg_.dec_heads, /*causal=*/true));
    u = g.layer_norm(x, g.param(*p.ln2.gamma), g.param(*p.ln2.beta));
    x = g.add(x, attn_full(g, p.cross_attn, u, memory, cfg_.dec_heads, false));
    u = g.layer_norm(x, g.param(*p.ln3.gamma), g.param(*p.ln3.beta));
    x = g.add(x, ffn_forward(g, p.ff1, p.ff2, u));
  }
  x = g.layer_norm(x, g.param(*dec_final_ln_.gamma), g.param(*dec_final_ln_.beta));
  return g.linear(x, g.param(*head_.W), g.param(*head_.b));
}

template <typename T>
typename Model<T>::Id Model<T>::loss(Graph<T>& g, Id logits, const std::vector<int>& labels) const {
  return g.cross_entropy(logits, labels, Vocab::instance().pad_id() < cfg_.vocab_size
                                             ? Vocab::instance().pad_id()
                                             : -1);
}

template <typename T>
typename Model<T>::Id Model<T>::system_loss(Graph<T>& g, const std::vector<SlottedTokens>& instances,
                                            const std::vector<int>& target) const {
  if (target.size() < 2) throw DataError("system_loss: target needs BOS and EOS");
  std::vector<Id> latents;
  latents.reserve(instances.size());
  for (const SlottedTokens& inst : instances) latents.push_back(encode(g, embed_trajectory(g, inst)));
  Aggregated agg = aggregate(g, latents);
  Id mem = bridge(g, agg.zbar);
  const std::vector<int> target_in(target.begin(), target.end() - 1);
  const std::vector<int> labels(target.begin() + 1, target.end());
  Id logits = decode_logits(g, mem, target_in);
  return loss(g, logits, labels);
}

template <typename T>
Tensor<T> Model<T>::encode_and_aggregate(const std::vector<SlottedTokens>& instances,
                                         std::vector<double>* weights) const {
  Graph<T> g(false);
  std::vector<Id> latents;
  for (const SlottedTokens& inst : instances) latents.push_back(encode(g, embed_trajectory(g, inst)));
  Aggregated agg = aggregate(g, latents);
  if (weights) *weights = agg.weights;
  Id mem = bridge(g, agg.zbar);
  return g.value(mem);
}

template <typename T>
Tensor<T> Model<T>::decode_step(const Tensor<T>& memory, const std::vector<int>& prefix) const {
  Graph<T> g(false);
  Id mem = g.input(memory);
  Id logits = decode_logits(g, mem, prefix);
  const auto& lv = g.value(logits);
  Tensor<T> last(1, lv.cols());
  last.map().row(0) = lv.map().row(lv.rows() - 1);
  return last;
}

template <typename T>
Tensor<T> Model<T>::eval_logits(const std::vector<SlottedTokens>& instances,
                                const std::vector<int>& target_in) const {
  Tensor<T> mem = encode_and_aggregate(instances);
  Graph<T> g(false);
  return g.value(decode_logits(g, g.input(std::move(mem)), target_in));
}

template <typename T>
std::vector<Param<T>*> Model<T>::parameters() const {
  std::vector<Param<T>*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

template <typename T>
Param<T>* Model<T>::parameter(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename T>
long Model<T>::parameter_count() const {
  long n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

template <typename T>
void Model<T>::zero_grads() {
  for (const auto& p : params_) p->grad.set_zero();
}

// ---- checkpoint container ---------------------------------------------------
//
// magic | u64 header length | header JSON | raw tensor data in header order.

namespace {
constexpr char kCkptMagic[8] = {'M', 'I', 'S', 'O', 'C', 'K', 'P', '1'};
}

template <typename T>
void Model<T>::save(const std::string& path,
                    const std::vector<std::pair<std::string, Tensor<T>>>& extra, long step) const {
  json header;
  header["version"] = 1;
  header["dtype"] = std::is_same_v<T, double> ? "f64" : "f32";
  header["step"] = step;
  header["config"] = json::parse(cfg_.to_json());
  json tensors = json::array();
  for (const auto& p : params_)
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  for (const auto& [name, t] : extra)
    tensors.push_back({{"name", "extra:" + name}, {"rows", t.rows()}, {"cols", t.cols()}});
  header["tensors"] = tensors;
  const std::string htext = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for (const auto& p : params_)
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(T) * p->value.size()));
  for (const auto& [name, t] : extra)
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(T) * t.size()));
  if (!out) throw DataError("failed writing checkpoint " + path);
}

template <typename T>
typename Model<T>::Loaded Model<T>::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw DataError("not a checkpoint file: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw DataError("truncated checkpoint header: " + path);
  json header;
  try {
    header = json::parse(htext);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint header malformed: ") + e.what());
  }
  const std::string want_dtype = std::is_same_v<T, double> ? "f64" : "f32";
  if (header.at("dtype").get<std::string>() != want_dtype)
    throw DataError("checkpoint dtype mismatch: expected " + want_dtype);

  Loaded out;
  out.step = header.value("step", 0L);
  const ModelConfig cfg = ModelConfig::from_json(header.at("config").dump());
  out.model = std::make_unique<Model<T>>(cfg, 0);

  std::size_t param_idx = 0;
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name").get<std::string>();
    const long rows = tj.at("rows").get<long>();
    const long cols = tj.at("cols").get<long>();
    Tensor<T> t(rows, cols);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(sizeof(T) * t.size()));
    if (!in) throw DataError("truncated checkpoint data: " + path);
    if (name.rfind("extra:", 0) == 0) {
      out.extra.emplace_back(name.substr(6), std::move(t));
      continue;
    }
    if (param_idx >= out.model->params_.size())
      throw DataError("checkpoint has more parameters than the config defines");
    Param<T>* p = out.model->params_[param_idx].get();
    if (p->name != name || p->value.rows() != rows || p->value.cols() != cols)
      throw DataError("checkpoint parameter mismatch at " + name + " (config conflict)");
    p->value = std::move(t);
    ++param_idx;
  }
  if (param_idx != out.model->params_.size())
    throw DataError("checkpoint is missing parameters for this config");
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace misode
