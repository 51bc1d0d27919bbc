#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"
#include "graph.hpp"
#include "tokenizer.hpp"

namespace misode {

enum class AggKind { Mean, Attentive, XAttnTimeAgnostic, AttnTimeAware };

std::string agg_name(AggKind k);
std::optional<AggKind> agg_from_name(const std::string& name);

struct ModelConfig {
  int vocab_size = 10219;
  int d_max = 4;

  int d_enc = 256;
  int enc_layers = 4;
  int enc_heads = 16;
  int enc_ffn = 1024;
  int embed_hidden = 512;  // hidden width of the 2-layer trajectory embedder

  int d_dec = 512;
  int dec_layers = 12;
  int dec_heads = 16;
  int dec_ffn = 2048;

  AggKind aggregator = AggKind::Mean;
  int agg_layers = 4;
  int agg_heads = 8;
  int agg_ffn = 1024;

  // Reserved for setups instantiating both condensing aggregators at once;
  // a single-aggregator model owns its time encoder outright.
  bool share_time_encoder = false;

  int max_points = 256;   // encoder positions (trajectory length)
  int max_target = 512;   // decoder positions

  static ModelConfig paper_exp1();  // 4/12 layers, 256/512
  static ModelConfig paper_exp2();  // 4/16 layers, 256/512
  static ModelConfig toy();         // 2/2 layers, 64/64, 4 heads
  static ModelConfig tiny_gradcheck();

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& json_text);
};

// Trajectory tokens arranged for the embedder: 3*(d_max+1) slots per time
// point, -1 marking the zero-padded slots of dimensions above D.
struct SlottedTokens {
  std::vector<int> slot_ids;
  long points = 0;
  long slots = 0;
};

SlottedTokens slot_trajectory_tokens(const std::vector<int>& tokens, int dim, int d_max);

template <typename T>
class Model {
 public:
  using Id = typename Graph<T>::Id;

  Model(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  // (s, d_enc): per-slot embeddings concatenated, 2-layer feedforward, plus
  // sinusoidal positions.
  Id embed_trajectory(Graph<T>& g, const SlottedTokens& tokens) const;

  // Transformer encoder stack; instances are independent mini-batch elements.
  Id encode(Graph<T>& g, Id h) const;

  // Class-token summary of a latent block, (1, d_enc).
  Id condense_time(Graph<T>& g, Id z) const;

  struct Aggregated {
    Id zbar = -1;
    std::vector<double> weights;  // attentive pooling diagnostics
  };
  Aggregated aggregate(Graph<T>& g, const std::vector<Id>& instance_latents) const;

  // Individual strategies (all return (s, d_enc)).
  Id aggregate_mean(Graph<T>& g, const std::vector<Id>& zs) const;
  Id aggregate_attentive(Graph<T>& g, const std::vector<Id>& zs, std::vector<double>* weights) const;
  Id aggregate_xattn_time_agnostic(Graph<T>& g, const std::vector<Id>& zs) const;
  Id aggregate_attn_time_aware(Graph<T>& g, const std::vector<Id>& zs) const;

  // (s, d_enc) -> (s, d_dec) learned bridge before cross-attention.
  Id bridge(Graph<T>& g, Id zbar) const;

  // Teacher-forced decoder logits for target_in (BOS-led, shifted) against
  // bridged memory; (|target_in|, vocab).
  Id decode_logits(Graph<T>& g, Id memory, const std::vector<int>& target_in) const;

  // Cross entropy over non-pad labels.
  Id loss(Graph<T>& g, Id logits, const std::vector<int>& labels) const;

  // Full pipeline for one system: embed/encode each instance, aggregate,
  // decode against the full target, return the scalar loss node.
  Id system_loss(Graph<T>& g, const std::vector<SlottedTokens>& instances,
                 const std::vector<int>& target) const;

  // Eval-mode memory for decoding (no-grad graph internally).
  Tensor<T> encode_and_aggregate(const std::vector<SlottedTokens>& instances,
                                 std::vector<double>* weights = nullptr) const;

  // One decoder step on a no-grad graph: logits row for the next token.
  Tensor<T> decode_step(const Tensor<T>& memory, const std::vector<int>& prefix) const;

  // Teacher-forced logits in eval mode (tests, exact-match scoring).
  Tensor<T> eval_logits(const std::vector<SlottedTokens>& instances,
                        const std::vector<int>& target_in) const;

  std::vector<Param<T>*> parameters() const;
  Param<T>* parameter(const std::string& name) const;
  long parameter_count() const;

  void zero_grads();

  void save(const std::string& path,
            const std::vector<std::pair<std::string, Tensor<T>>>& extra = {},
            long step = 0) const;
  struct Loaded {
    std::unique_ptr<Model<T>> model;
    std::vector<std::pair<std::string, Tensor<T>>> extra;
    long step = 0;
  };
  static Loaded load(const std::string& path);

 private:
  struct LinearP {
    Param<T>*W = nullptr, *b = nullptr;
  };
  struct NormP {
    Param<T>*gamma = nullptr, *beta = nullptr;
  };
  struct AttnP {
    LinearP q, k, v, o;
  };
  struct BlockP {  // pre-norm encoder block
    NormP ln1, ln2;
    AttnP attn;
    LinearP ff1, ff2;
  };
  struct DecBlockP {
    NormP ln1, ln2, ln3;
    AttnP self_attn, cross_attn;
    LinearP ff1, ff2;
  };
  struct TimeEncP {
    Param<T>* cls = nullptr;
    std::vector<BlockP> layers;
    NormP final_ln;
  };

  Param<T>* make_param(const std::string& name, long rows, long cols, const std::string& init);
  LinearP make_linear(const std::string& name, long in, long out);
  NormP make_norm(const std::string& name, long d);
  AttnP make_attn(const std::string& name, long d);
  BlockP make_block(const std::string& name, long d, long ffn);
  DecBlockP make_dec_block(const std::string& name, long d, long ffn);
  TimeEncP make_time_enc(const std::string& name, long d, long ffn, int layers);

  Id attn_full(Graph<T>& g, const AttnP& p, Id x_q, Id x_kv, int heads, bool causal) const;
  Id attn_blocks(Graph<T>& g, const AttnP& p, Id x, int heads, long nb, long block) const;
  Id block_forward(Graph<T>& g, const BlockP& p, Id x, int heads, long nb, long block) const;
  Id ffn_forward(Graph<T>& g, const LinearP& a, const LinearP& b, Id x) const;
  Id time_encoder_forward(Graph<T>& g, const TimeEncP& p, Id z) const;
  Id add_positions(Graph<T>& g, Id x, const Tensor<T>& table) const;

  ModelConfig cfg_;
  std::vector<std::unique_ptr<Param<T>>> params_;
  Rng init_rng_;

  // embedder
  Param<T>* enc_token_table_ = nullptr;
  LinearP emb1_, emb2_;
  // encoder
  std::vector<BlockP> enc_layers_;
  NormP enc_final_ln_;
  // aggregators (only the configured one is materialized)
  TimeEncP time_enc_;
  Param<T>* attn_score_w_ = nullptr;
  Param<T>* xattn_query_ = nullptr;
  AttnP xattn_;
  Param<T>* fusion_cls_ = nullptr;
  std::vector<BlockP> fusion_layers_;
  NormP fusion_final_ln_;
  // bridge + decoder
  LinearP bridge_;
  Param<T>* dec_token_table_ = nullptr;
  std::vector<DecBlockP> dec_layers_;
  NormP dec_final_ln_;
  LinearP head_;

  Tensor<T> pe_enc_;  // (max_points+1, d_enc)
  Tensor<T> pe_dec_;  // (max_target, d_dec)
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace misode
