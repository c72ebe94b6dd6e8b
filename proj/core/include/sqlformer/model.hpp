#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sqlformer/common.hpp"
#include "sqlformer/ops.hpp"
#include "sqlformer/tensor.hpp"

namespace sqlformer {

enum class Paradigm { EncDec, DecOnly };
enum class Activation { Relu, Gelu };

Paradigm paradigm_from_string(const std::string& s);
std::string to_string(Paradigm p);
Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct ModelConfig {
  Paradigm paradigm = Paradigm::EncDec;
  int n_layers = 2;  // per stack: enc_dec gets n_layers encoder + n_layers decoder
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 256;
  int vocab_size = 0;
  int max_positions = 0;
  float dropout_rate = 0.0f;
  Activation activation = Activation::Relu;

  void validate() const;
};

/// Desk-scale defaults: enc_dec {2+2 layers, d_model 128, 4 heads, d_ff 256},
/// dec_only {4 layers, same widths}. vocab_size / max_positions are filled
/// in from the data.
ModelConfig desk_config(Paradigm paradigm);

struct LayerNormWeights {
  Tensor gain;
  Tensor bias;
};

struct AttentionWeights {
  Tensor wq, bq;
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor wo, bo;
};

struct FeedForwardWeights {
  Tensor w1, b1;
  Tensor w2, b2;
};

/// Pre-layer-norm residual block shared by the encoder stack and the
/// decoder-only stack.
struct TransformerBlock {
  LayerNormWeights ln1;
  AttentionWeights self_attn;
  LayerNormWeights ln2;
  FeedForwardWeights ffn;
};

/// Decoder block with an extra cross-attention sublayer.
struct DecoderBlock {
  LayerNormWeights ln1;
  AttentionWeights self_attn;
  LayerNormWeights ln_cross;
  AttentionWeights cross_attn;
  LayerNormWeights ln2;
  FeedForwardWeights ffn;
};

/// Captures per-layer attention probabilities during a forward pass, for
/// tests that inspect row sums and masked-key mass. Order: encoder self
/// layers, then per decoder layer self + cross (enc_dec), or stack order
/// (dec_only).
struct ForwardProbe {
  std::vector<Tensor> attn_probs;
};

/// Parameter container for either paradigm. A model being trained is
/// confined to one thread (grads and the tape are not synchronized); a
/// frozen model is read-only under forward/generate and safe to share
/// across threads for inference.
class TransformerModel {
 public:
  TransformerModel() = default;

  const ModelConfig& config() const { return config_; }

  /// Stable (name, tensor) view over all parameters, in checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  size_t parameter_count() const;

  /// Closed-form count implied by a config; matches parameter_count()
  /// exactly for any instantiated model with that config.
  static size_t expected_parameter_count(const ModelConfig& config);

  Tensor tok_emb;
  Tensor pos_emb;
  std::vector<TransformerBlock> encoder;  // empty for dec_only
  std::vector<DecoderBlock> decoder;      // empty for dec_only
  std::vector<TransformerBlock> blocks;   // dec_only stack; empty for enc_dec
  LayerNormWeights enc_final_ln;          // enc_dec only
  LayerNormWeights final_ln;
  Tensor out_w, out_b;

  ModelConfig config_;
};

/// Deterministic initialization for (config, seed): truncated normal
/// std 0.02 for weights and embeddings, gains 1, biases 0.
TransformerModel init_parameters(const ModelConfig& config, uint64_t seed);

/// Scaled dot-product attention over n_heads heads with an optional
/// additive mask (0 / kMaskNegInf), heads concatenated and projected.
/// q_in: [Tq x d], k_in/v_in: [Tk x d]. probs_out, when non-null, receives
/// the post-softmax attention probabilities [h x Tq x Tk].
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const Tensor& mask, const AttentionWeights& weights, int n_heads,
                            Tensor* probs_out = nullptr);

/// Causal additive mask [t x t]: position i may attend to j <= i.
Tensor causal_mask(int t);

/// Additive mask [rows x len(key_ids)] dropping keys whose id is kPadId.
Tensor padding_key_mask(std::span<const int> key_ids, int rows);

/// Encoder stack over source ids (self-attention masked only at padding
/// keys), through the encoder final layer norm.
Tensor encode_source(const TransformerModel& model, std::span<const int> src_ids,
                     Rng* dropout_rng = nullptr, ForwardProbe* probe = nullptr);

/// Decoder stack given precomputed encoder output; causal self-attention
/// plus cross-attention with src padding keys masked. Returns logits
/// [len(tgt_ids) x vocab].
Tensor decode_with_encoder(const TransformerModel& model, std::span<const int> tgt_ids,
                           const Tensor& enc_out, std::span<const int> src_ids,
                           Rng* dropout_rng = nullptr, ForwardProbe* probe = nullptr);

/// Full encoder-decoder forward. Logits row t conditions on src and
/// tgt[0..t] (no internal shift).
Tensor forward_enc_dec(const TransformerModel& model, std::span<const int> src_ids,
                       std::span<const int> tgt_ids, Rng* dropout_rng = nullptr,
                       ForwardProbe* probe = nullptr);

/// Decoder-only forward with a causal mask; logits row t conditions on
/// ids[0..t].
Tensor forward_dec_only(const TransformerModel& model, std::span<const int> ids,
                        Rng* dropout_rng = nullptr, ForwardProbe* probe = nullptr);

/// One tokenized training example, as produced by make_training_pair.
struct TrainingPair {
  std::vector<int> input_ids;
  std::vector<int> label_ids;
};

/// Mean masked cross-entropy over all non-ignored positions in the batch.
/// Targets are the labels shifted left by one: logits at position t are
/// scored against label t+1.
Tensor loss(const TransformerModel& model, std::span<const TrainingPair> batch,
            Rng* dropout_rng = nullptr);

}  // namespace sqlformer
