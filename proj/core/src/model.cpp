#include "sqlformer/model.hpp"

#include <numeric>

#include "sqlformer/tokenizer.hpp"

namespace sqlformer {

Paradigm paradigm_from_string(const std::string& s) {
  if (s == "enc_dec") return Paradigm::EncDec;
  if (s == "dec_only") return Paradigm::DecOnly;
  throw DataError("unknown paradigm '" + s + "' (expected enc_dec or dec_only)");
}

std::string to_string(Paradigm p) { return p == Paradigm::EncDec ? "enc_dec" : "dec_only"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "gelu") return Activation::Gelu;
  throw DataError("unknown activation '" + s + "' (expected relu or gelu)");
}

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "gelu"; }

void ModelConfig::validate() const {
  if (n_layers < 1) throw DataError("model config: n_layers must be >= 1");
  if (n_heads < 1) throw DataError("model config: n_heads must be >= 1");
  if (d_model < 1 || d_model % n_heads != 0) {
    throw DataError("model config: d_model " + std::to_string(d_model) +
                    " must be divisible by n_heads " + std::to_string(n_heads));
  }
  if (d_ff < 1) throw DataError("model config: d_ff must be >= 1");
  if (vocab_size < 2) throw DataError("model config: vocab_size must be >= 2");
  if (max_positions < 1) throw DataError("model config: max_positions must be >= 1");
  if (dropout_rate < 0.0f || dropout_rate >= 1.0f) {
    throw DataError("model config: dropout_rate must lie in [0, 1)");
  }
}

ModelConfig desk_config(Paradigm paradigm) {
  ModelConfig cfg;
  cfg.paradigm = paradigm;
  cfg.n_layers = paradigm == Paradigm::EncDec ? 2 : 4;
  cfg.n_heads = 4;
  cfg.d_model = 128;
  cfg.d_ff = 256;
  return cfg;
}

namespace {

constexpr float kInitStd = 0.02f;

Tensor init_weight(Shape shape, Rng& rng) {
  std::vector<float> data(shape_numel(shape));
  for (float& v : data) v = rng.truncated_normal(kInitStd);
  return Tensor::parameter(std::move(shape), std::move(data));
}

Tensor init_const(Shape shape, float value) {
  std::vector<float> data(shape_numel(shape), value);
  return Tensor::parameter(std::move(shape), std::move(data));
}

LayerNormWeights init_layer_norm(int d) { return {init_const({d}, 1.0f), init_const({d}, 0.0f)}; }

AttentionWeights init_attention(int d, Rng& rng) {
  return {init_weight({d, d}, rng), init_const({d}, 0.0f), init_weight({d, d}, rng),
          init_const({d}, 0.0f),    init_weight({d, d}, rng), init_const({d}, 0.0f),
          init_weight({d, d}, rng), init_const({d}, 0.0f)};
}

FeedForwardWeights init_ffn(int d, int f, Rng& rng) {
  return {init_weight({d, f}, rng), init_const({f}, 0.0f), init_weight({f, d}, rng),
          init_const({d}, 0.0f)};
}

TransformerBlock init_block(int d, int f, Rng& rng) {
  return {init_layer_norm(d), init_attention(d, rng), init_layer_norm(d), init_ffn(d, f, rng)};
}

DecoderBlock init_decoder_block(int d, int f, Rng& rng) {
  return {init_layer_norm(d),     init_attention(d, rng), init_layer_norm(d),
          init_attention(d, rng), init_layer_norm(d),     init_ffn(d, f, rng)};
}

void collect_layer_norm(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                        const LayerNormWeights& ln) {
  out.emplace_back(name + ".gain", ln.gain);
  out.emplace_back(name + ".bias", ln.bias);
}

void collect_attention(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                       const AttentionWeights& w) {
  out.emplace_back(name + ".wq", w.wq);
  out.emplace_back(name + ".bq", w.bq);
  out.emplace_back(name + ".wk", w.wk);
  out.emplace_back(name + ".bk", w.bk);
  out.emplace_back(name + ".wv", w.wv);
  out.emplace_back(name + ".bv", w.bv);
  out.emplace_back(name + ".wo", w.wo);
  out.emplace_back(name + ".bo", w.bo);
}

void collect_ffn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                 const FeedForwardWeights& w) {
  out.emplace_back(name + ".w1", w.w1);
  out.emplace_back(name + ".b1", w.b1);
  out.emplace_back(name + ".w2", w.w2);
  out.emplace_back(name + ".b2", w.b2);
}

void collect_block(std::vector<std::pair<std::string, Tensor>>& out, const std::string& name,
                   const TransformerBlock& b) {
  collect_layer_norm(out, name + ".ln1", b.ln1);
  collect_attention(out, name + ".self_attn", b.self_attn);
  collect_layer_norm(out, name + ".ln2", b.ln2);
  collect_ffn(out, name + ".ffn", b.ffn);
}

void collect_decoder_block(std::vector<std::pair<std::string, Tensor>>& out,
                           const std::string& name, const DecoderBlock& b) {
  collect_layer_norm(out, name + ".ln1", b.ln1);
  collect_attention(out, name + ".self_attn", b.self_attn);
  collect_layer_norm(out, name + ".ln_cross", b.ln_cross);
  collect_attention(out, name + ".cross_attn", b.cross_attn);
  collect_layer_norm(out, name + ".ln2", b.ln2);
  collect_ffn(out, name + ".ffn", b.ffn);
}

}  // namespace

TransformerModel init_parameters(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  TransformerModel m;
  m.config_ = config;
  m.tok_emb = init_weight({config.vocab_size, config.d_model}, rng);
  m.pos_emb = init_weight({config.max_positions, config.d_model}, rng);
  if (config.paradigm == Paradigm::EncDec) {
    for (int i = 0; i < config.n_layers; ++i) {
      m.encoder.push_back(init_block(config.d_model, config.d_ff, rng));
    }
    m.enc_final_ln = init_layer_norm(config.d_model);
    for (int i = 0; i < config.n_layers; ++i) {
      m.decoder.push_back(init_decoder_block(config.d_model, config.d_ff, rng));
    }
  } else {
    for (int i = 0; i < config.n_layers; ++i) {
      m.blocks.push_back(init_block(config.d_model, config.d_ff, rng));
    }
  }
  m.final_ln = init_layer_norm(config.d_model);
  m.out_w = init_weight({config.d_model, config.vocab_size}, rng);
  m.out_b = init_const({config.vocab_size}, 0.0f);
  return m;
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (size_t i = 0; i < encoder.size(); ++i) {
    collect_block(out, "encoder." + std::to_string(i), encoder[i]);
  }
  if (config_.paradigm == Paradigm::EncDec) {
    collect_layer_norm(out, "enc_final_ln", enc_final_ln);
  }
  for (size_t i = 0; i < decoder.size(); ++i) {
    collect_decoder_block(out, "decoder." + std::to_string(i), decoder[i]);
  }
  for (size_t i = 0; i < blocks.size(); ++i) {
    collect_block(out, "block." + std::to_string(i), blocks[i]);
  }
  collect_layer_norm(out, "final_ln", final_ln);
  out.emplace_back("out_w", out_w);
  out.emplace_back("out_b", out_b);
  return out;
}

std::vector<Tensor> TransformerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

size_t TransformerModel::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

size_t TransformerModel::expected_parameter_count(const ModelConfig& config) {
  size_t d = static_cast<size_t>(config.d_model);
  size_t f = static_cast<size_t>(config.d_ff);
  size_t v = static_cast<size_t>(config.vocab_size);
  size_t p = static_cast<size_t>(config.max_positions);
  size_t layers = static_cast<size_t>(config.n_layers);

  size_t ln = 2 * d;
  size_t attn = 4 * (d * d + d);
  size_t ffn = d * f + f + f * d + d;
  size_t block = ln + attn + ln + ffn;

  size_t total = v * d + p * d;  // embeddings
  if (config.paradigm == Paradigm::EncDec) {
    size_t dec_block = block + ln + attn;  // extra cross-attention sublayer
    total += layers * block + ln;          // encoder stack + its final norm
    total += layers * dec_block;
  } else {
    total += layers * block;
  }
  total += ln;          // final norm
  total += d * v + v;   // output projection
  return total;
}

Tensor causal_mask(int t) {
  std::vector<float> mask(static_cast<size_t>(t) * t, 0.0f);
  for (int i = 0; i < t; ++i) {
    for (int j = i + 1; j < t; ++j) mask[static_cast<size_t>(i) * t + j] = kMaskNegInf;
  }
  return Tensor::from({t, t}, std::move(mask));
}

Tensor padding_key_mask(std::span<const int> key_ids, int rows) {
  int len = static_cast<int>(key_ids.size());
  std::vector<float> mask(static_cast<size_t>(rows) * len, 0.0f);
  for (int j = 0; j < len; ++j) {
    if (key_ids[static_cast<size_t>(j)] != kPadId) continue;
    for (int i = 0; i < rows; ++i) mask[static_cast<size_t>(i) * len + j] = kMaskNegInf;
  }
  return Tensor::from({rows, len}, std::move(mask));
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const Tensor& mask, const AttentionWeights& weights, int n_heads,
                            Tensor* probs_out) {
  if (q_in.rank() != 2 || k_in.rank() != 2 || v_in.rank() != 2 || q_in.dim(1) != k_in.dim(1) ||
      k_in.shape() != v_in.shape()) {
    throw ShapeError("multi_head_attention: incompatible q " + shape_str(q_in.shape()) + " / k " +
                     shape_str(k_in.shape()) + " / v " + shape_str(v_in.shape()));
  }
  int d = q_in.dim(1);
  if (d % n_heads != 0) {
    throw ShapeError("multi_head_attention: d_model " + std::to_string(d) +
                     " not divisible by n_heads " + std::to_string(n_heads));
  }
  int d_k = d / n_heads;
  Tensor q = split_heads(linear(q_in, weights.wq, weights.bq), n_heads);
  Tensor k = split_heads(linear(k_in, weights.wk, weights.bk), n_heads);
  Tensor v = split_heads(linear(v_in, weights.wv, weights.bv), n_heads);

  Tensor scores = scale(bmm(q, transpose_last2(k)), 1.0f / std::sqrt(static_cast<float>(d_k)));
  Tensor probs = mask.defined() ? masked_softmax(scores, mask) : softmax(scores, -1);
  if (probs_out) *probs_out = probs;
  Tensor context = merge_heads(bmm(probs, v));
  return linear(context, weights.wo, weights.bo);
}

namespace {

Tensor apply_activation(const Tensor& x, Activation act) {
  return act == Activation::Relu ? relu(x) : gelu(x);
}

Tensor maybe_dropout(const Tensor& x, const ModelConfig& cfg, Rng* rng) {
  if (!rng || cfg.dropout_rate == 0.0f) return x;
  return dropout(x, cfg.dropout_rate, *rng);
}

Tensor embed(const TransformerModel& m, std::span<const int> ids, Rng* rng) {
  if (ids.empty()) throw ShapeError("forward: empty id sequence");
  if (static_cast<int>(ids.size()) > m.config().max_positions) {
    throw ShapeError("forward: sequence length " + std::to_string(ids.size()) +
                     " exceeds max_positions " + std::to_string(m.config().max_positions));
  }
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor x = add(embedding_lookup(m.tok_emb, ids), embedding_lookup(m.pos_emb, positions));
  return maybe_dropout(x, m.config(), rng);
}

Tensor ffn_sublayer(const Tensor& x, const FeedForwardWeights& w, Activation act,
                    const ModelConfig& cfg, Rng* rng) {
  Tensor h = apply_activation(linear(x, w.w1, w.b1), act);
  return maybe_dropout(linear(h, w.w2, w.b2), cfg, rng);
}

Tensor run_block(const Tensor& x_in, const TransformerBlock& block, const Tensor& mask,
                 const TransformerModel& m, Rng* rng, ForwardProbe* probe) {
  const ModelConfig& cfg = m.config();
  Tensor probs;
  Tensor normed = layer_norm(x_in, block.ln1.gain, block.ln1.bias);
  Tensor attn = multi_head_attention(normed, normed, normed, mask, block.self_attn, cfg.n_heads,
                                     probe ? &probs : nullptr);
  if (probe) probe->attn_probs.push_back(probs);
  Tensor x = add(x_in, maybe_dropout(attn, cfg, rng));
  Tensor ff = ffn_sublayer(layer_norm(x, block.ln2.gain, block.ln2.bias), block.ffn,
                           cfg.activation, cfg, rng);
  return add(x, ff);
}

}  // namespace

Tensor encode_source(const TransformerModel& model, std::span<const int> src_ids, Rng* rng,
                     ForwardProbe* probe) {
  if (model.config().paradigm != Paradigm::EncDec) {
    throw Error("encode_source: model paradigm is dec_only");
  }
  Tensor x = embed(model, src_ids, rng);
  Tensor mask = padding_key_mask(src_ids, static_cast<int>(src_ids.size()));
  for (const TransformerBlock& block : model.encoder) {
    x = run_block(x, block, mask, model, rng, probe);
  }
  return layer_norm(x, model.enc_final_ln.gain, model.enc_final_ln.bias);
}

Tensor decode_with_encoder(const TransformerModel& model, std::span<const int> tgt_ids,
                           const Tensor& enc_out, std::span<const int> src_ids, Rng* rng,
                           ForwardProbe* probe) {
  const ModelConfig& cfg = model.config();
  if (cfg.paradigm != Paradigm::EncDec) {
    throw Error("decode_with_encoder: model paradigm is dec_only");
  }
  Tensor x = embed(model, tgt_ids, rng);
  int t_tgt = static_cast<int>(tgt_ids.size());
  Tensor self_mask = causal_mask(t_tgt);
  Tensor cross_mask = padding_key_mask(src_ids, t_tgt);
  for (const DecoderBlock& block : model.decoder) {
    Tensor self_probs;
    Tensor normed = layer_norm(x, block.ln1.gain, block.ln1.bias);
    Tensor attn = multi_head_attention(normed, normed, normed, self_mask, block.self_attn,
                                       cfg.n_heads, probe ? &self_probs : nullptr);
    if (probe) probe->attn_probs.push_back(self_probs);
    x = add(x, maybe_dropout(attn, cfg, rng));

    Tensor cross_probs;
    Tensor cross = multi_head_attention(layer_norm(x, block.ln_cross.gain, block.ln_cross.bias),
                                        enc_out, enc_out, cross_mask, block.cross_attn,
                                        cfg.n_heads, probe ? &cross_probs : nullptr);
    if (probe) probe->attn_probs.push_back(cross_probs);
    x = add(x, maybe_dropout(cross, cfg, rng));

    Tensor ff = ffn_sublayer(layer_norm(x, block.ln2.gain, block.ln2.bias), block.ffn,
                             cfg.activation, cfg, rng);
    x = add(x, ff);
  }
  x = layer_norm(x, model.final_ln.gain, model.final_ln.bias);
  return linear(x, model.out_w, model.out_b);
}

Tensor forward_enc_dec(const TransformerModel& model, std::span<const int> src_ids,
                       std::span<const int> tgt_ids, Rng* rng, ForwardProbe* probe) {
  Tensor enc_out = encode_source(model, src_ids, rng, probe);
  return decode_with_encoder(model, tgt_ids, enc_out, src_ids, rng, probe);
}

Tensor forward_dec_only(const TransformerModel& model, std::span<const int> ids, Rng* rng,
                        ForwardProbe* probe) {
  const ModelConfig& cfg = model.config();
  if (cfg.paradigm != Paradigm::DecOnly) {
    throw Error("forward_dec_only: model paradigm is enc_dec");
  }
  Tensor x = embed(model, ids, rng);
  Tensor mask = causal_mask(static_cast<int>(ids.size()));
  for (const TransformerBlock& block : model.blocks) {
    x = run_block(x, block, mask, model, rng, probe);
  }
  x = layer_norm(x, model.final_ln.gain, model.final_ln.bias);
  return linear(x, model.out_w, model.out_b);
}

Tensor loss(const TransformerModel& model, std::span<const TrainingPair> batch, Rng* rng) {
  if (batch.empty()) throw DataError("loss: empty batch");
  Tensor weighted_sum;
  long total_count = 0;
  for (const TrainingPair& pair : batch) {
    size_t t = pair.label_ids.size();
    if (t < 2) throw DataError("loss: label sequence shorter than 2");

    Tensor logits;
    if (model.config().paradigm == Paradigm::EncDec) {
      // Teacher forcing: decoder input is the label stream as tokens
      // (ignore -> pad), dropping the last position; logits row t is scored
      // against label t+1.
      std::vector<int> dec_in(t - 1);
      for (size_t i = 0; i + 1 < t; ++i) {
        dec_in[i] = pair.label_ids[i] < 0 ? kPadId : pair.label_ids[i];
      }
      logits = forward_enc_dec(model, pair.input_ids, dec_in, rng);
    } else {
      if (pair.input_ids.size() != t) {
        throw DataError("loss: dec_only input/label length mismatch");
      }
      std::vector<int> in(pair.input_ids.begin(), pair.input_ids.end() - 1);
      logits = forward_dec_only(model, in, rng);
    }

    std::vector<int> targets(pair.label_ids.begin() + 1, pair.label_ids.end());
    int count = 0;
    for (int v : targets) {
      if (v != kIgnoreIndex) ++count;
    }
    Tensor nll = cross_entropy_masked(logits, targets, kIgnoreIndex);
    Tensor contrib = scale(nll, static_cast<float>(count));
    weighted_sum = weighted_sum.defined() ? add(weighted_sum, contrib) : contrib;
    total_count += count;
  }
  return scale(weighted_sum, 1.0f / static_cast<float>(total_count));
}

}  // namespace sqlformer
