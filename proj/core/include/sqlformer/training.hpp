#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sqlformer/data.hpp"
#include "sqlformer/model.hpp"
#include "sqlformer/tokenizer.hpp"

namespace sqlformer {

struct TrainConfig {
  int iterations = 100;  // optimizer steps
  int batch_size = 16;
  float learning_rate = 3e-4f;
  uint64_t seed = 0;
  int eval_every = 0;  // 0 = auto (iterations / 5, at least 1)
  int max_len = 256;
  InputStyle style = InputStyle::T5Prefix;
  Paradigm paradigm = Paradigm::EncDec;
  float grad_clip = 1.0f;   // global norm; <= 0 disables
  bool cosine_lr = false;   // constant lr by default
  int eval_limit = 1000;    // validation samples per evaluation

  void validate() const;
  int resolved_eval_every() const;
};

/// Adam with bias correction; beta1 0.9, beta2 0.999, eps 1e-8.
struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;
};

/// One Adam update over params' grad buffers. Parameters with no gradient
/// buffer are treated as having zero gradient.
void optimizer_step(std::vector<Tensor>& params, AdamState& state, float lr);

/// Scales all grads so the global L2 norm is at most max_norm. Returns the
/// pre-clip norm.
double clip_global_norm(std::vector<Tensor>& params, double max_norm);

struct Checkpoint {
  uint32_t format_version = 1;
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor>> tensors;
  int step = 0;
  float val_lfacc = 0.0f;
  std::string run_config_json;  // resolved run config, echoed for provenance
};

/// Binary format: magic "SQLF", format_version u32 LE, length-prefixed
/// UTF-8 JSON blob (model config + step + validation LFAcc + run config),
/// then per-tensor records {name u32+bytes, rank u32, dims u32..., raw
/// little-endian f32 payload}. Bit-exact round trip.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds a model from checkpoint tensors; forward outputs match the
/// saved model bitwise.
TransformerModel model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint checkpoint_from_model(const TransformerModel& model, int step, float val_lfacc,
                                 const std::string& run_config_json = "");

struct HistoryEntry {
  int step = 0;
  float train_loss = 0.0f;
  float val_lfacc = 0.0f;
};

struct TrainResult {
  Checkpoint best;
  std::vector<HistoryEntry> history;
};

/// Runs exactly config.iterations optimizer steps over the training pairs,
/// evaluating validation LFAcc (greedy decode) every eval_every steps and at
/// the final step. Returns the checkpoint with the highest validation LFAcc
/// (ties to the earliest step) plus the evaluation history. Fully
/// deterministic for (seed, config, data). Throws DivergenceError with the
/// failing step when the loss goes non-finite.
TrainResult train(TransformerModel& model, const std::vector<Example>& train_examples,
                  const std::vector<Example>& valid_examples, const Vocabulary& vocab,
                  const TrainConfig& config);

/// history CSV: header comments, then `step,loss,val_lfacc` rows.
void write_history_csv(const std::vector<HistoryEntry>& history,
                       const std::filesystem::path& path, const std::string& header_comment);

struct SweepRow {
  int budget = 0;  // requested iteration budget before scaling
  int steps = 0;   // actual optimizer steps run
  double lfacc = 0.0;
  double bleu = 0.0;
  double em = 0.0;
};

struct SweepReport {
  std::vector<SweepRow> rows;
};

/// Trains from a fresh seed-identical init at each budget (scaled down by
/// divisor), then scores the best checkpoint on the validation set with
/// beam search and reports LFAcc / BLEU / EM per budget.
SweepReport iteration_sweep(const ModelConfig& model_config,
                            const std::vector<Example>& train_examples,
                            const std::vector<Example>& valid_examples, const Vocabulary& vocab,
                            const TrainConfig& base_config, std::span<const int> budgets,
                            int divisor, int beam_size, int gen_max_len);

/// Tokenized training pairs for a whole example list.
std::vector<TrainingPair> make_training_pairs(const std::vector<Example>& examples,
                                              InputStyle style, const Vocabulary& vocab,
                                              int max_len);

}  // namespace sqlformer
