#include "sqlformer/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sqlformer/decoding.hpp"
#include "sqlformer/metrics.hpp"
#include "sqlformer/ops.hpp"

namespace sqlformer {

using nlohmann::json;

void TrainConfig::validate() const {
  if (iterations < 1) throw DataError("train config: iterations must be >= 1");
  if (batch_size < 1) throw DataError("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0f)) throw DataError("train config: learning_rate must be positive");
  if (eval_every < 0) throw DataError("train config: eval_every must be >= 0");
  if (eval_every > iterations) {
    throw DataError("train config: eval_every " + std::to_string(eval_every) +
                    " exceeds iterations " + std::to_string(iterations));
  }
  if (max_len < 2) throw DataError("train config: max_len must be >= 2");
  if (eval_limit < 1) throw DataError("train config: eval_limit must be >= 1");
  bool dec_only_style = style == InputStyle::Gpt2Prompt;
  bool dec_only_paradigm = paradigm == Paradigm::DecOnly;
  if (dec_only_style != dec_only_paradigm) {
    throw DataError("train config: style " + to_string(style) + " does not pair with paradigm " +
                    to_string(paradigm));
  }
}

int TrainConfig::resolved_eval_every() const {
  if (eval_every > 0) return eval_every;
  return std::max(1, iterations / 5);
}

void optimizer_step(std::vector<Tensor>& params, AdamState& state, float lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].numel(), 0.0f);
      state.v[i].assign(params[i].numel(), 0.0f);
    }
  }
  if (state.m.size() != params.size()) {
    throw Error("optimizer_step: state tracks " + std::to_string(state.m.size()) +
                " parameters, got " + std::to_string(params.size()));
  }
  state.step += 1;
  float bc1 = 1.0f - static_cast<float>(std::pow(state.beta1, state.step));
  float bc2 = 1.0f - static_cast<float>(std::pow(state.beta2, state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    std::span<float> p = params[i].data_mut();
    if (state.m[i].size() != p.size()) {
      throw Error("optimizer_step: parameter " + std::to_string(i) + " changed size");
    }
    const float* g = nullptr;
    if (params[i].has_grad()) g = params[i].grad().data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    for (size_t j = 0; j < p.size(); ++j) {
      float gj = g ? g[j] : 0.0f;
      m[j] = state.beta1 * m[j] + (1.0f - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0f - state.beta2) * gj * gj;
      float m_hat = m[j] / bc1;
      float v_hat = v[j] / bc2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (Tensor& t : params) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) sq += static_cast<double>(g) * g;
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    float scale = static_cast<float>(max_norm / norm);
    for (Tensor& t : params) {
      if (!t.has_grad()) continue;
      for (float& g : t.grad_mut()) g *= scale;
    }
  }
  return norm;
}

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'Q', 'L', 'F'};
constexpr uint32_t kCheckpointVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<uint32_t>(f)); }

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::string origin)
      : buf_(buf), origin_(std::move(origin)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = static_cast<uint8_t>(buf_[pos_]) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buf_[pos_ + 1])) << 8) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buf_[pos_ + 2])) << 16) |
                 (static_cast<uint32_t>(static_cast<uint8_t>(buf_[pos_ + 3])) << 24);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == buf_.size(); }

 private:
  void need(size_t n) {
    if (pos_ + n > buf_.size()) {
      throw DataError("corrupt checkpoint (truncated): " + origin_);
    }
  }
  const std::string& buf_;
  std::string origin_;
  size_t pos_ = 0;
};

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"paradigm", to_string(cfg.paradigm)},
              {"n_layers", cfg.n_layers},
              {"n_heads", cfg.n_heads},
              {"d_model", cfg.d_model},
              {"d_ff", cfg.d_ff},
              {"vocab_size", cfg.vocab_size},
              {"max_positions", cfg.max_positions},
              {"dropout_rate", cfg.dropout_rate},
              {"activation", to_string(cfg.activation)}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.paradigm = paradigm_from_string(j.at("paradigm").get<std::string>());
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_positions = j.at("max_positions").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<float>();
  cfg.activation = activation_from_string(j.at("activation").get<std::string>());
  return cfg;
}

void atomic_write(const std::filesystem::path& path, const std::string& payload) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) {
      throw DataError("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_u32(out, ckpt.format_version);

  json blob;
  blob["model"] = model_config_to_json(ckpt.config);
  blob["step"] = ckpt.step;
  blob["val_lfacc"] = ckpt.val_lfacc;
  if (!ckpt.run_config_json.empty()) blob["run"] = json::parse(ckpt.run_config_json);
  std::string blob_str = blob.dump();
  put_u32(out, static_cast<uint32_t>(blob_str.size()));
  out += blob_str;

  put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(tensor.shape().size()));
    for (int d : tensor.shape()) put_u32(out, static_cast<uint32_t>(d));
    for (float v : tensor.data()) put_f32(out, v);
  }
  atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();

  ByteReader r(buf, path.string());
  std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) {
    throw DataError("corrupt checkpoint (bad magic): " + path.string());
  }
  Checkpoint ckpt;
  ckpt.format_version = r.u32();
  if (ckpt.format_version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint format_version " +
                    std::to_string(ckpt.format_version) + " (expected " +
                    std::to_string(kCheckpointVersion) + "): " + path.string());
  }
  uint32_t blob_len = r.u32();
  std::string blob_str = r.bytes(blob_len);
  json blob;
  try {
    blob = json::parse(blob_str);
    ckpt.config = model_config_from_json(blob.at("model"));
    ckpt.step = blob.at("step").get<int>();
    ckpt.val_lfacc = blob.at("val_lfacc").get<float>();
    if (blob.contains("run")) ckpt.run_config_json = blob["run"].dump();
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint (bad config blob): " + path.string() + ": " + e.what());
  }

  uint32_t n_tensors = r.u32();
  for (uint32_t i = 0; i < n_tensors; ++i) {
    uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    uint32_t rank = r.u32();
    Shape shape;
    size_t numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t dim = r.u32();
      if (dim == 0 || dim > (1u << 28)) {
        throw DataError("corrupt checkpoint (bad dimension): " + path.string());
      }
      shape.push_back(static_cast<int>(dim));
      numel *= dim;
    }
    std::vector<float> data(numel);
    for (size_t j = 0; j < numel; ++j) data[j] = r.f32();
    ckpt.tensors.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(data)));
  }
  if (!r.at_end()) {
    throw DataError("corrupt checkpoint (trailing bytes): " + path.string());
  }
  return ckpt;
}

Checkpoint checkpoint_from_model(const TransformerModel& model, int step, float val_lfacc,
                                 const std::string& run_config_json) {
  Checkpoint ckpt;
  ckpt.format_version = kCheckpointVersion;
  ckpt.config = model.config();
  ckpt.step = step;
  ckpt.val_lfacc = val_lfacc;
  ckpt.run_config_json = run_config_json;
  for (const auto& [name, tensor] : model.named_parameters()) {
    ckpt.tensors.emplace_back(name, tensor.clone());
  }
  return ckpt;
}

TransformerModel model_from_checkpoint(const Checkpoint& ckpt) {
  TransformerModel model = init_parameters(ckpt.config, 0);
  auto params = model.named_parameters();
  if (params.size() != ckpt.tensors.size()) {
    throw DataError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                    " tensors, config implies " + std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& [want_name, param] = params[i];
    const auto& [got_name, saved] = ckpt.tensors[i];
    if (want_name != got_name || param.shape() != saved.shape()) {
      throw DataError("checkpoint tensor " + std::to_string(i) + " is '" + got_name + "' " +
                      shape_str(saved.shape()) + ", expected '" + want_name + "' " +
                      shape_str(param.shape()));
    }
    std::copy(saved.data().begin(), saved.data().end(),
              params[i].second.data_mut().begin());
  }
  return model;
}

std::vector<TrainingPair> make_training_pairs(const std::vector<Example>& examples,
                                              InputStyle style, const Vocabulary& vocab,
                                              int max_len) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(examples.size());
  for (const Example& ex : examples) {
    auto [input_ids, label_ids] = make_training_pair(ex, style, vocab, max_len);
    pairs.push_back({std::move(input_ids), std::move(label_ids)});
  }
  return pairs;
}

namespace {

// Drops trailing (pad / ignored) positions that contribute exactly zero loss
// and zero gradient; pure speedup, loss() itself stays faithful to the padded
// contract.
TrainingPair trim_pair(const TrainingPair& pair, Paradigm paradigm) {
  size_t last = pair.label_ids.size();
  while (last > 0 && pair.label_ids[last - 1] == kIgnoreIndex) --last;
  size_t label_len = std::clamp<size_t>(last, 2, pair.label_ids.size());

  TrainingPair out;
  if (paradigm == Paradigm::EncDec) {
    size_t src_len = pair.input_ids.size();
    while (src_len > 1 && pair.input_ids[src_len - 1] == kPadId) --src_len;
    out.input_ids.assign(pair.input_ids.begin(),
                         pair.input_ids.begin() + static_cast<long>(src_len));
    out.label_ids.assign(pair.label_ids.begin(),
                         pair.label_ids.begin() + static_cast<long>(label_len));
  } else {
    out.input_ids.assign(pair.input_ids.begin(),
                         pair.input_ids.begin() + static_cast<long>(label_len));
    out.label_ids.assign(pair.label_ids.begin(),
                         pair.label_ids.begin() + static_cast<long>(label_len));
  }
  return out;
}

float validation_lfacc(const TransformerModel& model, const std::vector<Example>& valid,
                       const Vocabulary& vocab, const TrainConfig& cfg) {
  size_t n = std::min<size_t>(valid.size(), static_cast<size_t>(cfg.eval_limit));
  if (n == 0) return 0.0f;
  GenerateOptions opts;
  opts.beam_size = 1;  // greedy: fast and deterministic for selection
  opts.max_len = cfg.max_len;
  int correct = 0;
  for (size_t i = 0; i < n; ++i) {
    std::vector<int> input_ids = encode(valid[i].formatted_input, vocab, cfg.max_len, false);
    std::vector<int> generated = generate(model, input_ids, opts);
    std::string pred = ids_to_sql(generated, vocab);
    if (lfacc(pred, valid[i].gold_sql)) ++correct;
  }
  return static_cast<float>(correct) / static_cast<float>(n);
}

}  // namespace

TrainResult train(TransformerModel& model, const std::vector<Example>& train_examples,
                  const std::vector<Example>& valid_examples, const Vocabulary& vocab,
                  const TrainConfig& config) {
  config.validate();
  if (train_examples.empty()) throw DataError("train: empty training set");
  if (model.config().vocab_size != vocab.size()) {
    throw DataError("train: model vocab_size " + std::to_string(model.config().vocab_size) +
                    " != vocabulary size " + std::to_string(vocab.size()));
  }

  std::vector<TrainingPair> pairs = make_training_pairs(train_examples, config.style, vocab,
                                                        config.max_len);
  std::vector<TrainingPair> trimmed;
  trimmed.reserve(pairs.size());
  for (const TrainingPair& p : pairs) trimmed.push_back(trim_pair(p, config.paradigm));

  std::vector<Tensor> params = model.parameters();
  AdamState adam;
  Rng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ull);
  Rng dropout_rng(config.seed ^ 0x7f4a7c159e3779b9ull);
  Rng* drop = model.config().dropout_rate > 0.0f ? &dropout_rng : nullptr;

  std::vector<size_t> order(trimmed.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // trigger a shuffle on first use

  int eval_every = config.resolved_eval_every();
  TrainResult result;
  bool have_best = false;

  for (int step = 1; step <= config.iterations; ++step) {
    std::vector<TrainingPair> batch;
    batch.reserve(static_cast<size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      if (cursor >= order.size()) {
        shuffle_rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(trimmed[order[cursor++]]);
    }

    float step_loss;
    try {
      Tensor loss_value = loss(model, batch, drop);
      step_loss = loss_value.item();
      backward(loss_value);
    } catch (const NumericsError& e) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) + ": " +
                                      e.what());
    }
    if (!std::isfinite(step_loss)) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step) +
                                      ": non-finite loss");
    }

    clip_global_norm(params, config.grad_clip);
    float lr = config.learning_rate;
    if (config.cosine_lr) {
      double progress = static_cast<double>(step - 1) / std::max(1, config.iterations - 1);
      lr = config.learning_rate * 0.5f *
           (1.0f + static_cast<float>(std::cos(progress * 3.14159265358979323846)));
    }
    optimizer_step(params, adam, lr);
    for (Tensor& p : params) p.zero_grad();

    if (step % eval_every == 0 || step == config.iterations) {
      float val = validation_lfacc(model, valid_examples, vocab, config);
      result.history.push_back({step, step_loss, val});
      if (!have_best || val > result.best.val_lfacc) {
        result.best = checkpoint_from_model(model, step, val);
        have_best = true;
      }
    }
  }
  return result;
}

void write_history_csv(const std::vector<HistoryEntry>& history,
                       const std::filesystem::path& path, const std::string& header_comment) {
  std::ostringstream out;
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  out << "step,loss,val_lfacc\n";
  for (const HistoryEntry& h : history) {
    out << h.step << ',' << h.train_loss << ',' << h.val_lfacc << '\n';
  }
  atomic_write(path, out.str());
}

SweepReport iteration_sweep(const ModelConfig& model_config,
                            const std::vector<Example>& train_examples,
                            const std::vector<Example>& valid_examples, const Vocabulary& vocab,
                            const TrainConfig& base_config, std::span<const int> budgets,
                            int divisor, int beam_size, int gen_max_len) {
  if (divisor < 1) throw DataError("iteration_sweep: divisor must be >= 1");
  if (budgets.empty()) throw DataError("iteration_sweep: no budgets");

  SweepReport report;
  for (int budget : budgets) {
    TrainConfig cfg = base_config;
    cfg.iterations = std::max(1, budget / divisor);
    cfg.eval_every = 0;

    TransformerModel model = init_parameters(model_config, cfg.seed);
    TrainResult run = train(model, train_examples, valid_examples, vocab, cfg);
    TransformerModel best = model_from_checkpoint(run.best);

    GenerateOptions opts;
    opts.beam_size = beam_size;
    opts.max_len = gen_max_len;
    size_t n = std::min<size_t>(valid_examples.size(), static_cast<size_t>(cfg.eval_limit));
    std::vector<std::string> preds, golds;
    for (size_t i = 0; i < n; ++i) {
      std::vector<int> input_ids =
          encode(valid_examples[i].formatted_input, vocab, cfg.max_len, false);
      preds.push_back(ids_to_sql(generate(best, input_ids, opts), vocab));
      golds.push_back(valid_examples[i].gold_sql);
    }
    MetricReport metrics = evaluate(preds, golds);
    report.rows.push_back({budget, cfg.iterations, metrics.lfacc, metrics.bleu, metrics.em});
  }
  return report;
}

}  // namespace sqlformer
