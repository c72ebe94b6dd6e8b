#include "sqlformer/decoding.hpp"

#include <algorithm>
#include <cmath>

#include "sqlformer/ops.hpp"

namespace sqlformer {

namespace {

float comparison_score(const BeamHypothesis& h, bool length_normalize) {
  if (!length_normalize || h.tokens.empty()) return h.log_prob;
  float lp = std::pow((5.0f + static_cast<float>(h.tokens.size())) / 6.0f, 0.6f);
  return h.log_prob / lp;
}

bool better(const BeamHypothesis& a, const BeamHypothesis& b, bool length_normalize) {
  float sa = comparison_score(a, length_normalize);
  float sb = comparison_score(b, length_normalize);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;  // lowest token ids first on exact ties
}

// Log-probabilities of the next token given the generated prefix.
std::vector<float> next_token_log_probs(const TransformerModel& model,
                                        std::span<const int> input_ids, const Tensor& enc_out,
                                        const std::vector<int>& prefix) {
  std::vector<int> ids;
  Tensor logits;
  if (model.config().paradigm == Paradigm::EncDec) {
    ids.reserve(prefix.size() + 1);
    ids.push_back(kBosId);
    ids.insert(ids.end(), prefix.begin(), prefix.end());
    logits = decode_with_encoder(model, ids, enc_out, input_ids);
  } else {
    ids.reserve(input_ids.size() + prefix.size());
    ids.insert(ids.end(), input_ids.begin(), input_ids.end());
    ids.insert(ids.end(), prefix.begin(), prefix.end());
    logits = forward_dec_only(model, ids);
  }
  int vocab = logits.dim(1);
  std::span<const float> last_row =
      logits.data().subspan(static_cast<size_t>(logits.dim(0) - 1) * vocab, vocab);
  std::vector<float> out(static_cast<size_t>(vocab));
  log_softmax_row(last_row, out);
  return out;
}

}  // namespace

std::vector<int> generate(const TransformerModel& model, std::span<const int> input_ids,
                          const GenerateOptions& options) {
  if (options.beam_size < 1) throw Error("generate: beam_size must be >= 1");
  if (options.max_len < 1) throw Error("generate: max_len must be >= 1");
  if (input_ids.empty()) throw Error("generate: empty input");

  NoGradGuard no_grad;

  const ModelConfig& cfg = model.config();
  int max_new = options.max_len;
  if (cfg.paradigm == Paradigm::EncDec) {
    // Decoder positions are bos + generated tokens.
    max_new = std::min(max_new, cfg.max_positions - 1);
  } else {
    int room = cfg.max_positions - static_cast<int>(input_ids.size());
    if (room < 1) {
      throw Error("generate: prompt length " + std::to_string(input_ids.size()) +
                  " leaves no room under max_positions " + std::to_string(cfg.max_positions));
    }
    max_new = std::min(max_new, room);
  }

  Tensor enc_out;
  if (cfg.paradigm == Paradigm::EncDec) enc_out = encode_source(model, input_ids);

  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  std::vector<BeamHypothesis> finished;

  for (int step = 0; step < max_new && !live.empty(); ++step) {
    std::vector<BeamHypothesis> candidates;
    candidates.reserve(live.size() * 8);
    for (const BeamHypothesis& beam : live) {
      std::vector<float> log_probs = next_token_log_probs(model, input_ids, enc_out, beam.tokens);
      for (size_t v = 0; v < log_probs.size(); ++v) {
        BeamHypothesis h;
        h.tokens = beam.tokens;
        h.tokens.push_back(static_cast<int>(v));
        h.log_prob = beam.log_prob + log_probs[v];
        candidates.push_back(std::move(h));
      }
    }
    std::sort(candidates.begin(), candidates.end(),
              [&](const BeamHypothesis& a, const BeamHypothesis& b) {
                if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                return a.tokens < b.tokens;
              });

    // Keep the top beam_size candidates; of those, eos-terminated ones move
    // to the finished pool and the rest stay live.
    live.clear();
    int taken = 0;
    for (BeamHypothesis& c : candidates) {
      if (taken++ >= options.beam_size) break;
      if (c.tokens.back() == kEosId) {
        c.finished = true;
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
  }

  const BeamHypothesis* best = nullptr;
  for (const BeamHypothesis& h : finished) {
    if (!best || better(h, *best, options.length_normalize)) best = &h;
  }
  if (!best) {
    for (const BeamHypothesis& h : live) {
      if (!best || better(h, *best, options.length_normalize)) best = &h;
    }
  }
  if (!best) throw Error("generate: no hypothesis produced");  // unreachable: max_len >= 1
  return best->tokens;
}

std::string ids_to_sql(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> tokens;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    tokens.push_back(vocab.token(id));
  }
  auto marker = std::find(tokens.begin(), tokens.end(), "SQL:");
  if (marker != tokens.end()) tokens.erase(tokens.begin(), marker + 1);
  std::string out;
  for (const std::string& tok : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace sqlformer
