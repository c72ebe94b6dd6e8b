#pragma once

#include <span>
#include <string>
#include <vector>

#include "sqlformer/model.hpp"
#include "sqlformer/tokenizer.hpp"

namespace sqlformer {

/// One partial or finished beam.
struct BeamHypothesis {
  std::vector<int> tokens;  // generated ids, excluding the bos seed / prompt
  float log_prob = 0.0f;
  bool finished = false;
};

struct GenerateOptions {
  int beam_size = 4;
  /// Bound on generated tokens; prompt tokens do not count.
  int max_len = 128;
  /// Wu-style length normalization ((5+len)/6)^0.6 applied when comparing
  /// finished hypotheses. Off by default: raw cumulative log-prob.
  bool length_normalize = false;
};

/// Beam-search generation. For enc_dec models input_ids is the encoder
/// source and decoding starts from bos; for dec_only models input_ids is
/// the prompt the generation conditions on. Each live beam expands over the
/// whole vocabulary; the top beam_size live candidates survive, hypotheses
/// emitting eos move to a finished pool. Returns the generated ids
/// (including the final eos when one was produced) of the best finished
/// hypothesis, falling back to the best live one at max_len. Deterministic;
/// score ties break toward the lexicographically smallest token sequence.
std::vector<int> generate(const TransformerModel& model, std::span<const int> input_ids,
                          const GenerateOptions& options = {});

/// Detokenizes a generated sequence into SQL text: drops pad/bos/eos, joins
/// with single spaces, and strips everything up to and including the first
/// literal "SQL:" token (the decoder-only prompt marker) when present.
std::string ids_to_sql(std::span<const int> ids, const Vocabulary& vocab);

}  // namespace sqlformer
