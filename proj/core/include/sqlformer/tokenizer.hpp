#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sqlformer/common.hpp"

namespace sqlformer {

// Special token ids, fixed at the low end of every vocabulary.
constexpr int kPadId = 0;
constexpr int kBosId = 1;
constexpr int kEosId = 2;
constexpr int kUnkId = 3;
constexpr int kNumSpecialTokens = 4;

// Sentinel label excluded from the loss. Negative, so it can never collide
// with a vocabulary id.
constexpr int kIgnoreIndex = -100;

/// Word-level token splitter: whitespace plus SQL punctuation. Parens,
/// commas, semicolons, `*` and comparison operators become standalone
/// tokens; the multi-character operators <= >= != stay atomic.
std::vector<std::string> tokenize_text(const std::string& text);

/// Frozen token<->id mapping with the four special tokens at ids 0..3.
/// Immutable after construction; safe for concurrent readers.
class Vocabulary {
 public:
  /// Empty vocabulary; only useful as a slot to assign a built one into.
  Vocabulary() = default;

  /// Builds from frequency counts over the tokenized corpus. Keeps the
  /// max_size - 4 most frequent tokens; ties break lexicographically.
  static Vocabulary build(std::span<const std::string> corpus, int max_size);

  /// Line-oriented text file: line k holds the token for id k; the first
  /// four lines are the specials in fixed order pad, bos, eos, unk.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  const std::string& token(int id) const;
  /// Id of the token, or kUnkId when absent.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const;

  int max_context() const { return max_context_; }
  void set_max_context(int n) { max_context_ = n; }

 private:
  void index_tokens();

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
  int max_context_ = 256;
};

/// Tokenize and map to ids, truncating to max_len; unknown tokens become
/// unk. When pad_to_max is set the result is right-padded to exactly
/// max_len with pad ids.
std::vector<int> encode(const std::string& text, const Vocabulary& vocab, int max_len,
                        bool pad_to_max);

/// Tokens joined by single spaces; specials (pad/bos/eos) are skipped.
std::string decode(std::span<const int> ids, const Vocabulary& vocab);

/// Training-label mask: pad positions become ignore_index, and for
/// decoder-only inputs every position before prompt_len as well.
/// ignore_index must be negative; prompt_len beyond the sequence throws.
std::vector<int> labels_for_training(std::span<const int> target_ids, int ignore_index,
                                     size_t prompt_len = 0);

}  // namespace sqlformer
