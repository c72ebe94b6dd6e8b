#include "sqlformer/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

namespace sqlformer {

namespace {

const char* kSpecialTokens[kNumSpecialTokens] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_single_punct(char c) {
  switch (c) {
    case '(':
    case ')':
    case ',':
    case ';':
    case '=':
    case '<':
    case '>':
    case '*':
      return true;
    default:
      return false;
  }
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      tokens.push_back(current);
      current.clear();
    }
  };
  for (size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
      continue;
    }
    if ((c == '<' || c == '>' || c == '!') && i + 1 < text.size() && text[i + 1] == '=') {
      flush();
      tokens.push_back(std::string(1, c) + "=");
      ++i;
      continue;
    }
    if (is_single_punct(c)) {
      flush();
      tokens.push_back(std::string(1, c));
      continue;
    }
    current.push_back(c);
  }
  flush();
  return tokens;
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus, int max_size) {
  if (max_size < kNumSpecialTokens + 1) {
    throw DataError("build_vocab: max_size must be at least " +
                    std::to_string(kNumSpecialTokens + 1));
  }
  if (corpus.empty()) throw DataError("build_vocab: empty corpus");

  // std::map keys are already the lexicographic tie-break order.
  std::map<std::string, long> counts;
  for (const std::string& text : corpus) {
    for (std::string& tok : tokenize_text(text)) counts[std::move(tok)]++;
  }
  if (counts.empty()) throw DataError("build_vocab: corpus produced no tokens");

  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocabulary vocab;
  for (const char* s : kSpecialTokens) vocab.id_to_token_.emplace_back(s);
  size_t keep = static_cast<size_t>(max_size - kNumSpecialTokens);
  for (size_t i = 0; i < ranked.size() && i < keep; ++i) {
    vocab.id_to_token_.push_back(ranked[i].first);
  }
  vocab.index_tokens();
  return vocab;
}

void Vocabulary::index_tokens() {
  token_to_id_.clear();
  for (size_t i = 0; i < id_to_token_.size(); ++i) {
    auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<int>(i));
    if (!inserted) throw DataError("vocabulary: duplicate token '" + id_to_token_[i] + "'");
  }
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocabulary: cannot open " + path.string());
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) vocab.id_to_token_.push_back(line);
  if (vocab.size() < kNumSpecialTokens + 1) {
    throw DataError("vocabulary: " + path.string() + " has fewer than " +
                    std::to_string(kNumSpecialTokens + 1) + " entries");
  }
  for (int i = 0; i < kNumSpecialTokens; ++i) {
    if (vocab.id_to_token_[static_cast<size_t>(i)] != kSpecialTokens[i]) {
      throw DataError("vocabulary: line " + std::to_string(i) + " of " + path.string() +
                      " must be " + kSpecialTokens[i]);
    }
  }
  vocab.index_tokens();
  return vocab;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("vocabulary: cannot write " + path.string());
  for (const std::string& tok : id_to_token_) out << tok << '\n';
  if (!out) throw DataError("vocabulary: write failed for " + path.string());
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const {
  return token_to_id_.count(token) > 0;
}

std::vector<int> encode(const std::string& text, const Vocabulary& vocab, int max_len,
                        bool pad_to_max) {
  if (max_len < 1) throw DataError("encode: max_len must be >= 1");
  std::vector<int> ids;
  for (const std::string& tok : tokenize_text(text)) {
    if (static_cast<int>(ids.size()) >= max_len) break;
    ids.push_back(vocab.id(tok));
  }
  if (pad_to_max) ids.resize(static_cast<size_t>(max_len), kPadId);
  return ids;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

std::vector<int> labels_for_training(std::span<const int> target_ids, int ignore_index,
                                     size_t prompt_len) {
  if (ignore_index >= 0) {
    throw DataError("labels_for_training: ignore_index must be a negative sentinel, got " +
                    std::to_string(ignore_index));
  }
  if (prompt_len > target_ids.size()) {
    throw DataError("labels_for_training: prompt_len " + std::to_string(prompt_len) +
                    " exceeds sequence length " + std::to_string(target_ids.size()));
  }
  std::vector<int> labels(target_ids.begin(), target_ids.end());
  for (size_t i = 0; i < labels.size(); ++i) {
    if (i < prompt_len || labels[i] == kPadId) labels[i] = ignore_index;
  }
  return labels;
}

}  // namespace sqlformer
