#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sqlformer/common.hpp"
#include "sqlformer/tokenizer.hpp"

namespace sqlformer {

struct TableSchema {
  std::string name;
  std::vector<std::string> columns;
};

struct DatabaseSchema {
  std::string db_id;
  std::vector<TableSchema> tables;
};

/// One question/SQL record. formatted_input and the id sequences are filled
/// by the formatting / pairing steps.
struct Example {
  std::string question;
  std::string gold_sql;
  std::string db_id;
  std::string formatted_input;
  std::vector<int> input_ids;
  std::vector<int> label_ids;
};

enum class InputStyle { T5Prefix, BartPrefix, Gpt2Prompt };

InputStyle input_style_from_string(const std::string& s);
std::string to_string(InputStyle style);

/// Loads the two Spider-format JSON files. Every example's db_id must
/// resolve to a loaded schema; file order is preserved.
std::pair<std::vector<DatabaseSchema>, std::vector<Example>> load_spider(
    const std::filesystem::path& tables_path, const std::filesystem::path& examples_path);

void save_spider_tables(const std::vector<DatabaseSchema>& schemas,
                        const std::filesystem::path& path);
void save_spider_examples(const std::vector<Example>& examples,
                          const std::filesystem::path& path);

/// `name (col1, col2, ...)` per table, tables joined by ` ; ` in file order.
std::string serialize_schema(const DatabaseSchema& schema);

/// The three model-specific input templates.
std::string format_input(const std::string& question, const std::string& schema_string,
                         InputStyle style);

/// Token-id training pair for one example. Encoder-decoder styles produce
/// (encoder input, bos + SQL + eos labels); the GPT-2 prompt style produces
/// a single stream with prompt and pad positions masked to kIgnoreIndex.
/// Both sequences are padded to exactly max_len.
std::pair<std::vector<int>, std::vector<int>> make_training_pair(const Example& example,
                                                                 InputStyle style,
                                                                 const Vocabulary& vocab,
                                                                 int max_len);

/// Deterministic toy NL->SQL generator over a fixed context-free grammar
/// (plain selection, one WHERE comparison, single aggregate) across four
/// small schemas. A desk-scale stand-in for Spider.
std::pair<std::vector<DatabaseSchema>, std::vector<Example>> synth_dataset(uint64_t seed, int n);

/// Preprocessed dataset file: '#'-prefixed header lines, then one
/// `formatted_input TAB gold_sql` record per line.
void write_dataset_tsv(const std::vector<Example>& examples, const std::filesystem::path& path,
                       const std::string& header_comment);
std::vector<Example> read_dataset_tsv(const std::filesystem::path& path);

/// Runs format_input over examples, resolving each db_id against schemas.
void format_examples(std::vector<Example>& examples, const std::vector<DatabaseSchema>& schemas,
                     InputStyle style);

}  // namespace sqlformer
