#include "sqlformer/data.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace sqlformer {

using nlohmann::json;

namespace {

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return j;
}

void check_no_control_chars(const std::string& field, const std::string& what, size_t index) {
  if (field.find('\t') != std::string::npos || field.find('\n') != std::string::npos) {
    throw DataError(what + " at index " + std::to_string(index) +
                    " contains a tab or newline, which the dataset file format cannot carry");
  }
}

}  // namespace

InputStyle input_style_from_string(const std::string& s) {
  if (s == "t5") return InputStyle::T5Prefix;
  if (s == "bart") return InputStyle::BartPrefix;
  if (s == "gpt2") return InputStyle::Gpt2Prompt;
  throw DataError("unknown input style '" + s + "' (expected t5, bart or gpt2)");
}

std::string to_string(InputStyle style) {
  switch (style) {
    case InputStyle::T5Prefix:
      return "t5";
    case InputStyle::BartPrefix:
      return "bart";
    case InputStyle::Gpt2Prompt:
      return "gpt2";
  }
  throw Error("unreachable input style");
}

std::pair<std::vector<DatabaseSchema>, std::vector<Example>> load_spider(
    const std::filesystem::path& tables_path, const std::filesystem::path& examples_path) {
  json tables_json = load_json_file(tables_path);
  if (!tables_json.is_array()) throw DataError(tables_path.string() + ": expected a JSON array");

  std::vector<DatabaseSchema> schemas;
  for (size_t i = 0; i < tables_json.size(); ++i) {
    const json& rec = tables_json[i];
    try {
      DatabaseSchema schema;
      schema.db_id = rec.at("db_id").get<std::string>();
      if (schema.db_id.empty()) throw DataError("empty db_id");
      for (const json& name : rec.at("table_names_original")) {
        schema.tables.push_back({name.get<std::string>(), {}});
      }
      for (const json& col : rec.at("column_names_original")) {
        int table_index = col.at(0).get<int>();
        if (table_index == -1) continue;  // the synthetic "*" row
        if (table_index < 0 || table_index >= static_cast<int>(schema.tables.size())) {
          throw DataError("column references table index " + std::to_string(table_index));
        }
        schema.tables[static_cast<size_t>(table_index)].columns.push_back(
            col.at(1).get<std::string>());
      }
      std::unordered_set<std::string> names;
      for (const TableSchema& t : schema.tables) {
        if (!names.insert(t.name).second) {
          throw DataError("duplicate table name '" + t.name + "'");
        }
        if (t.columns.empty()) throw DataError("table '" + t.name + "' has no columns");
      }
      schemas.push_back(std::move(schema));
    } catch (const json::exception& e) {
      throw DataError(tables_path.string() + ": record " + std::to_string(i) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(tables_path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }

  std::unordered_map<std::string, size_t> by_db;
  for (size_t i = 0; i < schemas.size(); ++i) by_db[schemas[i].db_id] = i;

  json examples_json = load_json_file(examples_path);
  if (!examples_json.is_array()) {
    throw DataError(examples_path.string() + ": expected a JSON array");
  }
  std::vector<Example> examples;
  for (size_t i = 0; i < examples_json.size(); ++i) {
    const json& rec = examples_json[i];
    try {
      Example ex;
      ex.question = rec.at("question").get<std::string>();
      ex.gold_sql = rec.at("query").get<std::string>();
      ex.db_id = rec.at("db_id").get<std::string>();
      if (ex.gold_sql.empty()) throw DataError("empty query");
      if (!by_db.count(ex.db_id)) {
        throw DataError("unresolved db_id '" + ex.db_id + "'");
      }
      examples.push_back(std::move(ex));
    } catch (const json::exception& e) {
      throw DataError(examples_path.string() + ": record " + std::to_string(i) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError(examples_path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return {std::move(schemas), std::move(examples)};
}

void save_spider_tables(const std::vector<DatabaseSchema>& schemas,
                        const std::filesystem::path& path) {
  json out = json::array();
  for (const DatabaseSchema& schema : schemas) {
    json rec;
    rec["db_id"] = schema.db_id;
    json names = json::array();
    json cols = json::array();
    cols.push_back({-1, "*"});
    for (size_t t = 0; t < schema.tables.size(); ++t) {
      names.push_back(schema.tables[t].name);
      for (const std::string& col : schema.tables[t].columns) {
        cols.push_back({static_cast<int>(t), col});
      }
    }
    rec["table_names_original"] = names;
    rec["column_names_original"] = cols;
    out.push_back(std::move(rec));
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << out.dump(1) << '\n';
}

void save_spider_examples(const std::vector<Example>& examples,
                          const std::filesystem::path& path) {
  json out = json::array();
  for (const Example& ex : examples) {
    out.push_back({{"question", ex.question}, {"query", ex.gold_sql}, {"db_id", ex.db_id}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write " + path.string());
  f << out.dump(1) << '\n';
}

std::string serialize_schema(const DatabaseSchema& schema) {
  std::string out;
  for (size_t t = 0; t < schema.tables.size(); ++t) {
    if (t) out += " ; ";
    out += schema.tables[t].name;
    out += " (";
    for (size_t c = 0; c < schema.tables[t].columns.size(); ++c) {
      if (c) out += ", ";
      out += schema.tables[t].columns[c];
    }
    out += ")";
  }
  return out;
}

std::string format_input(const std::string& question, const std::string& schema_string,
                         InputStyle style) {
  if (question.empty()) throw DataError("format_input: empty question");
  switch (style) {
    case InputStyle::T5Prefix:
      return "translate SQL: " + question + " Schema: " + schema_string;
    case InputStyle::BartPrefix:
      return "Question: " + question + " Schema: " + schema_string;
    case InputStyle::Gpt2Prompt:
      return "Question: " + question + " Schema: " + schema_string + " SQL:";
  }
  throw Error("unreachable input style");
}

void format_examples(std::vector<Example>& examples, const std::vector<DatabaseSchema>& schemas,
                     InputStyle style) {
  std::unordered_map<std::string, std::string> serialized;
  for (const DatabaseSchema& schema : schemas) {
    serialized[schema.db_id] = serialize_schema(schema);
  }
  for (size_t i = 0; i < examples.size(); ++i) {
    auto it = serialized.find(examples[i].db_id);
    if (it == serialized.end()) {
      throw DataError("example " + std::to_string(i) + ": unresolved db_id '" +
                      examples[i].db_id + "'");
    }
    examples[i].formatted_input = format_input(examples[i].question, it->second, style);
  }
}

std::pair<std::vector<int>, std::vector<int>> make_training_pair(const Example& example,
                                                                 InputStyle style,
                                                                 const Vocabulary& vocab,
                                                                 int max_len) {
  if (example.formatted_input.empty()) {
    throw DataError("make_training_pair: example has no formatted_input");
  }
  if (style == InputStyle::Gpt2Prompt) {
    std::vector<int> prompt = encode(example.formatted_input, vocab, max_len, false);
    if (static_cast<int>(prompt.size()) >= max_len) {
      throw DataError("make_training_pair: no room for target (prompt fills all " +
                      std::to_string(max_len) + " positions)");
    }
    std::vector<int> ids = prompt;
    for (const std::string& tok : tokenize_text(example.gold_sql)) {
      if (static_cast<int>(ids.size()) >= max_len) break;
      ids.push_back(vocab.id(tok));
    }
    if (static_cast<int>(ids.size()) < max_len) ids.push_back(kEosId);
    ids.resize(static_cast<size_t>(max_len), kPadId);
    std::vector<int> labels = labels_for_training(ids, kIgnoreIndex, prompt.size());
    return {std::move(ids), std::move(labels)};
  }

  std::vector<int> input_ids = encode(example.formatted_input, vocab, max_len, true);
  std::vector<int> target;
  target.push_back(kBosId);
  for (const std::string& tok : tokenize_text(example.gold_sql)) {
    if (static_cast<int>(target.size()) >= max_len) break;
    target.push_back(vocab.id(tok));
  }
  if (static_cast<int>(target.size()) < max_len) target.push_back(kEosId);
  target.resize(static_cast<size_t>(max_len), kPadId);
  std::vector<int> labels = labels_for_training(target, kIgnoreIndex, 0);
  return {std::move(input_ids), std::move(labels)};
}

namespace {

struct SynthColumn {
  const char* name;
};

struct SynthTable {
  const char* name;
  std::vector<const char*> columns;
};

struct SynthDb {
  const char* db_id;
  std::vector<SynthTable> tables;
};

const std::vector<SynthDb>& synth_schemas() {
  static const std::vector<SynthDb> dbs = {
      {"company",
       {{"employees", {"id", "name", "age", "salary"}},
        {"departments", {"id", "name", "budget"}}}},
      {"shop", {{"products", {"id", "name", "price", "stock"}}}},
      {"school", {{"students", {"id", "name", "grade", "score"}}}},
      {"sales",
       {{"orders", {"id", "item", "total", "quantity"}},
        {"customers", {"id", "name", "city"}}}},
  };
  return dbs;
}

struct OpChoice {
  const char* sql;
  const char* words;
};

const OpChoice kOps[] = {{"=", "equal to"}, {"<", "less than"}, {">", "greater than"}};

struct AggChoice {
  const char* sql;
  const char* words;
};

const AggChoice kAggs[] = {
    {"count", "count"}, {"max", "maximum"}, {"min", "minimum"}, {"avg", "average"}, {"sum", "total"}};

}  // namespace

std::pair<std::vector<DatabaseSchema>, std::vector<Example>> synth_dataset(uint64_t seed, int n) {
  if (n < 1) throw DataError("synth_dataset: n must be >= 1");

  std::vector<DatabaseSchema> schemas;
  for (const SynthDb& db : synth_schemas()) {
    DatabaseSchema schema;
    schema.db_id = db.db_id;
    for (const SynthTable& t : db.tables) {
      TableSchema table;
      table.name = t.name;
      for (const char* c : t.columns) table.columns.emplace_back(c);
      schema.tables.push_back(std::move(table));
    }
    schemas.push_back(std::move(schema));
  }

  Rng rng(seed);
  std::vector<Example> examples;
  examples.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const SynthDb& db = synth_schemas()[rng.below(synth_schemas().size())];
    const SynthTable& table = db.tables[rng.below(db.tables.size())];
    const char* col = table.columns[rng.below(table.columns.size())];

    Example ex;
    ex.db_id = db.db_id;
    switch (rng.below(3)) {
      case 0: {
        ex.question = std::string("show the ") + col + " of all " + table.name;
        ex.gold_sql = std::string("SELECT ") + col + " FROM " + table.name;
        break;
      }
      case 1: {
        const char* filter_col = table.columns[rng.below(table.columns.size())];
        const OpChoice& op = kOps[rng.below(3)];
        int value = static_cast<int>(rng.below(10));
        ex.question = std::string("show the ") + col + " of " + table.name + " where " +
                      filter_col + " is " + op.words + " " + std::to_string(value);
        ex.gold_sql = std::string("SELECT ") + col + " FROM " + table.name + " WHERE " +
                      filter_col + " " + op.sql + " " + std::to_string(value);
        break;
      }
      default: {
        // gold SQL is written token-separated so the word-level detokenizer
        // can reproduce it character-exactly
        const AggChoice& agg = kAggs[rng.below(5)];
        ex.question = std::string("what is the ") + agg.words + " " + col + " of " + table.name;
        ex.gold_sql = std::string("SELECT ") + agg.sql + " ( " + col + " ) FROM " + table.name;
        break;
      }
    }
    examples.push_back(std::move(ex));
  }
  return {std::move(schemas), std::move(examples)};
}

void write_dataset_tsv(const std::vector<Example>& examples, const std::filesystem::path& path,
                       const std::string& header_comment) {
  for (size_t i = 0; i < examples.size(); ++i) {
    if (examples[i].formatted_input.empty()) {
      throw DataError("dataset record " + std::to_string(i) + " has no formatted_input");
    }
    check_no_control_chars(examples[i].formatted_input, "formatted_input", i);
    check_no_control_chars(examples[i].gold_sql, "gold_sql", i);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  if (!header_comment.empty()) {
    std::istringstream lines(header_comment);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  for (const Example& ex : examples) {
    out << ex.formatted_input << '\t' << ex.gold_sql << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<Example> read_dataset_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<Example> examples;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing tab separator");
    }
    Example ex;
    ex.formatted_input = line.substr(0, tab);
    ex.gold_sql = line.substr(tab + 1);
    if (ex.formatted_input.empty() || ex.gold_sql.empty()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": empty field");
    }
    examples.push_back(std::move(ex));
  }
  return examples;
}

}  // namespace sqlformer
