// sqlformer: desk-scale text-to-SQL pipeline.
//
// Subcommands cover the full workflow: synth/ingest produce datasets, train
// fits a transformer from scratch, generate decodes with beam search,
// evaluate scores predictions, sweep compares iteration budgets.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sqlformer/data.hpp"
#include "sqlformer/decoding.hpp"
#include "sqlformer/metrics.hpp"
#include "sqlformer/model.hpp"
#include "sqlformer/tokenizer.hpp"
#include "sqlformer/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sqlformer;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

// Flags shared by train and sweep.
struct TrainCli {
  std::string data_path;
  std::string valid_path;
  std::string out_dir = "run";
  std::string style = "t5";
  std::string paradigm = "enc_dec";
  std::string activation = "relu";
  int iterations = 500;
  int batch_size = 16;
  float learning_rate = 3e-4f;
  uint64_t seed = 0;
  int eval_every = 0;
  int max_len = 256;
  int eval_limit = 1000;
  int vocab_max_size = 4096;
  int n_layers = 0;  // 0 = desk default for the paradigm
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 256;
  float dropout = 0.0f;
  float grad_clip = 1.0f;
  bool cosine_lr = false;
};

void add_train_options(CLI::App* cmd, TrainCli& t) {
  cmd->add_option("--data", t.data_path, "Preprocessed training TSV")->required();
  cmd->add_option("--valid", t.valid_path,
                  "Preprocessed validation TSV (defaults to the training file)");
  cmd->add_option("--out-dir", t.out_dir, "Output directory");
  cmd->add_option("--style", t.style, "Input style: t5, bart or gpt2");
  cmd->add_option("--paradigm", t.paradigm, "Model paradigm: enc_dec or dec_only");
  cmd->add_option("--activation", t.activation, "FFN activation: relu or gelu");
  cmd->add_option("--iterations", t.iterations, "Optimizer steps");
  cmd->add_option("--batch-size", t.batch_size, "Batch size");
  cmd->add_option("--lr", t.learning_rate, "Learning rate");
  cmd->add_option("--seed", t.seed, "Random seed");
  cmd->add_option("--eval-every", t.eval_every, "Validation interval in steps (0 = auto)");
  cmd->add_option("--max-len", t.max_len, "Tokenized sequence length");
  cmd->add_option("--eval-limit", t.eval_limit, "Validation samples per evaluation");
  cmd->add_option("--vocab-max-size", t.vocab_max_size, "Vocabulary size cap");
  cmd->add_option("--n-layers", t.n_layers, "Layers per stack (0 = desk default)");
  cmd->add_option("--n-heads", t.n_heads, "Attention heads");
  cmd->add_option("--d-model", t.d_model, "Model width");
  cmd->add_option("--d-ff", t.d_ff, "Feed-forward width");
  cmd->add_option("--dropout", t.dropout, "Dropout rate");
  cmd->add_option("--grad-clip", t.grad_clip, "Global gradient norm clip (<= 0 disables)");
  cmd->add_flag("--cosine-lr", t.cosine_lr, "Cosine learning-rate schedule");
}

struct ResolvedTraining {
  std::vector<Example> train_examples;
  std::vector<Example> valid_examples;
  Vocabulary vocab;
  ModelConfig model_config;
  TrainConfig train_config;
};

ResolvedTraining resolve_training(const TrainCli& t) {
  ResolvedTraining r;
  r.train_examples = read_dataset_tsv(t.data_path);
  if (r.train_examples.empty()) throw DataError(t.data_path + ": no records");
  r.valid_examples = t.valid_path.empty() ? r.train_examples : read_dataset_tsv(t.valid_path);

  std::vector<std::string> corpus;
  for (const Example& ex : r.train_examples) {
    corpus.push_back(ex.formatted_input);
    corpus.push_back(ex.gold_sql);
  }
  r.vocab = Vocabulary::build(corpus, t.vocab_max_size);
  r.vocab.set_max_context(t.max_len);

  Paradigm paradigm = paradigm_from_string(t.paradigm);
  r.model_config = desk_config(paradigm);
  r.model_config.n_layers = t.n_layers > 0 ? t.n_layers : r.model_config.n_layers;
  r.model_config.n_heads = t.n_heads;
  r.model_config.d_model = t.d_model;
  r.model_config.d_ff = t.d_ff;
  r.model_config.dropout_rate = t.dropout;
  r.model_config.activation = activation_from_string(t.activation);
  r.model_config.vocab_size = r.vocab.size();
  r.model_config.max_positions = t.max_len;
  r.model_config.validate();

  r.train_config.iterations = t.iterations;
  r.train_config.batch_size = t.batch_size;
  r.train_config.learning_rate = t.learning_rate;
  r.train_config.seed = t.seed;
  r.train_config.eval_every = t.eval_every;
  r.train_config.max_len = t.max_len;
  r.train_config.style = input_style_from_string(t.style);
  r.train_config.paradigm = paradigm;
  r.train_config.grad_clip = t.grad_clip;
  r.train_config.cosine_lr = t.cosine_lr;
  r.train_config.eval_limit = t.eval_limit;
  r.train_config.validate();
  return r;
}

json train_cli_json(const TrainCli& t) {
  return json{{"data", t.data_path},
              {"valid", t.valid_path},
              {"out_dir", t.out_dir},
              {"style", t.style},
              {"paradigm", t.paradigm},
              {"activation", t.activation},
              {"iterations", t.iterations},
              {"batch_size", t.batch_size},
              {"lr", t.learning_rate},
              {"seed", t.seed},
              {"eval_every", t.eval_every},
              {"max_len", t.max_len},
              {"eval_limit", t.eval_limit},
              {"vocab_max_size", t.vocab_max_size},
              {"n_layers", t.n_layers},
              {"n_heads", t.n_heads},
              {"d_model", t.d_model},
              {"d_ff", t.d_ff},
              {"dropout", t.dropout},
              {"grad_clip", t.grad_clip},
              {"cosine_lr", t.cosine_lr}};
}

std::string format_version_header(const json& config) {
  return "sqlformer format_version=1\nconfig " + config.dump();
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    for (const std::string& line : lines) out << line << '\n';
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

int run_ingest(const std::string& tables_path, const std::string& examples_path,
               const std::string& out_path, const std::string& style_name) {
  InputStyle style = input_style_from_string(style_name);
  auto [schemas, examples] = load_spider(tables_path, examples_path);
  format_examples(examples, schemas, style);
  json config{{"tables", tables_path},
              {"examples", examples_path},
              {"out", out_path},
              {"style", style_name}};
  write_dataset_tsv(examples, out_path, format_version_header(config));
  std::cout << "wrote " << examples.size() << " records (" << schemas.size() << " schemas) to "
            << out_path << "\n";
  return kExitOk;
}

int run_synth(uint64_t seed, int n, int n_valid, int n_test, const std::string& out_dir) {
  fs::create_directories(out_dir);
  auto [schemas, train_examples] = synth_dataset(seed, n);
  save_spider_tables(schemas, fs::path(out_dir) / "tables.json");
  save_spider_examples(train_examples, fs::path(out_dir) / "train_examples.json");
  if (n_valid > 0) {
    auto [s2, valid_examples] = synth_dataset(seed + 1, n_valid);
    save_spider_examples(valid_examples, fs::path(out_dir) / "valid_examples.json");
  }
  if (n_test > 0) {
    auto [s3, test_examples] = synth_dataset(seed + 2, n_test);
    save_spider_examples(test_examples, fs::path(out_dir) / "test_examples.json");
  }
  std::cout << "wrote synthetic dataset (train " << n << ", valid " << n_valid << ", test "
            << n_test << ") to " << out_dir << "\n";
  return kExitOk;
}

int run_generate(const std::string& checkpoint_path, const std::string& vocab_path,
                 const std::string& input_path, const std::string& out_path,
                 const std::string& gold_out, int beam, int max_len) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  TransformerModel model = model_from_checkpoint(ckpt);
  Vocabulary vocab = Vocabulary::load(vocab_path);
  if (vocab.size() != model.config().vocab_size) {
    throw DataError("vocabulary size " + std::to_string(vocab.size()) +
                    " does not match checkpoint vocab_size " +
                    std::to_string(model.config().vocab_size));
  }
  std::vector<Example> examples = read_dataset_tsv(input_path);
  if (examples.empty()) throw DataError(input_path + ": no records");

  GenerateOptions opts;
  opts.beam_size = beam;
  opts.max_len = max_len;
  std::vector<std::string> preds;
  std::vector<std::string> golds;
  for (const Example& ex : examples) {
    std::vector<int> input_ids =
        encode(ex.formatted_input, vocab, model.config().max_positions, false);
    std::vector<int> generated = generate(model, input_ids, opts);
    if (model.config().paradigm == Paradigm::DecOnly) {
      // Reassemble prompt + generation so the SQL: marker strip applies.
      std::vector<int> full = input_ids;
      full.insert(full.end(), generated.begin(), generated.end());
      preds.push_back(ids_to_sql(full, vocab));
    } else {
      preds.push_back(ids_to_sql(generated, vocab));
    }
    golds.push_back(ex.gold_sql);
  }
  write_lines(out_path, preds);
  if (!gold_out.empty()) write_lines(gold_out, golds);
  std::cout << "wrote " << preds.size() << " predictions to " << out_path << "\n";
  return kExitOk;
}

int run_evaluate(const std::string& pred_path, const std::string& gold_path,
                 const std::string& report_path, const std::string& model_id,
                 const std::string& split) {
  ReportProvenance provenance{model_id, "", split};
  MetricReport report = evaluate_files(pred_path, gold_path, provenance);
  json config{{"pred", pred_path}, {"gold", gold_path}, {"model_id", model_id}, {"split", split}};
  if (!report_path.empty()) write_report_json(report, report_path, config.dump());
  std::cout << render_report_table({{model_id.empty() ? "model" : model_id, report}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sqlformer: desk-scale text-to-SQL transformers"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Key-value config file (INI; flags override)");

  // ingest
  std::string ingest_tables, ingest_examples, ingest_out, ingest_style = "t5";
  CLI::App* ingest = app.add_subcommand("ingest", "Convert Spider JSON to a dataset TSV");
  ingest->add_option("--tables", ingest_tables, "Spider tables JSON")->required();
  ingest->add_option("--examples", ingest_examples, "Spider examples JSON")->required();
  ingest->add_option("--out", ingest_out, "Output TSV path")->required();
  ingest->add_option("--style", ingest_style, "Input style: t5, bart or gpt2");

  // synth
  uint64_t synth_seed = 0;
  int synth_n = 64, synth_valid = 16, synth_test = 16;
  std::string synth_out = "synth";
  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic toy NL->SQL dataset");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--n", synth_n, "Training examples");
  synth->add_option("--n-valid", synth_valid, "Validation examples (0 to skip)");
  synth->add_option("--n-test", synth_test, "Test examples (0 to skip)");
  synth->add_option("--out-dir", synth_out, "Output directory");

  // train
  TrainCli train_cli;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a dataset TSV");
  add_train_options(train_cmd, train_cli);

  // generate
  std::string gen_ckpt, gen_vocab, gen_input, gen_out, gen_gold_out;
  int gen_beam = 4, gen_max_len = 128;
  CLI::App* gen = app.add_subcommand("generate", "Decode predictions with beam search");
  gen->add_option("--checkpoint", gen_ckpt, "Checkpoint file")->required();
  gen->add_option("--vocab", gen_vocab, "Vocabulary file")->required();
  gen->add_option("--input", gen_input, "Input dataset TSV")->required();
  gen->add_option("--out", gen_out, "Predictions output (one per line)")->required();
  gen->add_option("--gold-out", gen_gold_out, "Also write gold SQL lines here");
  gen->add_option("--beam", gen_beam, "Beam size");
  gen->add_option("--max-len", gen_max_len, "Max generated tokens");

  // evaluate
  std::string eval_pred, eval_gold, eval_report, eval_model_id, eval_split;
  CLI::App* eval = app.add_subcommand("evaluate", "Score predictions against gold SQL");
  eval->add_option("--pred", eval_pred, "Predictions file")->required();
  eval->add_option("--gold", eval_gold, "Gold file")->required();
  eval->add_option("--report", eval_report, "JSON report output path");
  eval->add_option("--model-id", eval_model_id, "Model label for the report");
  eval->add_option("--split", eval_split, "Split label for the report");

  // sweep
  TrainCli sweep_cli;
  std::vector<int> sweep_budgets = {1000, 2000, 3000, 4000, 5000};
  int sweep_divisor = 10, sweep_beam = 4, sweep_gen_max_len = 128;
  CLI::App* sweep = app.add_subcommand("sweep", "Compare training iteration budgets");
  add_train_options(sweep, sweep_cli);
  sweep->add_option("--budgets", sweep_budgets, "Iteration budgets before scaling");
  sweep->add_option("--divisor", sweep_divisor, "Desk-scale budget divisor");
  sweep->add_option("--beam", sweep_beam, "Beam size for sweep evaluation");
  sweep->add_option("--gen-max-len", sweep_gen_max_len, "Max generated tokens");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*ingest) return run_ingest(ingest_tables, ingest_examples, ingest_out, ingest_style);
    if (*synth) return run_synth(synth_seed, synth_n, synth_valid, synth_test, synth_out);
    if (*train_cmd) {
      ResolvedTraining r = resolve_training(train_cli);
      fs::create_directories(train_cli.out_dir);
      json run_config = train_cli_json(train_cli);

      TransformerModel model = init_parameters(r.model_config, r.train_config.seed);
      TrainResult result = train(model, r.train_examples, r.valid_examples, r.vocab,
                                 r.train_config);
      result.best.run_config_json = run_config.dump();

      fs::path out_dir(train_cli.out_dir);
      r.vocab.save(out_dir / "vocab.txt");
      save_checkpoint(result.best, out_dir / "checkpoint.bin");
      write_history_csv(result.history, out_dir / "history.csv",
                        format_version_header(run_config));
      std::cout << "best checkpoint: step " << result.best.step << ", val LFAcc "
                << result.best.val_lfacc << "\n";
      std::cout << "artifacts in " << train_cli.out_dir << ": vocab.txt checkpoint.bin history.csv"
                << "\n";
      return kExitOk;
    }
    if (*gen) {
      return run_generate(gen_ckpt, gen_vocab, gen_input, gen_out, gen_gold_out, gen_beam,
                          gen_max_len);
    }
    if (*eval) return run_evaluate(eval_pred, eval_gold, eval_report, eval_model_id, eval_split);
    if (*sweep) {
      ResolvedTraining r = resolve_training(sweep_cli);
      fs::create_directories(sweep_cli.out_dir);
      json run_config = train_cli_json(sweep_cli);
      run_config["budgets"] = sweep_budgets;
      run_config["divisor"] = sweep_divisor;
      run_config["beam"] = sweep_beam;

      SweepReport report = iteration_sweep(r.model_config, r.train_examples, r.valid_examples,
                                           r.vocab, r.train_config, sweep_budgets, sweep_divisor,
                                           sweep_beam, sweep_gen_max_len);

      json rows = json::array();
      std::vector<std::pair<std::string, MetricReport>> table;
      std::ostringstream csv;
      csv << "# sqlformer format_version=1\n# config " << run_config.dump() << "\n";
      csv << "budget,steps,val_lfacc,val_bleu,val_em\n";
      for (const SweepRow& row : report.rows) {
        rows.push_back({{"budget", row.budget},
                        {"steps", row.steps},
                        {"val_lfacc", row.lfacc},
                        {"val_bleu", row.bleu},
                        {"val_em", row.em}});
        csv << row.budget << ',' << row.steps << ',' << row.lfacc << ',' << row.bleu << ','
            << row.em << '\n';
        MetricReport m;
        m.n_samples = static_cast<int>(
            std::min<size_t>(r.valid_examples.size(), static_cast<size_t>(r.train_config.eval_limit)));
        m.lfacc = row.lfacc;
        m.bleu = row.bleu;
        m.em = row.em;
        table.emplace_back("budget " + std::to_string(row.budget), m);
      }
      json sweep_json{{"format_version", 1}, {"config", run_config}, {"rows", rows}};

      fs::path out_dir(sweep_cli.out_dir);
      write_lines(out_dir / "sweep.json", {sweep_json.dump(1)});
      write_lines(out_dir / "sweep.csv", {csv.str()});
      std::cout << render_report_table(table);
      return kExitOk;
    }
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
