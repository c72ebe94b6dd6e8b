#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sqlformer/common.hpp"

namespace sqlformer {

/// Lightweight SQL normalization: lowercase, single spaces around the
/// punctuation set ( ) , ; = < > <= >= != * (multi-char operators kept
/// atomic), whitespace runs collapsed, outer space trimmed, and a single
/// trailing semicolon dropped. Idempotent.
std::string normalize_sql(const std::string& s);

/// Logical form accuracy: equality after normalize_sql.
bool lfacc(const std::string& pred, const std::string& gold);

/// Strict character-level equality.
bool exact_match(const std::string& pred, const std::string& gold);

/// Smoothed sentence-level BLEU with n <= 4, uniform weights 1/4 and brevity
/// penalty min(1, exp(1 - r/c)). Orders with zero candidate n-grams are
/// neutral; orders with candidates but zero matches take an epsilon 1e-9
/// numerator. Empty prediction scores 0; empty reference throws.
double bleu_sentence(const std::vector<std::string>& pred_tokens,
                     const std::vector<std::string>& gold_tokens);

struct SampleMetrics {
  std::string prediction;
  std::string gold;
  std::string norm_prediction;
  std::string norm_gold;
  bool lfacc = false;
  bool em = false;
  double bleu = 0.0;
};

struct ReportProvenance {
  std::string model_id;
  std::string checkpoint;
  std::string split;
};

struct MetricReport {
  int n_samples = 0;
  double lfacc = 0.0;
  double bleu = 0.0;
  double em = 0.0;
  std::vector<SampleMetrics> samples;
  ReportProvenance provenance;
};

/// Per-sample metrics plus corpus means. BLEU is computed on the
/// whitespace tokens of the normalized strings. Lengths must match and be
/// at least 1.
MetricReport evaluate(const std::vector<std::string>& predictions,
                      const std::vector<std::string>& golds,
                      const ReportProvenance& provenance = {});

/// Reads two aligned line-oriented UTF-8 files (one prediction / one gold
/// per line) and evaluates them.
MetricReport evaluate_files(const std::filesystem::path& pred_path,
                            const std::filesystem::path& gold_path,
                            const ReportProvenance& provenance = {});

/// Structured JSON report; resolved_config_json (when non-empty) is embedded
/// verbatim under "config" for provenance.
void write_report_json(const MetricReport& report, const std::filesystem::path& path,
                       const std::string& resolved_config_json = "");

/// Human-readable table with the LFAcc / BLEU / EM columns, one row per
/// labelled report.
std::string render_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows);

}  // namespace sqlformer
