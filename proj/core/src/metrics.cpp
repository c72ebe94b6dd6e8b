#include "sqlformer/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace sqlformer {

namespace {

bool is_sql_punct(char c) {
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

std::vector<std::string> whitespace_split(const std::string& s) {
  std::vector<std::string> tokens;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

constexpr double kBleuEpsilon = 1e-9;

}  // namespace

std::string normalize_sql(const std::string& s) {
  std::string spaced;
  spaced.reserve(s.size() * 2);
  for (size_t i = 0; i < s.size(); ++i) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
    if ((c == '<' || c == '>' || c == '!') && i + 1 < s.size() && s[i + 1] == '=') {
      spaced.push_back(' ');
      spaced.push_back(c);
      spaced.push_back('=');
      spaced.push_back(' ');
      ++i;
    } else if (is_sql_punct(c)) {
      spaced.push_back(' ');
      spaced.push_back(c);
      spaced.push_back(' ');
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      spaced.push_back(' ');
    } else {
      spaced.push_back(c);
    }
  }

  std::string out;
  out.reserve(spaced.size());
  for (char c : spaced) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
    out.push_back(c);
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();

  // Drop the trailing semicolon run (kept anywhere else); a loop keeps the
  // function idempotent on inputs like "a;;".
  while (!out.empty() && out.back() == ';') {
    out.pop_back();
    while (!out.empty() && out.back() == ' ') out.pop_back();
  }
  return out;
}

bool lfacc(const std::string& pred, const std::string& gold) {
  return normalize_sql(pred) == normalize_sql(gold);
}

bool exact_match(const std::string& pred, const std::string& gold) { return pred == gold; }

double bleu_sentence(const std::vector<std::string>& pred_tokens,
                     const std::vector<std::string>& gold_tokens) {
  if (gold_tokens.empty()) throw DataError("bleu_sentence: empty reference");
  if (pred_tokens.empty()) return 0.0;

  size_t c = pred_tokens.size();
  size_t r = gold_tokens.size();

  double log_sum = 0.0;
  for (size_t n = 1; n <= 4; ++n) {
    if (c < n) continue;  // no candidate n-grams of this order: neutral
    std::map<std::vector<std::string>, long> gold_counts;
    if (r >= n) {
      for (size_t i = 0; i + n <= r; ++i) {
        gold_counts[{gold_tokens.begin() + i, gold_tokens.begin() + i + n}]++;
      }
    }
    std::map<std::vector<std::string>, long> pred_counts;
    for (size_t i = 0; i + n <= c; ++i) {
      pred_counts[{pred_tokens.begin() + i, pred_tokens.begin() + i + n}]++;
    }
    long total = static_cast<long>(c - n + 1);
    long matched = 0;
    for (const auto& [ngram, count] : pred_counts) {
      auto it = gold_counts.find(ngram);
      if (it != gold_counts.end()) matched += std::min(count, it->second);
    }
    double numerator = matched > 0 ? static_cast<double>(matched) : kBleuEpsilon;
    log_sum += 0.25 * std::log(numerator / static_cast<double>(total));
  }

  double bp = c >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
  return bp * std::exp(log_sum);
}

MetricReport evaluate(const std::vector<std::string>& predictions,
                      const std::vector<std::string>& golds, const ReportProvenance& provenance) {
  if (predictions.size() != golds.size()) {
    throw DataError("evaluate: " + std::to_string(predictions.size()) + " predictions vs " +
                    std::to_string(golds.size()) + " golds");
  }
  if (predictions.empty()) throw DataError("evaluate: no samples");

  MetricReport report;
  report.provenance = provenance;
  report.n_samples = static_cast<int>(predictions.size());
  double lf_sum = 0.0, bleu_sum = 0.0, em_sum = 0.0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    SampleMetrics m;
    m.prediction = predictions[i];
    m.gold = golds[i];
    m.norm_prediction = normalize_sql(m.prediction);
    m.norm_gold = normalize_sql(m.gold);
    m.lfacc = m.norm_prediction == m.norm_gold;
    m.em = exact_match(m.prediction, m.gold);
    try {
      m.bleu = bleu_sentence(whitespace_split(m.norm_prediction), whitespace_split(m.norm_gold));
    } catch (const DataError& e) {
      throw DataError("evaluate: sample " + std::to_string(i) + ": " + e.what());
    }
    lf_sum += m.lfacc ? 1.0 : 0.0;
    em_sum += m.em ? 1.0 : 0.0;
    bleu_sum += m.bleu;
    report.samples.push_back(std::move(m));
  }
  report.lfacc = lf_sum / report.n_samples;
  report.bleu = bleu_sum / report.n_samples;
  report.em = em_sum / report.n_samples;
  return report;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

MetricReport evaluate_files(const std::filesystem::path& pred_path,
                            const std::filesystem::path& gold_path,
                            const ReportProvenance& provenance) {
  std::vector<std::string> preds = read_lines(pred_path);
  std::vector<std::string> golds = read_lines(gold_path);
  if (preds.size() != golds.size()) {
    throw DataError("evaluate: " + pred_path.string() + " has " + std::to_string(preds.size()) +
                    " lines but " + gold_path.string() + " has " + std::to_string(golds.size()));
  }
  return evaluate(preds, golds, provenance);
}

void write_report_json(const MetricReport& report, const std::filesystem::path& path,
                       const std::string& resolved_config_json) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["n_samples"] = report.n_samples;
  j["lfacc"] = report.lfacc;
  j["bleu"] = report.bleu;
  j["em"] = report.em;
  j["provenance"] = {{"model_id", report.provenance.model_id},
                     {"checkpoint", report.provenance.checkpoint},
                     {"split", report.provenance.split}};
  if (!resolved_config_json.empty()) {
    j["config"] = nlohmann::json::parse(resolved_config_json);
  }
  nlohmann::json samples = nlohmann::json::array();
  for (const SampleMetrics& m : report.samples) {
    samples.push_back({{"prediction", m.prediction},
                       {"gold", m.gold},
                       {"norm_prediction", m.norm_prediction},
                       {"norm_gold", m.norm_gold},
                       {"lfacc", m.lfacc},
                       {"em", m.em},
                       {"bleu", m.bleu}});
  }
  j["samples"] = std::move(samples);

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(1) << '\n';
  if (!out) throw DataError("write failed for " + path.string());
}

std::string render_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::ostringstream os;
  size_t label_width = 5;
  for (const auto& [label, report] : rows) label_width = std::max(label_width, label.size());
  os << std::left << std::setw(static_cast<int>(label_width + 2)) << "Model"
     << std::right << std::setw(12) << "LFAcc (%)" << std::setw(12) << "BLEU (%)"
     << std::setw(12) << "EM (%)" << std::setw(10) << "N" << '\n';
  os << std::string(label_width + 2 + 12 * 3 + 10, '-') << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& [label, report] : rows) {
    os << std::left << std::setw(static_cast<int>(label_width + 2)) << label << std::right
       << std::setw(12) << report.lfacc * 100.0 << std::setw(12) << report.bleu * 100.0
       << std::setw(12) << report.em * 100.0 << std::setw(10) << report.n_samples << '\n';
  }
  return os.str();
}

}  // namespace sqlformer
