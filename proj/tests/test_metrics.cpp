#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "sqlformer/metrics.hpp"
#include "test_support.hpp"

using namespace sqlformer;
using testsupport::Rng;

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string random_sqlish(Rng& rng, size_t max_len = 24) {
  static const char alphabet[] = "abcXY01 ,();=<>*\t!";
  size_t n = rng.below(max_len + 1);
  std::string s;
  for (size_t i = 0; i < n; ++i) s.push_back(alphabet[rng.below(sizeof(alphabet) - 1)]);
  return s;
}

}  // namespace

TEST_CASE("normalize_sql applies the documented rules") {
  CHECK(normalize_sql("SELECT Name FROM t ;") == normalize_sql("select name from t"));
  CHECK(normalize_sql("SELECT  a ,b FROM t") == "select a , b from t");
  CHECK(normalize_sql("a<=b") == "a <= b");
  CHECK(normalize_sql("a>=b") == "a >= b");
  CHECK(normalize_sql("a!=b") == "a != b");
  CHECK(normalize_sql("a < = b") == "a < = b");  // never merged
  CHECK(normalize_sql("count(*)") == "count ( * )");
  CHECK(normalize_sql("  x  ") == "x");
  CHECK(normalize_sql("a;b;") == "a ; b");  // only the trailing semicolon drops
  CHECK(normalize_sql("") == "");
  CHECK(normalize_sql(";") == "");
}

TEST_CASE("normalize_sql is idempotent on a fuzz corpus") {
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    std::string s = random_sqlish(rng);
    std::string once = normalize_sql(s);
    CHECK(normalize_sql(once) == once);
  }
}

TEST_CASE("lfacc matches after normalization only") {
  CHECK(lfacc("SELECT 1", "SELECT 1"));
  CHECK(lfacc("SELECT  Name FROM T ;", "select name from t"));
  CHECK_FALSE(lfacc("select a from t", "select b from t"));
}

TEST_CASE("exact match is strict character equality") {
  CHECK(exact_match("SELECT 1", "SELECT 1"));
  CHECK_FALSE(exact_match("SELECT 1", "select 1"));
  CHECK_FALSE(exact_match("SELECT 1", "SELECT 1 "));
}

TEST_CASE("bleu: identical sequences score exactly 1") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    size_t n = 1 + rng.below(10);
    std::vector<std::string> tokens;
    for (size_t i = 0; i < n; ++i) tokens.push_back("tok" + std::to_string(rng.below(5)));
    CHECK(bleu_sentence(tokens, tokens) == 1.0);
  }
}

TEST_CASE("bleu: hand-derived brevity penalty example") {
  std::vector<std::string> pred = {"select", "a", "from", "t"};
  std::vector<std::string> gold = {"select", "a", "from", "t", "where", "b"};
  // p1..p4 all 1, BP = exp(1 - 6/4)
  CHECK(std::abs(bleu_sentence(pred, gold) - 0.6065) < 1e-4);
  CHECK(bleu_sentence(pred, gold) == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("bleu: zero overlap hits the smoothing floor, not zero") {
  std::vector<std::string> pred = {"w", "x", "y", "z"};
  std::vector<std::string> gold = {"a", "b", "c", "d"};
  double score = bleu_sentence(pred, gold);
  CHECK(score > 0.0);
  CHECK(score < 1e-6);
}

TEST_CASE("bleu: empty prediction scores zero, empty reference throws") {
  std::vector<std::string> gold = {"a"};
  CHECK(bleu_sentence({}, gold) == 0.0);
  CHECK_THROWS_AS(bleu_sentence(gold, {}), DataError);
}

TEST_CASE("bleu is invariant under consistent token renaming") {
  Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    size_t np = 1 + rng.below(8), ng = 1 + rng.below(8);
    std::vector<std::string> pred, gold;
    for (size_t i = 0; i < np; ++i) pred.push_back("t" + std::to_string(rng.below(4)));
    for (size_t i = 0; i < ng; ++i) gold.push_back("t" + std::to_string(rng.below(4)));
    auto renamed = [](const std::vector<std::string>& v) {
      std::vector<std::string> out;
      for (const std::string& s : v) out.push_back("renamed_" + s);
      return out;
    };
    CHECK(bleu_sentence(pred, gold) == doctest::Approx(bleu_sentence(renamed(pred), renamed(gold)))
                                           .epsilon(1e-12));
  }
}

TEST_CASE("em implies lfacc on random pairs") {
  Rng rng(17);
  for (int i = 0; i < 3000; ++i) {
    std::string a = random_sqlish(rng);
    std::string b = rng.below(2) == 0 ? a : random_sqlish(rng);
    if (exact_match(a, b)) CHECK(lfacc(a, b));
  }
}

TEST_CASE("evaluate computes per-sample and corpus metrics") {
  std::vector<std::string> preds = {"SELECT a FROM t", "select b from u ;", "wrong"};
  std::vector<std::string> golds = {"SELECT a FROM t", "SELECT B FROM u", "SELECT c FROM v"};
  MetricReport report = evaluate(preds, golds, {"m1", "ck", "test"});
  CHECK(report.n_samples == 3);
  CHECK(report.samples[0].em);
  CHECK(report.samples[0].lfacc);
  CHECK_FALSE(report.samples[1].em);
  CHECK(report.samples[1].lfacc);
  CHECK_FALSE(report.samples[2].lfacc);
  CHECK(report.lfacc == doctest::Approx(2.0 / 3.0));
  CHECK(report.em == doctest::Approx(1.0 / 3.0));
  CHECK(report.bleu > 0.0);
  CHECK(report.provenance.model_id == "m1");

  // em <= lfacc always (strictness ordering)
  CHECK(report.em <= report.lfacc);

  CHECK_THROWS_AS(evaluate({}, {}), DataError);
  CHECK_THROWS_AS(evaluate({"a"}, {"a", "b"}), DataError);
}

TEST_CASE("corpus metrics are invariant to pair order") {
  Rng rng(19);
  std::vector<std::string> preds, golds;
  for (int i = 0; i < 20; ++i) {
    preds.push_back("select c" + std::to_string(rng.below(4)) + " from t");
    golds.push_back("select c" + std::to_string(rng.below(4)) + " from t");
  }
  MetricReport fwd = evaluate(preds, golds);
  std::reverse(preds.begin(), preds.end());
  std::reverse(golds.begin(), golds.end());
  MetricReport rev = evaluate(preds, golds);
  CHECK(fwd.lfacc == rev.lfacc);
  CHECK(fwd.em == rev.em);
  CHECK(fwd.bleu == doctest::Approx(rev.bleu).epsilon(1e-12));
}

TEST_CASE("file-based evaluation and JSON report") {
  auto dir = std::filesystem::temp_directory_path();
  auto pred_path = dir / "sqlf_preds.txt";
  auto gold_path = dir / "sqlf_golds.txt";
  {
    std::ofstream p(pred_path), g(gold_path);
    p << "SELECT a FROM t\nselect b from u\n";
    g << "SELECT a FROM t\nSELECT b FROM u\n";
  }
  MetricReport report = evaluate_files(pred_path, gold_path, {"toy", "", "dev"});
  CHECK(report.n_samples == 2);
  CHECK(report.lfacc == 1.0);
  CHECK(report.em == 0.5);

  auto report_path = dir / "sqlf_report.json";
  write_report_json(report, report_path, R"({"beam":4})");
  std::ifstream in(report_path);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(contents.find("\"format_version\"") != std::string::npos);
  CHECK(contents.find("\"beam\"") != std::string::npos);
  CHECK(contents.find("\"lfacc\"") != std::string::npos);

  // mismatched line counts
  {
    std::ofstream p(pred_path);
    p << "only one line\n";
  }
  CHECK_THROWS_AS(evaluate_files(pred_path, gold_path, {}), DataError);

  std::filesystem::remove(pred_path);
  std::filesystem::remove(gold_path);
  std::filesystem::remove(report_path);
}

TEST_CASE("report table renders the three metric columns") {
  MetricReport r;
  r.n_samples = 10;
  r.lfacc = 0.5;
  r.bleu = 0.25;
  r.em = 0.1;
  std::string table = render_report_table({{"toy-model", r}});
  CHECK(table.find("LFAcc (%)") != std::string::npos);
  CHECK(table.find("BLEU (%)") != std::string::npos);
  CHECK(table.find("EM (%)") != std::string::npos);
  CHECK(table.find("toy-model") != std::string::npos);
  CHECK(table.find("50.00") != std::string::npos);
}

TEST_CASE("bleu pre-tokenization contract: whitespace split of normalized strings") {
  std::string pred = "SELECT a,b FROM t";
  std::string gold = "select a , b from t";
  auto pt = split_ws(normalize_sql(pred));
  auto gt = split_ws(normalize_sql(gold));
  CHECK(bleu_sentence(pt, gt) == 1.0);
}
