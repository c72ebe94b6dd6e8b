#include <benchmark/benchmark.h>

#include "sqlformer/model.hpp"
#include "sqlformer/tokenizer.hpp"
#include "sqlformer/training.hpp"

using namespace sqlformer;

namespace {

ModelConfig bench_config(Paradigm paradigm, int vocab) {
  ModelConfig cfg = desk_config(paradigm);
  cfg.vocab_size = vocab;
  cfg.max_positions = 64;
  return cfg;
}

std::vector<int> ids_of(int len, int vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids(static_cast<size_t>(len));
  for (int& id : ids) {
    id = kNumSpecialTokens + static_cast<int>(rng.below(static_cast<uint64_t>(vocab - kNumSpecialTokens)));
  }
  return ids;
}

void bm_forward_enc_dec(benchmark::State& state) {
  TransformerModel model = init_parameters(bench_config(Paradigm::EncDec, 128), 0);
  std::vector<int> src = ids_of(24, 128, 1);
  std::vector<int> tgt = ids_of(12, 128, 2);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor logits = forward_enc_dec(model, src, tgt);
    benchmark::DoNotOptimize(logits.data().data());
  }
}
BENCHMARK(bm_forward_enc_dec);

void bm_forward_dec_only(benchmark::State& state) {
  TransformerModel model = init_parameters(bench_config(Paradigm::DecOnly, 128), 0);
  std::vector<int> ids = ids_of(32, 128, 3);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor logits = forward_dec_only(model, ids);
    benchmark::DoNotOptimize(logits.data().data());
  }
}
BENCHMARK(bm_forward_dec_only);

void bm_train_step(benchmark::State& state) {
  TransformerModel model = init_parameters(bench_config(Paradigm::EncDec, 128), 0);
  std::vector<TrainingPair> batch;
  for (int e = 0; e < 16; ++e) {
    TrainingPair pair;
    pair.input_ids = ids_of(24, 128, 10 + static_cast<uint64_t>(e));
    std::vector<int> target = {kBosId};
    auto sql = ids_of(9, 128, 100 + static_cast<uint64_t>(e));
    target.insert(target.end(), sql.begin(), sql.end());
    target.push_back(kEosId);
    pair.label_ids = labels_for_training(target, kIgnoreIndex);
    batch.push_back(std::move(pair));
  }
  auto params = model.parameters();
  AdamState adam;
  for (auto _ : state) {
    Tensor l = loss(model, batch);
    backward(l);
    clip_global_norm(params, 1.0);
    optimizer_step(params, adam, 3e-4f);
    for (Tensor& p : params) p.zero_grad();
    benchmark::DoNotOptimize(l.item());
  }
}
BENCHMARK(bm_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
