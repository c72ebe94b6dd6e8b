#include <benchmark/benchmark.h>

#include "sqlformer/decoding.hpp"
#include "sqlformer/model.hpp"
#include "sqlformer/tokenizer.hpp"

using namespace sqlformer;

namespace {

std::vector<int> ids_of(int len, int vocab, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> ids(static_cast<size_t>(len));
  for (int& id : ids) {
    id = kNumSpecialTokens + static_cast<int>(rng.below(static_cast<uint64_t>(vocab - kNumSpecialTokens)));
  }
  return ids;
}

void bm_generate(benchmark::State& state) {
  int beam = static_cast<int>(state.range(0));
  ModelConfig cfg = desk_config(Paradigm::EncDec);
  cfg.vocab_size = 128;
  cfg.max_positions = 64;
  TransformerModel model = init_parameters(cfg, 0);
  std::vector<int> input = ids_of(24, 128, 5);

  GenerateOptions opts;
  opts.beam_size = beam;
  opts.max_len = 16;
  for (auto _ : state) {
    std::vector<int> out = generate(model, input, opts);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(bm_generate)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
