#include <benchmark/benchmark.h>

#include "sqlformer/common.hpp"
#include "sqlformer/ops.hpp"

using namespace sqlformer;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  std::vector<float> data(shape_numel(shape));
  for (float& v : data) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);
  return Tensor::from(std::move(shape), std::move(data));
}

void bm_matmul(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(1);
  Tensor a = random_tensor({n, n}, rng);
  Tensor b = random_tensor({n, n}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor c = matmul(a, b);
    benchmark::DoNotOptimize(c.data().data());
  }
  state.SetItemsProcessed(state.iterations() * 2ll * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

void bm_softmax(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(2);
  Tensor x = random_tensor({n, n}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor s = softmax(x, -1);
    benchmark::DoNotOptimize(s.data().data());
  }
}
BENCHMARK(bm_softmax)->Arg(64)->Arg(256);

void bm_layer_norm(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(3);
  Tensor x = random_tensor({n, 128}, rng);
  Tensor g = Tensor::full({128}, 1.0f);
  Tensor b = Tensor::zeros({128});
  NoGradGuard no_grad;
  for (auto _ : state) {
    Tensor y = layer_norm(x, g, b);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(bm_layer_norm)->Arg(64)->Arg(256);

void bm_matmul_backward(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(4);
  for (auto _ : state) {
    state.PauseTiming();
    std::vector<float> da(static_cast<size_t>(n) * n), db(da.size());
    for (float& v : da) v = static_cast<float>(rng.uniform());
    for (float& v : db) v = static_cast<float>(rng.uniform());
    Tensor a = Tensor::parameter({n, n}, std::move(da));
    Tensor b = Tensor::parameter({n, n}, std::move(db));
    state.ResumeTiming();
    backward(sum(matmul(a, b)));
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(bm_matmul_backward)->Arg(64)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
