#include <benchmark/benchmark.h>

#include <histex/encoders.hpp>
#include <histex/loss.hpp>
#include <histex/retrieval.hpp>

#include <random>
#include <vector>

using namespace histex;

namespace {

Matrix gaussian(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

void BM_TopK(benchmark::State& state) {
  const Matrix bank = gaussian(state.range(0), 256, 1);
  const Vector q = gaussian(1, 256, 2).row(0).transpose();
  for (auto _ : state) benchmark::DoNotOptimize(topk(std::span<const double>(q.data(), q.size()), bank, 50));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TopK)->Arg(1000)->Arg(10000)->Arg(50000);

void BM_LossWithGradients(benchmark::State& state) {
  const Matrix p = gaussian(state.range(0), 256, 3);
  const Matrix s = gaussian(state.range(0), 256, 4);
  LossConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_contrastive(p, s, cfg, true));
}
BENCHMARK(BM_LossWithGradients)->Arg(32)->Arg(128);

void BM_ImageFeatures(benchmark::State& state) {
  EncoderConfig cfg;
  cfg.gene_dim = 100;
  DualEncoder model(cfg);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> u(0, 255);
  std::vector<Raster> patches(32, Raster(kPatchSize, kPatchSize));
  for (auto& r : patches)
    for (auto& b : r.bytes()) b = static_cast<std::uint8_t>(u(rng));
  std::vector<const Raster*> ptrs;
  for (const auto& r : patches) ptrs.push_back(&r);
  for (auto _ : state) benchmark::DoNotOptimize(model.image_features(ptrs, static_cast<std::size_t>(state.range(0))));
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_ImageFeatures)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
