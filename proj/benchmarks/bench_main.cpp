#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "sbc/kdtree.hpp"
#include "sbc/models.hpp"
#include "sbc/quantizer.hpp"
#include "sbc/synthetic.hpp"

namespace {

using namespace sbc;

const QuantizedCatalog& catalog(std::size_t rows) {
  static std::map<std::size_t, QuantizedCatalog> cache;
  auto it = cache.find(rows);
  if (it == cache.end()) {
    synthetic::ClusterConfig cfg;
    cfg.rows = rows;
    cfg.clusters = 200;
    cfg.spread = 10.0;
    cfg.seed = 3;
    it = cache.emplace(rows, synthetic::clustered_catalog(cfg)).first;
  }
  return it->second;
}

// A selective model: a handful of rows from one class against a spread of negatives.
BranchModel selective_model(const QuantizedCatalog& c, ModelKind kind) {
  LabeledSet set(c.dim());
  for (std::size_t i = 0, pos = 0; i < c.size() && pos < 20; ++i) {
    if (c.record(i).label == 5) {
      set.add(c.code(i), Label::kPositive);
      ++pos;
    }
  }
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t row = i * 997 % c.size();
    set.add(c.code(row), c.record(row).label == 5 ? Label::kPositive : Label::kNegative);
  }
  return train_model(set, kind, 1);
}

void BM_SearchPositives(benchmark::State& state) {
  const auto& c = catalog(std::size_t(state.range(0)));
  const auto index = KdTree::build(c);
  const auto model = selective_model(c, ModelKind(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(search_positives(model, index, c));
  state.SetItemsProcessed(state.iterations() * std::int64_t(c.size()));
}

void BM_ScanPositives(benchmark::State& state) {
  const auto& c = catalog(std::size_t(state.range(0)));
  const auto model = selective_model(c, ModelKind(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(scan_positives(model, c));
  state.SetItemsProcessed(state.iterations() * std::int64_t(c.size()));
}

void BM_Knn(benchmark::State& state) {
  const auto& c = catalog(std::size_t(state.range(0)));
  const auto index = KdTree::build(c);
  const auto mode = state.range(1) ? KnnMode::approximate(std::size_t(state.range(1))) : KnnMode::exact();
  std::size_t q = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(index.knn(c.code(q), 50, mode));
    q = (q + 7919) % c.size();
  }
}

void BM_Build(benchmark::State& state) {
  const auto& c = catalog(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(KdTree::build(c));
}

void BM_Encode(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  EmbeddingMatrix data(4096, 32);
  for (auto& x : data.data()) x = g(rng);
  const auto q = Quantizer::fit(data);
  for (auto _ : state) benchmark::DoNotOptimize(q.encode_matrix(data));
  state.SetBytesProcessed(state.iterations() * std::int64_t(data.data().size() * sizeof(float)));
}

}  // namespace

BENCHMARK(BM_SearchPositives)
    ->ArgsProduct({{100000, 1000000}, {int(ModelKind::kDecisionBranch), int(ModelKind::kDecisionBranchEnsemble)}})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScanPositives)
    ->ArgsProduct({{100000, 1000000}, {int(ModelKind::kDecisionBranch), int(ModelKind::kDecisionBranchEnsemble)}})
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Knn)->ArgsProduct({{100000, 1000000}, {0, 8, 64}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Build)->Arg(100000)->Arg(1000000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Encode);
BENCHMARK_MAIN();
