#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "factprobe/helper.hpp"
#include "factprobe/hidden_cache.hpp"
#include "factprobe/synthetic.hpp"

using namespace factprobe;

namespace {

SyntheticBackend make_backend(std::size_t dim, const Dataset& ds) {
  const Dataset* all[] = {&ds};
  SyntheticSpec spec;
  spec.seed = 1;
  spec.hidden_dim = dim;
  spec.vocab = build_vocab(all, 200);
  spec.gold_rank_table = draw_gold_ranks(all, 1, 0.3, 0.15, 100);
  return SyntheticBackend(spec, synthetic_templates());
}

void BM_Train(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 32;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  LabeledFeatures f;
  f.dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < d; ++j) f.features.push_back(g(rng) + (j == 0 ? 2.0 * y - 1.0 : 0.0));
    f.labels.push_back(y);
    f.provenance.push_back({i, "o", 0});
  }
  for (auto _ : state) benchmark::DoNotOptimize(train(f, {}).final_objective);
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}
BENCHMARK(BM_Train)->Arg(1000)->Arg(5000)->Unit(benchmark::kMillisecond);

void BM_SyntheticHidden(benchmark::State& state) {
  const auto ds = make_synthetic_dataset("bench", 500, 40, 1);
  const auto backend = make_backend(static_cast<std::size_t>(state.range(0)), ds);
  std::vector<std::string> texts;
  for (const auto& t : ds.triples) texts.push_back(fill_prompt(ds.template_for(t), t.subject, t.object));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(backend.hidden(texts[i++ % texts.size()]).values.data());
}
BENCHMARK(BM_SyntheticHidden)->Arg(32)->Arg(768);

void BM_SyntheticTopK(benchmark::State& state) {
  const auto ds = make_synthetic_dataset("bench", 500, 40, 1);
  const auto backend = make_backend(32, ds);
  std::vector<std::string> prompts;
  for (const auto& t : ds.triples) prompts.push_back(fill_prompt(ds.template_for(t), t.subject, std::nullopt));
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        backend.topk(prompts[i++ % prompts.size()], static_cast<std::size_t>(state.range(0))).candidates.data());
  }
}
BENCHMARK(BM_SyntheticTopK)->Arg(1)->Arg(20);

void BM_CacheLookup(benchmark::State& state) {
  const auto path = std::filesystem::temp_directory_path() /
                    ("factprobe-bench-" + std::to_string(::getpid()) + ".hsc");
  HiddenStateCache::clear(path);
  const std::size_t dim = 768;
  const std::size_t n = 2000;
  {
    HiddenStateCache cache(path);
    std::vector<float> v(dim, 0.5f);
    for (std::size_t k = 0; k < n; ++k) cache.insert(k, v);
  }
  {
    HiddenStateCache cache(path);
    std::uint64_t k = 0;
    for (auto _ : state) benchmark::DoNotOptimize(cache.lookup(k++ % n));
  }
  HiddenStateCache::clear(path);
}
BENCHMARK(BM_CacheLookup);

}  // namespace

BENCHMARK_MAIN();
