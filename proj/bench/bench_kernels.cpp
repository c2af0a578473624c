// Serial reference vs OpenMP kernels: repeated-split regression and batch
// alignment/projection.

#include <random>

#include <benchmark/benchmark.h>

#include "psynorm/align.hpp"
#include "psynorm/features_baselines.hpp"
#include "psynorm/response_parse.hpp"

using namespace psynorm;

namespace {

FeatureMatrix design(std::size_t n, std::size_t p) {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix fm;
  fm.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  fm.y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t c = 0; c < p; ++c) fm.columns.push_back("x" + std::to_string(c));
  for (std::size_t r = 0; r < n; ++r) {
    fm.row_ids.push_back("r" + std::to_string(r));
    for (std::size_t c = 0; c < p; ++c) fm.X(r, c) = g(gen);
    fm.y(r) = fm.X.row(r).sum() + g(gen);
  }
  return fm;
}

struct Batch {
  std::vector<RtSentence> refs;
  std::vector<DurationMap> maps;
};

Batch sentences(std::size_t n) {
  static const std::vector<std::string> lex = {"the", "cat", "sat", "on", "a", "mat", "dog", "ran", "home", "and"};
  std::mt19937_64 gen(2);
  Batch b;
  for (std::size_t s = 0; s < n; ++s) {
    RtSentence ref{"s" + std::to_string(s), {}};
    DurationMap dm;
    dm.status = MapStatus::ok;
    const std::size_t len = 8 + gen() % 30;
    for (std::size_t k = 0; k < len; ++k) {
      const auto& w = lex[gen() % lex.size()];
      ref.tokens.push_back(RtToken{w, 200.0, static_cast<int>(k)});
      if (gen() % 10) dm.pairs.emplace_back(gen() % 10 ? w : lex[gen() % lex.size()], 200.0);
    }
    b.refs.push_back(std::move(ref));
    b.maps.push_back(std::move(dm));
  }
  return b;
}

void BM_SplitsSerial(benchmark::State& st) {
  const auto fm = design(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(evaluate_splits_serial(fm, 100, 0.75, 0));
}

void BM_SplitsParallel(benchmark::State& st) {
  const auto fm = design(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) benchmark::DoNotOptimize(evaluate_splits(fm, 100, 0.75, 0));
}

void BM_ProjectSerial(benchmark::State& st) {
  const auto b = sentences(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(project_batch_serial(b.refs, b.maps));
}

void BM_ProjectParallel(benchmark::State& st) {
  const auto b = sentences(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(project_batch(b.refs, b.maps));
}

}  // namespace

BENCHMARK(BM_SplitsSerial)->Args({2109, 3})->Args({2500, 768})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SplitsParallel)->Args({2109, 3})->Args({2500, 768})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProjectSerial)->Arg(1213)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ProjectParallel)->Arg(1213)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
