// Parallel kernels against their serial references, plus one Monte-Carlo
// replicate batch.  Thread count follows TENSOPT_THREADS / OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <vector>

#include "tensopt/kernels.hpp"
#include "tensopt/mc.hpp"
#include "tensopt/random.hpp"
#include "tensopt/simgen.hpp"

namespace {

using namespace tensopt;

const Shape kShape{10, 8, 12};

struct Fixture {
  Matrix design;
  std::vector<Matrix> factors;
  std::vector<Matrix> projections;

  explicit Fixture(std::size_t n) {
    RandomStream s(7, 0, "bench");
    design = gen_design(n, kShape, s);
    for (auto d : kShape) {
      factors.push_back(s.normal_matrix(static_cast<Eigen::Index>(d), 3));
      projections.push_back(s.normal_matrix(3, static_cast<Eigen::Index>(d)));
    }
  }
};

void BM_CpFeatures(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::cp_features(f.design, kShape, f.factors));
}

void BM_CpFeaturesReference(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(reference::cp_features(f.design, kShape, f.factors));
}

void BM_Mttkrp(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(kernels::mttkrp(f.design, kShape, f.factors, 1));
}

void BM_MttkrpUnfolded(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  const Matrix u = kernels::unfold_design(f.design, kShape, 1);
  for (auto _ : st) {
    benchmark::DoNotOptimize(kernels::mttkrp_unfolded(u, kShape, f.factors, 1));
  }
}

void BM_MttkrpReference(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(reference::mttkrp(f.design, kShape, f.factors, 1));
}

void BM_MultiModeProduct(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    benchmark::DoNotOptimize(kernels::multi_mode_product(f.design, kShape, f.projections, 3));
  }
}

void BM_MultiModeProductSerial(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    benchmark::DoNotOptimize(
        kernels::multi_mode_product(f.design, kShape, f.projections, 3, Exec::serial));
  }
}

void BM_MultiModeProductReference(benchmark::State& st) {
  const Fixture f(static_cast<std::size_t>(st.range(0)));
  for (auto _ : st) {
    benchmark::DoNotOptimize(reference::multi_mode_product(f.design, kShape, f.projections, 3));
  }
}

void BM_OracleSweep(benchmark::State& st) {
  SimConfig cfg;
  cfg.shape = kShape;
  cfg.replicates = static_cast<std::size_t>(st.range(0));
  cfg.lambda = 1.0;
  McOptions opts;
  opts.exec = st.range(1) != 0 ? Exec::parallel : Exec::serial;
  std::vector<RankSpec> ranks;
  for (std::size_t r = 1; r <= 6; ++r) ranks.push_back(RankSpec::cp(r));
  for (auto _ : st) {
    benchmark::DoNotOptimize(sweep_ranks(cfg, FitterSpec::experiment(FitterKind::oracle_krr),
                                         ranks, {Criterion::optimism}, opts));
  }
}

}  // namespace

BENCHMARK(BM_CpFeatures)->Arg(200)->Arg(1000);
BENCHMARK(BM_CpFeaturesReference)->Arg(200)->Arg(1000);
BENCHMARK(BM_Mttkrp)->Arg(200)->Arg(1000);
BENCHMARK(BM_MttkrpUnfolded)->Arg(200)->Arg(1000);
BENCHMARK(BM_MttkrpReference)->Arg(200);
BENCHMARK(BM_MultiModeProduct)->Arg(200)->Arg(1000);
BENCHMARK(BM_MultiModeProductSerial)->Arg(200)->Arg(1000);
BENCHMARK(BM_MultiModeProductReference)->Arg(50);
BENCHMARK(BM_OracleSweep)->Args({50, 0})->Args({50, 1})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
