#include <benchmark/benchmark.h>

#include "kwcp/design.hpp"
#include "kwcp/kernel.hpp"
#include "kwcp/parallel.hpp"
#include "kwcp/ridge.hpp"
#include "kwcp/simulation.hpp"
#include "kwcp/solver.hpp"

using namespace kwcp;

namespace {

struct Fixture {
    SimTruth truth;
    KernelWeightSet weights;
    KernelDesign design;
    StratumStats stats;
    CPModel start;

    Fixture()
    {
        SimConfig sc;
        sc.plaques = 100;
        sc.seed = 1;
        truth = generate_replicate(sc);
        const auto table = bandwidth_candidates(truth.dataset, {15});
        weights = compute_weights(truth.dataset, table.bandwidths_for(15));
        design = build_design(truth.dataset, weights);
        stats = stratum_stats(design);
        start = cp_als_fit(ridge_init(design, stats, RidgeConfig{}).tensor, 4);
    }
};

const Fixture& fixture()
{
    static const Fixture f;
    return f;
}

void BM_WeightsSerial(benchmark::State& st)
{
    const auto& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(compute_weights_serial(f.truth.dataset, f.weights.bandwidths));
}

void BM_WeightsParallel(benchmark::State& st)
{
    const auto& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(compute_weights(f.truth.dataset, f.weights.bandwidths));
}

void BM_StratumStatsSerial(benchmark::State& st)
{
    const auto& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(stratum_stats_serial(f.design));
}

void BM_StratumStatsParallel(benchmark::State& st)
{
    const auto& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(stratum_stats(f.design));
}

void BM_LossSerial(benchmark::State& st)
{
    const auto& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(weighted_loss_serial(f.design, f.start));
}

void BM_LossParallel(benchmark::State& st)
{
    const auto& f = fixture();
    for (auto _ : st) benchmark::DoNotOptimize(weighted_loss(f.design, f.start));
}

// Twenty outer sweeps from the same start with each bookkeeping engine.
void BM_Descent(benchmark::State& st)
{
    const auto& f = fixture();
    const auto engine = st.range(0) == 0 ? Engine::Gram : Engine::Residual;
    SolverConfig cfg;
    cfg.max_outer_iters = 20;
    cfg.tol_beta = 0.0;
    cfg.tol_factor = 0.0;
    for (auto _ : st) {
        SolverState s(f.design, f.stats, f.start, 50.0, engine);
        run_descent(s, cfg, nullptr);
        benchmark::DoNotOptimize(s.model.w.data());
    }
    st.SetLabel(engine == Engine::Gram ? "gram" : "residual");
}

} // namespace

BENCHMARK(BM_WeightsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_WeightsParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StratumStatsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StratumStatsParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LossParallel)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Descent)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
