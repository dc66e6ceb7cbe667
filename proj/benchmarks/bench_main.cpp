#include <benchmark/benchmark.h>

#include <cmath>
#include <vector>

#include "mcrr/architectures.hpp"
#include "mcrr/metrics.hpp"
#include "mcrr/simulate.hpp"
#include "mcrr/train.hpp"

using namespace mcrr;

namespace {

ForcingSeries bench_forcing(std::size_t n, std::uint64_t seed) {
    ForcingSeries f;
    Rng rng(seed);
    f.records.reserve(n);
    const std::int32_t start = parse_iso_date("1989-10-01");
    for (std::size_t t = 0; t < n; ++t) {
        ForcingRecord r;
        r.date = start + static_cast<std::int32_t>(t);
        r.precip = rng.uniform01() < 0.4 ? 12.0 * rng.uniform01() : 0.0;
        r.pet = 6.0 * rng.uniform01();
        r.q_obs = 0.1 + 5.0 * rng.uniform01();
        f.records.push_back(r);
        f.water_year.push_back(water_year_of(r.date));
    }
    return f;
}

// Whole water years, Oct 1 through Sep 30, for the split benchmark.
ForcingSeries bench_forcing_years(int first_wy, int n_years, std::uint64_t seed) {
    const std::int32_t start = parse_iso_date(std::to_string(first_wy - 1) + "-10-01");
    const std::int32_t end = parse_iso_date(std::to_string(first_wy + n_years - 1) + "-09-30");
    ForcingSeries f = bench_forcing(static_cast<std::size_t>(end - start + 1), seed);
    return f;
}

GraphSpec bench_graph(ArchId arch, const ForcingSeries& f) {
    GraphSpec g = build_graph(arch);
    ScalingSet s = forcing_scaling(f);
    for (const auto& node : g.nodes) s.nodes.push_back({node.name, 25.0, 15.0});
    apply_scaling(g, s);
    return g;
}

void BM_SimulateStreamflow(benchmark::State& state) {
    const auto arch = static_cast<ArchId>(state.range(0));
    const auto f = bench_forcing(1000, 17);
    const GraphSpec g = bench_graph(arch, f);
    const auto params = init_params(g, 3).values;
    const auto init = default_init_states(g);
    for (auto _ : state) {
        auto q = simulate_streamflow<double>(g, params, f, init);
        benchmark::DoNotOptimize(q.data());
    }
    state.SetItemsProcessed(state.iterations() * 1000);
}

void BM_SimulateTrace(benchmark::State& state) {
    const auto f = bench_forcing(1000, 17);
    const GraphSpec g = bench_graph(ArchId::MA5, f);
    const auto params = init_params(g, 3).values;
    const auto init = default_init_states(g);
    for (auto _ : state) {
        auto tr = simulate(g, params, f, init);
        benchmark::DoNotOptimize(tr.streamflow.data());
    }
    state.SetItemsProcessed(state.iterations() * 1000);
}

void BM_LossGradient(benchmark::State& state) {
    const auto arch = static_cast<ArchId>(state.range(0));
    const auto f = bench_forcing(365, 17);
    const GraphSpec g = bench_graph(arch, f);
    const auto params = init_params(g, 3).values;
    const auto init = default_init_states(g);
    std::vector<std::uint32_t> idx(f.size());
    for (std::size_t t = 0; t < f.size(); ++t) idx[t] = static_cast<std::uint32_t>(t);
    ad::Tape tape;
    for (auto _ : state) {
        auto lg = loss_gradient(tape, g, params, f, init, idx);
        benchmark::DoNotOptimize(lg.grad.data());
    }
    state.SetItemsProcessed(state.iterations() * 365);
}

void BM_KgeComponents(benchmark::State& state) {
    const std::size_t n = 10000;
    Rng rng(5);
    std::vector<double> obs(n), sim(n);
    for (std::size_t i = 0; i < n; ++i) {
        obs[i] = 0.2 + 5.0 * rng.uniform01();
        sim[i] = obs[i] * (0.8 + 0.4 * rng.uniform01());
    }
    for (auto _ : state) {
        auto c = kge_components(sim, obs);
        benchmark::DoNotOptimize(&c);
    }
    state.SetItemsProcessed(state.iterations() * n);
}

void BM_SplitTimesteps(benchmark::State& state) {
    const auto f = bench_forcing_years(1990, 8, 29);
    for (auto _ : state) {
        auto mask = split_timesteps(f, {2, 1, 1}, 1);
        benchmark::DoNotOptimize(mask.labels.data());
    }
}

}  // namespace

BENCHMARK(BM_SimulateStreamflow)
    ->Arg(static_cast<int>(ArchId::MA1))
    ->Arg(static_cast<int>(ArchId::MA5));
BENCHMARK(BM_SimulateTrace);
BENCHMARK(BM_LossGradient)
    ->Arg(static_cast<int>(ArchId::MA1))
    ->Arg(static_cast<int>(ArchId::MA5))
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_KgeComponents);
BENCHMARK(BM_SplitTimesteps)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
