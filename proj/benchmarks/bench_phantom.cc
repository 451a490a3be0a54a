#include <benchmark/benchmark.h>

#include "iism/phantom.hpp"

namespace {

void BM_GenerateSlice(benchmark::State& state) {
    iism::PhantomConfig cfg;
    cfg.image_size = std::size_t(state.range(0));
    cfg.lesion_probability = 0.5;
    std::uint64_t k = 0;
    for (auto _ : state) {
        iism::Rng rng = iism::Rng(9).fork(k++);
        benchmark::DoNotOptimize(iism::generate_slice(cfg, rng));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

} // namespace

BENCHMARK(BM_GenerateSlice)->Arg(64)->Arg(256);
