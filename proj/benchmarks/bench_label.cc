#include <benchmark/benchmark.h>

#include "iism/label.hpp"
#include "iism/rng.hpp"

namespace {

iism::LabelMap random_map(std::size_t size) {
    iism::Rng rng(7);
    std::vector<iism::ClassId> data(size * size);
    for (auto& v : data) v = iism::ClassId(rng.below(7));
    return iism::LabelMap(size, size, std::move(data));
}

void BM_Onehot(benchmark::State& state) {
    const auto m = random_map(std::size_t(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(iism::onehot(m, 7));
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_ArgmaxDecode(benchmark::State& state) {
    const auto m = random_map(std::size_t(state.range(0)));
    const auto logits = iism::as_logits(iism::onehot(m, 7));
    for (auto _ : state) benchmark::DoNotOptimize(iism::argmax_decode(logits));
    state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_ResizeNearest(benchmark::State& state) {
    const auto m = random_map(std::size_t(state.range(0)));
    for (auto _ : state)
        benchmark::DoNotOptimize(iism::resize_nearest(m, 256, 256));
    state.SetItemsProcessed(state.iterations() * 256 * 256);
}

} // namespace

BENCHMARK(BM_Onehot)->Arg(64)->Arg(256);
BENCHMARK(BM_ArgmaxDecode)->Arg(64)->Arg(256);
BENCHMARK(BM_ResizeNearest)->Arg(64)->Arg(256);
