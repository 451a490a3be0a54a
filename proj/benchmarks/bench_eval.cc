#include <benchmark/benchmark.h>

#include "iism/eval.hpp"
#include "iism/phantom.hpp"

namespace {

std::vector<iism::LabelMap> corpus(std::size_t n) {
    iism::PhantomConfig cfg;
    cfg.image_size = 64;
    cfg.lesion_probability = 0.5;
    std::vector<iism::LabelMap> masks;
    for (std::size_t k = 0; k < n; ++k) {
        iism::Rng rng = iism::Rng(5).fork(k);
        masks.push_back(iism::generate_slice(cfg, rng).map);
    }
    return masks;
}

void BM_ExtractFeatures(benchmark::State& state) {
    const auto masks = corpus(1);
    for (auto _ : state) benchmark::DoNotOptimize(iism::extract_features(masks[0], 7));
}

void BM_Fid(benchmark::State& state) {
    const auto a = corpus(std::size_t(state.range(0)));
    const auto b = corpus(std::size_t(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(iism::fid(a, b, 7));
}

} // namespace

BENCHMARK(BM_ExtractFeatures);
BENCHMARK(BM_Fid)->Arg(64)->Arg(256);
