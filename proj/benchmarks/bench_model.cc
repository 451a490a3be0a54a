#include <benchmark/benchmark.h>

#include "iism/latentdiff.hpp"
#include "iism/maskvae.hpp"

namespace {

iism::VaeConfig desk_config() {
    iism::VaeConfig cfg;
    cfg.latent_dim = 64;
    cfg.height = 64;
    cfg.width = 64;
    return cfg;
}

void BM_VaeEncode(benchmark::State& state) {
    iism::Vae model(desk_config());
    iism::Rng rng(1);
    model.init(rng);
    iism::Tensor<float> x({std::size_t(state.range(0)), 7, 64, 64});
    for (auto& v : x.storage()) v = float(rng.below(2));
    for (auto _ : state) benchmark::DoNotOptimize(model.encode(x));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_VaeDecode(benchmark::State& state) {
    iism::Vae model(desk_config());
    iism::Rng rng(2);
    model.init(rng);
    iism::Tensor<float> z({std::size_t(state.range(0)), 64});
    for (auto& v : z.storage()) v = float(rng.normal());
    for (auto _ : state) benchmark::DoNotOptimize(model.decode(z));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_DenoiserForward(benchmark::State& state) {
    iism::Denoiser<float> net(64, 16, 1024);
    iism::Rng rng(3);
    net.init(rng);
    iism::Tensor<float> input({std::size_t(state.range(0)), net.input_width()});
    for (auto& v : input.storage()) v = float(rng.normal());
    for (auto _ : state) benchmark::DoNotOptimize(net.forward(input));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ReverseChain(benchmark::State& state) {
    const iism::NoiseSchedule s = iism::make_schedule(100, 1e-4, 0.02);
    iism::Rng rng(4);
    std::vector<float> z(64), eps(64), xi(64, 0.0f);
    for (auto& v : z) v = float(rng.normal());
    for (auto& v : eps) v = float(rng.normal());
    for (auto _ : state) {
        std::vector<float> cur = z;
        for (std::size_t t = s.steps; t-- > 0;)
            cur = iism::reverse_step<float>(cur, t, eps, s, xi);
        benchmark::DoNotOptimize(cur);
    }
    state.SetItemsProcessed(state.iterations() * 100);
}

} // namespace

BENCHMARK(BM_VaeEncode)->Arg(1)->Arg(32);
BENCHMARK(BM_VaeDecode)->Arg(1)->Arg(32);
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64);
BENCHMARK(BM_ReverseChain);
