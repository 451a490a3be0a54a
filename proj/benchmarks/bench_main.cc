#include <benchmark/benchmark.h>

// The distro's libbenchmark_main.a carries stale LTO bytecode; link our own.
BENCHMARK_MAIN();
