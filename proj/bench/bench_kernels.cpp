// Serial reference vs OpenMP kernels for the dense measurement operator.

#include <benchmark/benchmark.h>

#include <vector>

#include "precgd/core.hpp"
#include "precgd/kernels.hpp"

namespace {

using namespace precgd;

struct Data {
  std::size_t m, len;
  std::vector<double> ops, x, v, out_m, out_len;
  Data(std::size_t n, std::size_t m_) : m(m_), len(n * n), ops(m * len), x(len), v(m), out_m(m), out_len(len) {
    Rng rng(1);
    for (auto& a : ops) a = rng.normal();
    for (auto& a : x) a = rng.normal();
    for (auto& a : v) a = rng.normal();
  }
};

template <auto Kernel>
void forward(benchmark::State& st) {
  Data d(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) {
    Kernel(d.ops, d.m, d.len, d.x, d.out_m);
    benchmark::DoNotOptimize(d.out_m.data());
  }
  st.SetBytesProcessed(st.iterations() * static_cast<std::int64_t>(d.ops.size() * sizeof(double)));
}

template <auto Kernel>
void adjoint(benchmark::State& st) {
  Data d(static_cast<std::size_t>(st.range(0)), static_cast<std::size_t>(st.range(1)));
  for (auto _ : st) {
    Kernel(d.ops, d.m, d.len, d.v, d.out_len);
    benchmark::DoNotOptimize(d.out_len.data());
  }
  st.SetBytesProcessed(st.iterations() * static_cast<std::int64_t>(d.ops.size() * sizeof(double)));
}

void sizes(benchmark::internal::Benchmark* b) {
  b->Args({10, 400})->Args({20, 640})->Args({15, 6000});
}

BENCHMARK(forward<kernels::forward_serial>)->Name("forward/serial")->Apply(sizes);
BENCHMARK(forward<kernels::forward_parallel>)->Name("forward/parallel")->Apply(sizes);
BENCHMARK(adjoint<kernels::adjoint_serial>)->Name("adjoint/serial")->Apply(sizes);
BENCHMARK(adjoint<kernels::adjoint_parallel>)->Name("adjoint/parallel")->Apply(sizes);

}  // namespace

BENCHMARK_MAIN();
