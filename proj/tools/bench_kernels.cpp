// Copyright (c) 2026 flexprompt contributors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include <vector>

#include "flexprompt/kernels.hpp"
#include "flexprompt/rng.hpp"

using namespace flexprompt;

namespace {

std::vector<double> randn(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(static_cast<size_t>(n));
    for (auto& x : v) x = rng.normal();
    return v;
}

template <auto MatmulFn>
void bench_matmul(benchmark::State& state) {
    const int64_t m = state.range(0), k = state.range(0), n = state.range(0);
    const auto a = randn(m * k, 1), b = randn(k * n, 2);
    std::vector<double> c(static_cast<size_t>(m * n));
    for (auto _ : state) {
        MatmulFn(a.data(), b.data(), c.data(), m, k, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * m * k * n);
}

template <auto LnFn>
void bench_layernorm(benchmark::State& state) {
    const int64_t rows = state.range(0), cols = 768;
    const auto x = randn(rows * cols, 3);
    const auto gamma = randn(cols, 4), beta = randn(cols, 5);
    std::vector<double> y(static_cast<size_t>(rows * cols)), mean(static_cast<size_t>(rows)),
        rstd(static_cast<size_t>(rows));
    for (auto _ : state) {
        LnFn(x.data(), gamma.data(), beta.data(), y.data(), mean.data(), rstd.data(), rows, cols, 1e-6);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * rows * cols);
}

template <auto AttnFn>
void bench_attention(benchmark::State& state) {
    const int64_t B = 4, T = state.range(0), d = 64, heads = 4;
    const auto qkv = randn(B * T * 3 * d, 6);
    std::vector<double> out(static_cast<size_t>(B * T * d)), probs(static_cast<size_t>(B * heads * T * T));
    for (auto _ : state) {
        AttnFn(qkv.data(), out.data(), probs.data(), B, T, d, heads);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * B * heads * T * T);
}

template <auto CdcFn>
void bench_cdc2d(benchmark::State& state) {
    const int64_t B = 4, g = 14, cin = state.range(0), cout = 64;
    const auto x = randn(B * g * g * cin, 7);
    const auto w = randn(9 * cin * cout, 8);
    const auto bias = randn(cout, 9);
    std::vector<double> y(static_cast<size_t>(B * g * g * cout));
    for (auto _ : state) {
        CdcFn(x.data(), w.data(), bias.data(), y.data(), B, g, cin, cout, 0.5);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * B * g * g * cout * 9 * cin);
}

template <auto GeluFn>
void bench_gelu(benchmark::State& state) {
    const int64_t n = state.range(0);
    const auto x = randn(n, 10);
    std::vector<double> y(static_cast<size_t>(n));
    for (auto _ : state) {
        GeluFn(x.data(), y.data(), n);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * n);
}

}  // namespace

BENCHMARK(bench_matmul<kernels::serial::matmul_nn>)->Name("matmul_nn/serial")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bench_matmul<kernels::openmp::matmul_nn>)->Name("matmul_nn/openmp")->Arg(64)->Arg(192)->Arg(384);
BENCHMARK(bench_layernorm<kernels::serial::layernorm_forward>)->Name("layernorm/serial")->Arg(256)->Arg(1024);
BENCHMARK(bench_layernorm<kernels::openmp::layernorm_forward>)->Name("layernorm/openmp")->Arg(256)->Arg(1024);
BENCHMARK(bench_attention<kernels::serial::attention_forward>)->Name("attention/serial")->Arg(64)->Arg(128);
BENCHMARK(bench_attention<kernels::openmp::attention_forward>)->Name("attention/openmp")->Arg(64)->Arg(128);
BENCHMARK(bench_cdc2d<kernels::serial::cdc2d_forward>)->Name("cdc2d/serial")->Arg(64)->Arg(192);
BENCHMARK(bench_cdc2d<kernels::openmp::cdc2d_forward>)->Name("cdc2d/openmp")->Arg(64)->Arg(192);
BENCHMARK(bench_gelu<kernels::serial::gelu_forward>)->Name("gelu/serial")->Arg(1 << 18);
BENCHMARK(bench_gelu<kernels::openmp::gelu_forward>)->Name("gelu/openmp")->Arg(1 << 18);

BENCHMARK_MAIN();
