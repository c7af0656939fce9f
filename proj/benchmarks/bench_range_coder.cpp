// Copyright (c) 2026 the osdiff authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "osdiff/range_coder.hpp"
#include "osdiff/rng.hpp"

using namespace osdiff;

namespace {

struct Fixture {
  CdfTable table;
  std::vector<int> symbols;
  std::vector<uint8_t> payload;

  explicit Fixture(int alphabet, size_t count) {
    Rng rng(4242);
    std::vector<uint64_t> counts(static_cast<size_t>(alphabet));
    for (auto& c : counts) c = 1 + rng.uniform_int(1000);
    table = CdfTable::from_counts(counts);
    symbols.resize(count);
    for (auto& s : symbols) {
      uint32_t u = static_cast<uint32_t>(rng.uniform_int(kProbScale));
      int lo = 0, hi = alphabet - 1;
      while (lo < hi) {
        int mid = (lo + hi + 1) / 2;
        if (table.cum[static_cast<size_t>(mid)] <= u)
          lo = mid;
        else
          hi = mid - 1;
      }
      s = lo;
    }
    payload = range_encode(symbols, table);
  }
};

void BM_RangeEncode(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)), 1 << 14);
  for (auto _ : state) {
    auto bytes = range_encode(f.symbols, f.table);
    benchmark::DoNotOptimize(bytes);
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(f.symbols.size()));
}
BENCHMARK(BM_RangeEncode)->Arg(63)->Arg(256);

void BM_RangeDecode(benchmark::State& state) {
  Fixture f(static_cast<int>(state.range(0)), 1 << 14);
  for (auto _ : state) {
    auto symbols = range_decode(f.payload, f.symbols.size(), f.table);
    benchmark::DoNotOptimize(symbols);
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(f.symbols.size()));
}
BENCHMARK(BM_RangeDecode)->Arg(63)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
