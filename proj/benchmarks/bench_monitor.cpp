#include <invarmon/guest.hpp>
#include <invarmon/harness.hpp>
#include <invarmon/md5.hpp>
#include <invarmon/monitor.hpp>

#include <benchmark/benchmark.h>

#include <vector>

using namespace invarmon;

namespace {

guest_spec population(std::int64_t n, std::int64_t size)
{
  guest_spec s;
  s.seed = 1;
  s.objects.push_back({object_kind::dynamic_heap, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(size)});
  return s;
}

void bm_md5(benchmark::State& state)
{
  std::vector<std::uint8_t> data(static_cast<std::size_t>(state.range(0)), 0x5a);
  for (auto _ : state)
    benchmark::DoNotOptimize(md5::hash(data));
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_md5)->Arg(128)->Arg(4096)->Arg(1 << 20);

// One trap checks one subset of k records of 128 bytes.
void bm_handle_vmexit(benchmark::State& state)
{
  auto guest = guest_state::boot(population(14998, 128));
  monitor_options o;
  o.subset_size = static_cast<std::uint64_t>(state.range(0));
  monitor mon(o);
  guest.raise_hypercall(mon, guest.trusted_module_collect(true));
  for (auto _ : state)
    benchmark::DoNotOptimize(mon.handle_vmexit(guest.memory(), guest.process_switch()));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_handle_vmexit)->Arg(10)->Arg(100)->Arg(1000);

void bm_boot_and_register(benchmark::State& state)
{
  const auto spec = population(state.range(0), 128);
  for (auto _ : state) {
    auto guest = guest_state::boot(spec);
    monitor mon;
    guest.raise_hypercall(mon, guest.trusted_module_collect(true));
    benchmark::DoNotOptimize(mon.records().data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(bm_boot_and_register)->Arg(1000)->Arg(15000)->Unit(benchmark::kMillisecond);

void bm_setuid_scenario(benchmark::State& state)
{
  const auto cfg = reference_setuid_scenario();
  for (auto _ : state)
    benchmark::DoNotOptimize(run(cfg).event_log_digest);
}
BENCHMARK(bm_setuid_scenario)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
