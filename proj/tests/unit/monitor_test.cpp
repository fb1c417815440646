#include <invarmon/error.hpp>
#include <invarmon/monitor.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

using namespace invarmon;

namespace {

// A bare machine with an identity map and `n` objects of `size` bytes packed
// back to back from virtual address 0x1000. Frame 0 holds the flag byte.
struct bench_machine
{
  guest_memory mem;
  page_map map;
  registration_batch batch;
  phys_addr flag{0};

  bench_machine(std::size_t n, std::uint64_t size, bool copies = true, std::uint64_t base = 0x1000)
    : mem(frames_for(n, size, base))
    , map(mem.num_frames())
  {
    for (std::uint64_t p = 0; p < mem.num_frames(); ++p)
      map.map_page(p, p);
    rng r(n * 31 + size);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint8_t> content(size);
      r.fill(content);
      const virt_addr va{base + i * size};
      write_virtual(mem, map, va, content);
      registration_entry e{static_cast<std::uint32_t>(i), va, size, std::nullopt};
      if (copies)
        e.copy = content;
      batch.entries.push_back(std::move(e));
    }
  }

  static std::uint64_t frames_for(std::size_t n, std::uint64_t size, std::uint64_t base)
  {
    return (base + n * size) / 4096 + 2;
  }

  void corrupt(std::uint32_t id, std::uint64_t offset = 0)
  {
    const auto va = batch.entries[id].vaddr + offset;
    auto b = read_virtual(mem, map, va, 1);
    b[0] ^= 0x5a;
    write_virtual(mem, map, va, b);
  }

  monitor sealed_monitor(monitor_options o = {})
  {
    monitor m(o);
    if (!batch.entries.empty())
      m.register_batch(mem, map, batch);
    m.seal(mem, flag);
    return m;
  }
};

vm_event cr3(std::uint64_t i)
{
  return {i, event_kind::mov_cr, control_register::cr3, 0x1000 * (i + 1)};
}

} // namespace

TEST(Digest, KnownValues)
{
  EXPECT_EQ(to_hex(compute_digest({}).full), "d41d8cd98f00b204e9800998ecf8427e");
  EXPECT_EQ(compute_digest({}).stored(), 0xd41d8cd9u);
}

TEST(Registration, HeaderAccountingForFullPopulation)
{
  bench_machine m(15000, 128, false);
  monitor mon;
  EXPECT_EQ(mon.register_batch(m.mem, m.map, m.batch), 15000u);
  EXPECT_EQ(mon.accounting().records, 300000u);
  EXPECT_EQ(mon.accounting().copies, 0u);
}

TEST(Registration, PageCrossingObjectDigestsVirtualOrder)
{
  guest_memory mem(4);
  page_map map(4);
  map.map_page(0, 3);
  map.map_page(1, 1);
  std::vector<std::uint8_t> content(128);
  std::iota(content.begin(), content.end(), std::uint8_t{1});
  write_virtual(mem, map, {4096 - 64}, content);

  monitor mon;
  registration_batch b;
  b.entries.push_back({7, {4096 - 64}, 128, std::nullopt});
  mon.register_batch(mem, map, b);
  const auto& rec = mon.records()[0];
  EXPECT_EQ(rec.fragment_count, 2u);
  EXPECT_EQ(rec.digest.stored, compute_digest(content).stored());
}

TEST(Registration, BadBatchesAreAtomic)
{
  bench_machine m(4, 64);
  monitor mon;
  auto bad = m.batch;
  bad.entries[2].vaddr = {1ull << 40};
  EXPECT_THROW(mon.register_batch(m.mem, m.map, bad), translation_fault);
  EXPECT_TRUE(mon.records().empty());

  bad = m.batch;
  bad.entries[3].size = 0;
  EXPECT_THROW(mon.register_batch(m.mem, m.map, bad), registration_error);
  bad = m.batch;
  bad.entries[1].copy->pop_back();
  EXPECT_THROW(mon.register_batch(m.mem, m.map, bad), registration_error);
  bad = m.batch;
  bad.entries[1].id = 0;
  EXPECT_THROW(mon.register_batch(m.mem, m.map, bad), registration_error);
  EXPECT_THROW(mon.register_batch(m.mem, m.map, {}), registration_error);
  EXPECT_TRUE(mon.records().empty());

  mon.register_batch(m.mem, m.map, m.batch);
  EXPECT_THROW(mon.register_batch(m.mem, m.map, m.batch), registration_error);
  EXPECT_EQ(mon.records().size(), 4u);
}

TEST(Seal, ClosesRegistrationAndSetsFlag)
{
  bench_machine m(3, 64);
  monitor mon;
  mon.register_batch(m.mem, m.map, m.batch);
  EXPECT_EQ(m.mem.read(m.flag, 1)[0], 0);
  mon.seal(m.mem, m.flag);
  EXPECT_EQ(m.mem.read(m.flag, 1)[0], 1);
  registration_batch more;
  more.entries.push_back({50, {0x1000}, 4, std::nullopt});
  EXPECT_THROW(mon.register_batch(m.mem, m.map, more), registration_closed);
  EXPECT_THROW(mon.seal(m.mem, m.flag), lifecycle_error);
  EXPECT_THROW(mon.set_schedule_seed(1), lifecycle_error);
}

TEST(Seal, EmptyProtectionSet)
{
  bench_machine m(0, 64);
  auto mon = m.sealed_monitor();
  EXPECT_EQ(mon.num_subsets(), 0u);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto r = mon.handle_vmexit(m.mem, cr3(i));
    EXPECT_TRUE(r.checked_ids.empty());
    EXPECT_TRUE(r.trap_index.has_value());
  }
  EXPECT_EQ(mon.checks_performed(), 0u);
}

TEST(CheckRecord, CleanFlippedAndRestored)
{
  bench_machine m(3, 64);
  auto mon = m.sealed_monitor();
  EXPECT_TRUE(mon.check_record(m.mem, 1).clean);

  m.corrupt(1, 10);
  const auto r = mon.check_record(m.mem, 1);
  EXPECT_FALSE(r.clean);
  EXPECT_NE(r.expected, r.actual);
  EXPECT_TRUE(mon.records()[1].compromised_seen());

  m.corrupt(1, 10);
  EXPECT_TRUE(mon.check_record(m.mem, 1).clean);
}

TEST(CheckRecord, RequiresSeal)
{
  bench_machine m(3, 64);
  monitor mon;
  mon.register_batch(m.mem, m.map, m.batch);
  EXPECT_THROW(mon.check_record(m.mem, 0), lifecycle_error);
  EXPECT_TRUE(mon.handle_vmexit(m.mem, cr3(0)).checked_ids.empty());
}

TEST(CheckRecord, FullDigestCatchesWhatTheLeadingWordMisses)
{
  bench_machine m(1, 64);
  monitor_options o;
  o.full_digest = true;
  auto mon = m.sealed_monitor(o);
  ASSERT_TRUE(mon.records()[0].digest.full.has_value());
  EXPECT_EQ(mon.accounting().records, full_record_header_bytes);

  record_digest a{1, md5_value{}};
  record_digest b{1, md5_value{}};
  b.full->back() = 1;
  EXPECT_FALSE(a.matches(b));
  EXPECT_TRUE(record_digest{1}.matches(record_digest{1}));
}

TEST(Repair, RestoresFromCopy)
{
  bench_machine m(5, 100);
  auto mon = m.sealed_monitor();
  const auto before = read_virtual(m.mem, m.map, m.batch.entries[2].vaddr, 100);
  m.corrupt(2, 99);
  EXPECT_EQ(mon.repair(m.mem, 2), repair_result::repaired);
  EXPECT_EQ(read_virtual(m.mem, m.map, m.batch.entries[2].vaddr, 100), before);
  EXPECT_TRUE(mon.check_record(m.mem, 2).clean);
  EXPECT_EQ(mon.repair(m.mem, 2), repair_result::repaired);
  EXPECT_TRUE(mon.check_record(m.mem, 2).clean);
}

TEST(Repair, NoCopyMeansDetectOnly)
{
  bench_machine m(5, 100, false);
  monitor_options o;
  o.subset_size = 5;
  auto mon = m.sealed_monitor(o);
  m.corrupt(3);
  EXPECT_EQ(mon.repair(m.mem, 3), repair_result::not_repairable);
  const auto r = mon.handle_vmexit(m.mem, cr3(0));
  ASSERT_EQ(r.detections.size(), 1u);
  EXPECT_EQ(r.detections[0].id, 3u);
  EXPECT_EQ(r.not_repairable, std::vector<std::uint32_t>{3});
  EXPECT_TRUE(r.repairs.empty());
  EXPECT_EQ(mon.detections().size(), 1u);
}

TEST(Repair, DisabledByOption)
{
  bench_machine m(2, 100);
  monitor_options o;
  o.repair_enabled = false;
  auto mon = m.sealed_monitor(o);
  m.corrupt(0);
  EXPECT_EQ(mon.repair(m.mem, 0), repair_result::not_repairable);
}

TEST(VmExit, SubsetCursorAdvances)
{
  bench_machine m(300, 16);
  auto mon = m.sealed_monitor();
  EXPECT_EQ(mon.num_subsets(), 3u);
  const auto r = mon.handle_vmexit(m.mem, cr3(0));
  ASSERT_EQ(r.checked_ids.size(), 100u);
  for (std::uint32_t i = 0; i < 100; ++i)
    EXPECT_EQ(r.checked_ids[i], mon.schedule()[i]);
  EXPECT_EQ(mon.cursor(), 1u);
  mon.handle_vmexit(m.mem, cr3(1));
  mon.handle_vmexit(m.mem, cr3(2));
  EXPECT_EQ(mon.cursor(), 0u);
  EXPECT_EQ(mon.passes_completed(), 1u);
}

TEST(VmExit, SubsetLargerThanPopulation)
{
  bench_machine m(50, 16);
  auto mon = m.sealed_monitor();
  for (std::uint64_t i = 0; i < 3; ++i)
    EXPECT_EQ(mon.handle_vmexit(m.mem, cr3(i)).checked_ids.size(), 50u);
}

TEST(VmExit, ShortLastSubset)
{
  bench_machine m(250, 16);
  auto mon = m.sealed_monitor();
  EXPECT_EQ(mon.handle_vmexit(m.mem, cr3(0)).checked_ids.size(), 100u);
  EXPECT_EQ(mon.handle_vmexit(m.mem, cr3(1)).checked_ids.size(), 100u);
  EXPECT_EQ(mon.handle_vmexit(m.mem, cr3(2)).checked_ids.size(), 50u);
  EXPECT_EQ(mon.cursor(), 0u);
}

TEST(VmExit, NonTrapEventsIgnored)
{
  bench_machine m(10, 16);
  auto mon = m.sealed_monitor();
  const auto r = mon.handle_vmexit(m.mem, {0, event_kind::tick, control_register::cr3, 0});
  EXPECT_FALSE(r.trap_index.has_value());
  EXPECT_TRUE(r.checked_ids.empty());
  EXPECT_EQ(mon.traps_handled(), 0u);
  mon.handle_vmexit(m.mem, {1, event_kind::mov_cr, control_register::cr4, 0x20});
  EXPECT_EQ(mon.traps_handled(), 1u);
}

TEST(VmExit, WorstPhaseIsOnePassLate)
{
  bench_machine m(15000, 16);
  auto mon = m.sealed_monitor();
  for (std::uint64_t i = 0; i < 149; ++i)
    mon.handle_vmexit(m.mem, cr3(i));
  // The last subset was just checked; corrupt one of its members.
  mon.handle_vmexit(m.mem, cr3(149));
  const auto applied = mon.traps_handled();
  m.corrupt(14950);
  std::uint64_t detected_trap = 0;
  for (std::uint64_t i = 150; i < 400; ++i) {
    const auto r = mon.handle_vmexit(m.mem, cr3(i));
    if (!r.detections.empty()) {
      detected_trap = *r.trap_index;
      break;
    }
  }
  EXPECT_EQ(detected_trap - applied, 149u);
}

TEST(Ordering, RoundRobinIsIdentity)
{
  bench_machine m(20, 16);
  auto mon = m.sealed_monitor();
  for (std::uint32_t i = 0; i < 20; ++i)
    EXPECT_EQ(mon.schedule()[i], i);
}

TEST(Ordering, SeededRandomIsAPermutationFixedBySeed)
{
  bench_machine m(500, 16);
  monitor_options o;
  o.ordering = ordering_mode::seeded_random_per_pass;
  o.schedule_seed = 3;
  const auto a = m.sealed_monitor(o);
  bench_machine m2(500, 16);
  const auto b = m2.sealed_monitor(o);
  std::vector<std::uint32_t> sa(a.schedule().begin(), a.schedule().end());
  std::vector<std::uint32_t> sb(b.schedule().begin(), b.schedule().end());
  EXPECT_EQ(sa, sb);
  auto sorted = sa;
  std::sort(sorted.begin(), sorted.end());
  for (std::uint32_t i = 0; i < 500; ++i)
    ASSERT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(sa.begin(), sa.end()));

  o.schedule_seed = 4;
  bench_machine m3(500, 16);
  const auto c = m3.sealed_monitor(o);
  EXPECT_FALSE(std::equal(sa.begin(), sa.end(), c.schedule().begin()));
}

TEST(Ordering, EveryPassChecksEveryRecordOnce)
{
  for (auto mode : {ordering_mode::round_robin, ordering_mode::seeded_random_per_pass}) {
    for (bool reshuffle : {false, true}) {
      bench_machine m(1037, 8);
      monitor_options o;
      o.ordering = mode;
      o.reshuffle_each_pass = reshuffle;
      o.schedule_seed = 11;
      auto mon = m.sealed_monitor(o);
      std::uint64_t ev = 0;
      for (int pass = 0; pass < 3; ++pass) {
        std::multiset<std::uint32_t> seen;
        for (std::size_t s = 0; s < mon.num_subsets(); ++s)
          for (auto id : mon.handle_vmexit(m.mem, cr3(ev++)).checked_ids)
            seen.insert(id);
        ASSERT_EQ(seen.size(), 1037u);
        for (std::uint32_t id = 0; id < 1037; ++id)
          ASSERT_EQ(seen.count(id), 1u);
      }
    }
  }
}

// Re-permuting at every wrap lets a record be checked at the start of one
// pass and again at the end of the next, so the gap can exceed one pass.
TEST(Ordering, ReshuffleEachPassCanExceedOnePass)
{
  const std::size_t n = 40, k = 4;
  const auto s = n / k;
  std::uint64_t worst_gap = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    bench_machine m(n, 8);
    monitor_options o;
    o.subset_size = k;
    o.ordering = ordering_mode::seeded_random_per_pass;
    o.reshuffle_each_pass = true;
    o.schedule_seed = seed;
    auto mon = m.sealed_monitor(o);
    std::vector<std::int64_t> last(n, -1);
    for (std::uint64_t t = 0; t < 6 * s; ++t)
      for (auto id : mon.handle_vmexit(m.mem, cr3(t)).checked_ids) {
        if (last[id] >= 0)
          worst_gap = std::max<std::uint64_t>(worst_gap, t - static_cast<std::uint64_t>(last[id]));
        last[id] = static_cast<std::int64_t>(t);
      }
  }
  EXPECT_GT(worst_gap, s);
  EXPECT_LE(worst_gap, 2 * s - 1);
}

TEST(Latency, WorstCaseFormula)
{
  EXPECT_EQ(worst_case_latency_switches(15000, 100), 149u);
  EXPECT_EQ(worst_case_latency_switches(100, 100), 0u);
  EXPECT_EQ(worst_case_latency_switches(1000, 100), 9u);
  EXPECT_EQ(worst_case_latency_switches(1001, 100), 10u);
  EXPECT_EQ(worst_case_latency_switches(0, 100), 0u);
  EXPECT_EQ(worst_case_latency_switches(50, 100), 0u);
  EXPECT_THROW(worst_case_latency_switches(10, 0), std::invalid_argument);
}

TEST(Accounting, ReferenceFigures)
{
  const auto a = memory_overhead(15000, 128, true, 100);
  EXPECT_EQ(a.records, 300000u);
  EXPECT_EQ(a.copies, 1920000u);
  EXPECT_EQ(a.total, 2220000u);
  EXPECT_EQ(memory_accounting::kib(a.total), 2168u);
  EXPECT_EQ(a.mapping, 12800u);
  EXPECT_EQ(memory_accounting::kib(a.mapping), 13u);
  EXPECT_EQ(memory_accounting::kib(a.records), 293u);
  EXPECT_EQ(a.overall, 2232800u);

  const auto none = memory_overhead(0, 128, false, 100);
  EXPECT_EQ(none.records, 0u);
  EXPECT_EQ(none.copies, 0u);
  EXPECT_EQ(none.total, 0u);
  EXPECT_EQ(none.overall, 0u);
}

TEST(Accounting, LiveMatchesClosedForm)
{
  bench_machine m(250, 128);
  const auto mon = m.sealed_monitor();
  EXPECT_EQ(mon.accounting(), memory_overhead(250, 128, true, 100));
  bench_machine bare(250, 128, false);
  EXPECT_EQ(bare.sealed_monitor().accounting(), memory_overhead(250, 128, false, 100));
}

TEST(Accounting, MixedSizesMapTheLargestSubset)
{
  const std::vector<std::uint64_t> sizes{10, 500, 20, 300, 40};
  const auto a = memory_overhead(sizes, true, 2);
  EXPECT_EQ(a.records, 100u);
  EXPECT_EQ(a.copies, 870u);
  EXPECT_EQ(a.mapping, 800u);
  EXPECT_EQ(a.overall, 100u + 870 + 800);
}
