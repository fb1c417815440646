#include <invarmon/attacks.hpp>
#include <invarmon/error.hpp>
#include <invarmon/monitor.hpp>

#include <gtest/gtest.h>

using namespace invarmon;

namespace {

struct booted
{
  guest_state guest;
  monitor mon;

  explicit booted(std::uint64_t objects = 298, std::uint64_t k = 100)
    : guest(guest_state::boot(spec(objects)))
    , mon(options(k))
  {
    guest.raise_hypercall(mon, guest.trusted_module_collect(true));
  }

  static guest_spec spec(std::uint64_t objects)
  {
    guest_spec s;
    s.seed = 4;
    s.objects.push_back({object_kind::dynamic_heap, objects, 128});
    return s;
  }

  static monitor_options options(std::uint64_t k)
  {
    monitor_options o;
    o.subset_size = k;
    return o;
  }

  // Drives process switches until the target is detected or `limit` traps pass.
  std::optional<std::uint64_t> switches_until_detected(std::uint32_t id, std::uint64_t limit)
  {
    for (std::uint64_t n = 0; n < limit; ++n) {
      const auto r = mon.handle_vmexit(guest.memory(), guest.process_switch());
      for (const auto& d : r.detections)
        if (d.id == id)
          return n;
    }
    return std::nullopt;
  }
};

constexpr std::uint64_t rogue = rootkit_area_base + 0x1000;

} // namespace

TEST(SyscallHook, DispatchesToRogueUntilRepaired)
{
  booted b;
  const auto setuid = b.guest.spec().setuid_index;
  hook_syscall(b.guest, setuid, rogue, false);
  auto t = b.guest.invoke_syscall(setuid, 31337);
  EXPECT_EQ(t.handler, rogue);
  EXPECT_EQ(t.kind, dispatch_kind::hijacked);
  EXPECT_EQ(t.arg, 31337u);

  ASSERT_TRUE(b.switches_until_detected(guest_state::syscall_table_id, 10).has_value());
  t = b.guest.invoke_syscall(setuid, 31337);
  EXPECT_EQ(t.kind, dispatch_kind::original);
  EXPECT_EQ(t.handler, b.guest.original_syscall_handler(setuid));
}

TEST(SyscallHook, DirectWriteThroughReadOnlyMappingFaults)
{
  booted b;
  const auto slot = b.guest.syscall_slot(b.guest.spec().setuid_index);
  const std::array<std::uint8_t, 8> zero{};
  EXPECT_THROW(write_virtual(b.guest.memory(), b.guest.pages(), slot, zero), protection_fault);
}

TEST(SyscallHook, AliasLeavesOriginalMappingUntouched)
{
  booted plain, aliased;
  const auto nr = plain.guest.spec().setuid_index;
  const auto slot = aliased.guest.syscall_slot(nr);
  const auto page = aliased.guest.pages().page_of(slot);
  const auto entry_before = *aliased.guest.pages().lookup(page);
  const auto mapped_before = aliased.guest.pages().mapped_pages();

  hook_syscall(plain.guest, nr, rogue, false);
  hook_syscall(aliased.guest, nr, rogue, true);

  EXPECT_EQ(*aliased.guest.pages().lookup(page), entry_before);
  EXPECT_FALSE(aliased.guest.pages().lookup(page)->writable);
  EXPECT_GT(aliased.guest.pages().mapped_pages(), mapped_before);
  EXPECT_EQ(aliased.guest.memory(), plain.guest.memory());
  EXPECT_EQ(aliased.guest.invoke_syscall(nr, 31337).handler, rogue);

  const auto a = plain.switches_until_detected(guest_state::syscall_table_id, 10);
  const auto b = aliased.switches_until_detected(guest_state::syscall_table_id, 10);
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a, b);
}

TEST(SyscallHook, RejectsNoOpAndBadSlot)
{
  booted b;
  const auto nr = b.guest.spec().setuid_index;
  EXPECT_THROW(hook_syscall(b.guest, nr, b.guest.original_syscall_handler(nr), false), attack_error);
  EXPECT_THROW(hook_syscall(b.guest, b.guest.spec().syscall_entries, rogue, false), attack_error);

  auto fresh = guest_state::boot(booted::spec(1));
  EXPECT_THROW(hook_syscall(fresh, nr, rogue, false), lifecycle_error);
}

TEST(InterruptHook, VectorChangeIsVisible)
{
  booted b;
  const auto& idt = b.guest.interrupt_table();
  hook_interrupt(b.guest, 0x80, rogue, false);
  const auto now = read_virtual(b.guest.memory(), b.guest.pages(), idt.vaddr, idt.size);
  EXPECT_NE(now, idt.initial_content);
  EXPECT_EQ(b.guest.interrupt_handler(0x80), rogue);
  EXPECT_THROW(hook_interrupt(b.guest, 256, rogue, false), attack_error);
  EXPECT_TRUE(b.switches_until_detected(guest_state::interrupt_table_id, 10).has_value());
  EXPECT_EQ(b.guest.interrupt_handler(0x80), b.guest.original_interrupt_handler(0x80));
}

TEST(FnptrHijack, DetectedWithinOnePass)
{
  booted b(998, 100);
  const auto passes = b.mon.num_subsets();
  for (std::uint32_t id : {2u, 500u, 999u}) {
    hijack_fnptr(b.guest, id, 0, rogue + id);
    const auto n = b.switches_until_detected(id, passes);
    ASSERT_TRUE(n.has_value()) << "object " << id;
    EXPECT_LT(*n, passes);
  }
}

TEST(FnptrHijack, Bounds)
{
  booted b;
  EXPECT_THROW(hijack_fnptr(b.guest, 5, 121, rogue), attack_error);
  EXPECT_NO_THROW(hijack_fnptr(b.guest, 5, 120, rogue));
  EXPECT_THROW(hijack_fnptr(b.guest, 100000, 0, rogue), attack_error);
}

TEST(FnptrHijack, RestoreBeforeCheckEscapes)
{
  booted b;
  const auto& obj = b.guest.object(250);
  hijack_fnptr(b.guest, 250, 16, rogue);
  write_virtual(b.guest.memory(), b.guest.pages(), obj.vaddr + 16,
                std::span(obj.initial_content).subspan(16, 8));
  EXPECT_FALSE(b.switches_until_detected(250, 6).has_value());
}

TEST(Racing, LongHoldIsAlwaysDetected)
{
  booted b(998, 100);
  const auto s = b.mon.num_subsets();
  for (std::uint32_t id : {3u, 400u, 997u}) {
    racing_attack race(id, 0, rogue, s);
    race.begin(b.guest);
    const auto n = b.switches_until_detected(id, s);
    race.end(b.guest);
    EXPECT_TRUE(n.has_value());
  }
}

TEST(Racing, ShortWindowAtUnluckyPhaseEscapes)
{
  booted b(298, 100);
  // Object 5 sits in subset 0, which the first trap has just checked.
  b.mon.handle_vmexit(b.guest.memory(), b.guest.process_switch());
  racing_attack race(5, 8, rogue, 1);
  race.begin(b.guest);
  EXPECT_TRUE(race.active());
  EXPECT_TRUE(b.mon.handle_vmexit(b.guest.memory(), b.guest.process_switch()).detections.empty());
  race.end(b.guest);
  EXPECT_FALSE(race.active());
  EXPECT_FALSE(b.switches_until_detected(5, 10).has_value());
  EXPECT_EQ(read_virtual(b.guest.memory(), b.guest.pages(), b.guest.object(5).vaddr, 128),
            b.guest.object(5).initial_content);
}

TEST(Racing, ZeroWindowRejected)
{
  EXPECT_THROW(racing_attack(0, 0, rogue, 0), attack_error);
}

TEST(Freeze, StopsTrapsUntilUnfrozen)
{
  booted b(298, 100);
  b.mon.handle_vmexit(b.guest.memory(), b.guest.process_switch());
  const auto cursor = b.mon.cursor();
  freeze_scheduler(b.guest);
  EXPECT_TRUE(b.guest.frozen());
  hijack_fnptr(b.guest, 299, 0, rogue);
  EXPECT_FALSE(b.switches_until_detected(299, 20).has_value());
  EXPECT_EQ(b.mon.cursor(), cursor);
  EXPECT_EQ(b.mon.traps_handled(), 1u);

  unfreeze_scheduler(b.guest);
  const auto r = b.mon.handle_vmexit(b.guest.memory(), b.guest.process_switch());
  EXPECT_EQ(r.checked_ids.front(), b.mon.schedule()[cursor * 100]);
}

TEST(AttackKinds, NamesRoundTrip)
{
  for (auto k : {attack_kind::syscall_hook, attack_kind::interrupt_hook, attack_kind::fnptr_hijack,
                 attack_kind::racing, attack_kind::scheduler_freeze})
    EXPECT_EQ(parse_attack_kind(to_string(k)), k);
  EXPECT_FALSE(parse_attack_kind("bootkit").has_value());
}
