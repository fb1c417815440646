#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "invarmon/guest.hpp"

namespace invarmon {

enum class attack_kind : std::uint8_t {
  syscall_hook,     ///< overwrite one system-call table slot
  interrupt_hook,   ///< overwrite one interrupt vector
  fnptr_hijack,     ///< overwrite 8 bytes inside any protected object
  racing,           ///< modify, then restore after a short window
  scheduler_freeze, ///< stop task switching, hence CR3 writes
};

std::string_view to_string(attack_kind k) noexcept;
std::optional<attack_kind> parse_attack_kind(std::string_view s) noexcept;

/// One scripted rootkit action. The action takes effect just before the
/// event with index `trigger_event`.
struct attack_script
{
  attack_kind kind = attack_kind::syscall_hook;
  std::uint64_t trigger_event = 0;
  std::uint32_t slot = 0;      ///< syscall number or interrupt vector
  std::uint32_t object_id = 0; ///< fnptr_hijack / racing target
  std::uint64_t offset = 0;    ///< byte offset inside the target object
  std::optional<std::uint64_t> rogue; ///< defaults to an address in the rootkit area
  bool via_alias = false;
  std::uint64_t hold_events = 1;      ///< racing: events the modification stays visible
  std::optional<std::uint64_t> freeze_events; ///< scheduler_freeze: unfreeze after this many

  friend bool operator==(const attack_script&, const attack_script&) = default;
};

struct attack_outcome
{
  attack_kind kind = attack_kind::syscall_hook;
  std::optional<std::uint32_t> target_id;
  std::uint64_t applied_at = 0;
  std::optional<std::uint64_t> restored_at;
  std::optional<std::uint64_t> detected_at;
  std::optional<std::uint64_t> repaired_at;
  std::optional<std::uint64_t> latency_switches;
  std::optional<double> latency_seconds;
  bool escaped = true;
};

/// Deterministic rogue handler address for the n-th attack of a scenario.
constexpr std::uint64_t default_rogue_address(std::size_t n) noexcept
{
  return rootkit_area_base + 0x1000 * (n + 1);
}

/// Object the attack modifies; empty for scheduler_freeze.
std::optional<std::uint32_t> attack_target(const guest_state& guest, const attack_script& a);

/// Writes `rogue` into syscall slot `index`. Direct hooks store through the
/// physical address (the /dev/mem route, bypassing the read-only mapping);
/// alias hooks first map a fresh writable page onto the table's frame.
void hook_syscall(guest_state& guest, std::uint32_t index, std::uint64_t rogue, bool via_alias);

void hook_interrupt(guest_state& guest, std::uint32_t vector, std::uint64_t rogue, bool via_alias);

/// Replaces the 8 bytes at `offset` of object `object_id` with `rogue`.
void hijack_fnptr(guest_state& guest, std::uint32_t object_id, std::uint64_t offset,
                  std::uint64_t rogue);

/// Modify-then-restore adversary. begin() plants the rogue pointer and
/// remembers the bytes it replaced; end() puts them back.
class racing_attack
{
public:
  racing_attack(std::uint32_t object_id, std::uint64_t offset, std::uint64_t rogue,
                std::uint64_t hold_events);

  void begin(guest_state& guest);
  void end(guest_state& guest);

  bool active() const noexcept { return active_; }
  std::uint64_t hold_events() const noexcept { return hold_events_; }

private:
  std::uint32_t object_id_;
  std::uint64_t offset_;
  std::uint64_t rogue_;
  std::uint64_t hold_events_;
  std::vector<std::uint8_t> saved_;
  bool active_ = false;
};

void freeze_scheduler(guest_state& guest);
void unfreeze_scheduler(guest_state& guest);

} // namespace invarmon
