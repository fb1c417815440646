#include "invarmon/attacks.hpp"

#include "invarmon/error.hpp"

#include <array>

namespace invarmon {

namespace {

std::array<std::uint8_t, 8> le64(std::uint64_t v)
{
  std::array<std::uint8_t, 8> out;
  for (int i = 0; i < 8; ++i)
    out[i] = static_cast<std::uint8_t>(v >> (8 * i));
  return out;
}

std::uint64_t load_le64(std::span<const std::uint8_t> b)
{
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = v << 8 | b[i];
  return v;
}

void require_booted(const guest_state& guest)
{
  if (!guest.boot_complete())
    throw lifecycle_error("attacks are modelled after boot only");
}

// Stores 8 bytes at `slot` either physically or through a new writable alias.
void overwrite_slot(guest_state& guest, virt_addr slot, std::uint64_t rogue, bool via_alias)
{
  const auto bytes = le64(rogue);
  if (via_alias) {
    const auto alias = guest.map_writable_alias(slot);
    write_virtual(guest.memory(), guest.pages(), alias, bytes);
  } else {
    write_fragments(guest.memory(), guest.pages().translate_range(slot, bytes.size()), bytes);
  }
}

std::uint64_t current_value(const guest_state& guest, virt_addr at)
{
  return load_le64(read_virtual(guest.memory(), guest.pages(), at, 8));
}

} // namespace

std::string_view to_string(attack_kind k) noexcept
{
  switch (k) {
    case attack_kind::syscall_hook: return "syscall_hook";
    case attack_kind::interrupt_hook: return "interrupt_hook";
    case attack_kind::fnptr_hijack: return "fnptr_hijack";
    case attack_kind::racing: return "racing";
    case attack_kind::scheduler_freeze: return "scheduler_freeze";
  }
  return "?";
}

std::optional<attack_kind> parse_attack_kind(std::string_view s) noexcept
{
  for (auto k : {attack_kind::syscall_hook, attack_kind::interrupt_hook, attack_kind::fnptr_hijack,
                 attack_kind::racing, attack_kind::scheduler_freeze})
    if (to_string(k) == s)
      return k;
  return std::nullopt;
}

std::optional<std::uint32_t> attack_target(const guest_state& guest, const attack_script& a)
{
  switch (a.kind) {
    case attack_kind::syscall_hook: return guest.syscall_table().id;
    case attack_kind::interrupt_hook: return guest.interrupt_table().id;
    case attack_kind::fnptr_hijack:
    case attack_kind::racing: return a.object_id;
    case attack_kind::scheduler_freeze: return std::nullopt;
  }
  return std::nullopt;
}

void hook_syscall(guest_state& guest, std::uint32_t index, std::uint64_t rogue, bool via_alias)
{
  require_booted(guest);
  if (index >= guest.spec().syscall_entries)
    throw attack_error("syscall slot " + std::to_string(index) + " outside the table");
  const auto slot = guest.syscall_slot(index);
  if (current_value(guest, slot) == rogue)
    throw attack_error("rogue handler equals the current syscall entry");
  overwrite_slot(guest, slot, rogue, via_alias);
}

void hook_interrupt(guest_state& guest, std::uint32_t vector, std::uint64_t rogue, bool via_alias)
{
  require_booted(guest);
  if (vector >= guest.spec().interrupt_vectors)
    throw attack_error("interrupt vector " + std::to_string(vector) + " outside the table");
  const auto slot = guest.interrupt_slot(vector);
  if (current_value(guest, slot) == rogue)
    throw attack_error("rogue handler equals the current interrupt vector");
  overwrite_slot(guest, slot, rogue, via_alias);
}

void hijack_fnptr(guest_state& guest, std::uint32_t object_id, std::uint64_t offset,
                  std::uint64_t rogue)
{
  require_booted(guest);
  if (object_id >= guest.objects().size())
    throw attack_error("no kernel object with id " + std::to_string(object_id));
  const auto& obj = guest.object(object_id);
  if (obj.size < 8 || offset > obj.size - 8)
    throw attack_error("pointer at offset " + std::to_string(offset) + " does not fit in object " +
                       std::to_string(object_id) + " of " + std::to_string(obj.size) + " bytes");
  const auto at = obj.vaddr + offset;
  if (current_value(guest, at) == rogue)
    throw attack_error("rogue pointer equals the current value");
  overwrite_slot(guest, at, rogue, false);
}

racing_attack::racing_attack(std::uint32_t object_id, std::uint64_t offset, std::uint64_t rogue,
                             std::uint64_t hold_events)
  : object_id_(object_id)
  , offset_(offset)
  , rogue_(rogue)
  , hold_events_(hold_events)
{
  if (hold_events == 0)
    throw attack_error("racing window must cover at least one event");
}

void racing_attack::begin(guest_state& guest)
{
  if (active_)
    throw attack_error("racing attack already active");
  if (object_id_ >= guest.objects().size())
    throw attack_error("no kernel object with id " + std::to_string(object_id_));
  const auto& obj = guest.object(object_id_);
  if (obj.size < 8 || offset_ > obj.size - 8)
    throw attack_error("racing pointer does not fit in object " + std::to_string(object_id_));
  saved_ = read_virtual(guest.memory(), guest.pages(), obj.vaddr + offset_, 8);
  hijack_fnptr(guest, object_id_, offset_, rogue_);
  active_ = true;
}

void racing_attack::end(guest_state& guest)
{
  if (!active_)
    return;
  const auto& obj = guest.object(object_id_);
  write_fragments(guest.memory(), guest.pages().translate_range(obj.vaddr + offset_, 8), saved_);
  active_ = false;
}

void freeze_scheduler(guest_state& guest)
{
  require_booted(guest);
  guest.freeze_scheduler();
}

void unfreeze_scheduler(guest_state& guest)
{
  guest.unfreeze_scheduler();
}

} // namespace invarmon
