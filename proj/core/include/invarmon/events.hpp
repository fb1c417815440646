#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "invarmon/physmem.hpp"

namespace invarmon {

enum class control_register : std::uint8_t { cr0, cr2, cr3, cr4 };

enum class event_kind : std::uint8_t {
  mov_cr,    ///< guest write to a control register; causes a VM exit
  hypercall, ///< explicit guest -> monitor call
  tick,      ///< clock advance without any trap (frozen scheduler)
};

/// One entry of the simulated trap stream.
struct vm_event
{
  std::uint64_t index = 0;
  event_kind kind = event_kind::tick;
  control_register reg = control_register::cr3;
  std::uint64_t value = 0;

  friend bool operator==(const vm_event&, const vm_event&) = default;
};

struct registration_entry
{
  std::uint32_t id = 0;
  virt_addr vaddr;
  std::uint64_t size = 0;
  std::optional<std::vector<std::uint8_t>> copy;
};

/// What the trusted module hands to the monitor in one hypercall.
struct registration_batch
{
  std::vector<registration_entry> entries;
};

std::string_view to_string(control_register r) noexcept;
std::string_view to_string(event_kind k) noexcept;

} // namespace invarmon
