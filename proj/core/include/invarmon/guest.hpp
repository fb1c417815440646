#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invarmon/events.hpp"
#include "invarmon/physmem.hpp"

namespace invarmon {

class monitor;

/// The three flavours of invariant kernel object a guest can hand over.
enum class object_kind : std::uint8_t {
  static_hardcoded, ///< fixed address known to the VM installer
  static_mapped,    ///< address depends on the kernel build (System.map)
  dynamic_heap,     ///< kmalloc/vmalloc allocation
};

std::string_view to_string(object_kind k) noexcept;
std::optional<object_kind> parse_object_kind(std::string_view s) noexcept;

// Virtual layout (x86-64 Linux flavoured).
inline constexpr std::uint64_t direct_map_base = 0xffff'8800'0000'0000;
inline constexpr std::uint64_t alias_area_base = 0xffff'c900'0000'0000;
inline constexpr std::uint64_t vmalloc_area_base = 0xffff'c980'0000'0000;
inline constexpr std::uint64_t kernel_text_base = 0xffff'ffff'8100'0000;
inline constexpr std::uint64_t rootkit_area_base = 0xffff'ffff'a000'0000;
inline constexpr std::uint64_t rootkit_area_size = 0x0100'0000;

constexpr bool in_rootkit_area(std::uint64_t addr) noexcept
{
  return addr >= rootkit_area_base && addr - rootkit_area_base < rootkit_area_size;
}

struct kernel_object
{
  std::uint32_t id = 0;
  object_kind kind = object_kind::dynamic_heap;
  std::string name;
  virt_addr vaddr;
  std::uint64_t size = 0;
  std::vector<std::uint8_t> initial_content;
};

struct object_group
{
  object_kind kind = object_kind::dynamic_heap;
  std::uint64_t count = 0;
  std::uint64_t size = 0;

  friend bool operator==(const object_group&, const object_group&) = default;
};

/// Object population and machine geometry for one guest.
struct guest_spec
{
  std::uint64_t seed = 0;
  std::uint64_t frame_size = default_frame_size;
  std::uint64_t num_frames = 0; ///< 0: just large enough for the population
  double switch_rate = 25.0;    ///< process switches per simulated second
  std::uint32_t syscall_entries = 512;
  std::uint32_t setuid_index = 105;
  std::uint32_t interrupt_vectors = 256;
  bool readonly_syscall_table = true;
  std::uint32_t processes = 16;
  std::vector<object_group> objects;

  friend bool operator==(const guest_spec&, const guest_spec&) = default;
};

enum class dispatch_kind : std::uint8_t { original, hijacked };

struct dispatch_trace
{
  std::uint32_t nr = 0;
  std::uint64_t arg = 0;
  std::uint64_t handler = 0;
  dispatch_kind kind = dispatch_kind::original;
};

/// Simulated guest kernel. Owns guest memory and the page map, runs the
/// boot-time trusted module and the process-switch clock.
class guest_state
{
public:
  /// Lays out the tables and objects, fills them with seeded content.
  /// Throws allocation_error if a fixed num_frames is too small.
  static guest_state boot(const guest_spec& spec);

  const guest_spec& spec() const noexcept { return spec_; }
  const guest_memory& memory() const noexcept { return memory_; }
  guest_memory& memory() noexcept { return memory_; }
  const page_map& pages() const noexcept { return pages_; }
  page_map& pages() noexcept { return pages_; }

  std::span<const kernel_object> objects() const noexcept { return *objects_; }
  const kernel_object& object(std::uint32_t id) const;
  const kernel_object& syscall_table() const noexcept { return (*objects_)[syscall_table_id]; }
  const kernel_object& interrupt_table() const noexcept { return (*objects_)[interrupt_table_id]; }

  static constexpr std::uint32_t syscall_table_id = 0;
  static constexpr std::uint32_t interrupt_table_id = 1;

  bool boot_complete() const noexcept { return boot_complete_; }
  bool module_loaded() const noexcept { return module_loaded_; }
  phys_addr eoo_flag_addr() const noexcept { return eoo_flag_addr_; }

  /// Trusted module: one entry per object, optionally with a pristine copy.
  registration_batch trusted_module_collect(bool with_copies) const;

  /// Sends `batch` to the monitor. When `final` is set the monitor closes
  /// registration, flips the end-of-operation flag and the module unloads.
  void raise_hypercall(monitor& mon, const registration_batch& batch, bool final = true);

  /// Seals the monitor without sending more entries (multi-batch boots).
  void complete_boot(monitor& mon);

  /// Schedules the next process. A frozen scheduler yields a tick instead.
  vm_event process_switch();

  /// A non-scheduling control-register write (CR0/CR4 toggles and the like).
  vm_event control_register_write(control_register reg, std::uint64_t value);

  std::uint64_t steps() const noexcept { return steps_; }
  std::uint64_t switches() const noexcept { return switches_; }
  double clock_seconds() const noexcept { return static_cast<double>(steps_) / spec_.switch_rate; }
  std::uint64_t current_cr3() const noexcept { return cr3_; }

  dispatch_trace invoke_syscall(std::uint32_t nr, std::uint64_t arg) const;
  std::uint64_t interrupt_handler(std::uint32_t vector) const;

  std::uint64_t original_syscall_handler(std::uint32_t nr) const;
  std::uint64_t original_interrupt_handler(std::uint32_t vector) const;
  virt_addr syscall_slot(std::uint32_t nr) const;
  virt_addr interrupt_slot(std::uint32_t vector) const;

  /// Maps a fresh writable page in the alias area onto the frame backing
  /// `va` and returns the alias address of `va`.
  virt_addr map_writable_alias(virt_addr va);

  void freeze_scheduler() noexcept { frozen_ = true; }
  void unfreeze_scheduler() noexcept { frozen_ = false; }
  bool frozen() const noexcept { return frozen_; }

private:
  guest_state(const guest_spec& spec, std::uint64_t num_frames);

  std::uint64_t process_pgd(std::uint32_t pid) const noexcept;

  guest_spec spec_;
  guest_memory memory_;
  page_map pages_;
  // Immutable after boot; copies of a guest share it.
  std::shared_ptr<const std::vector<kernel_object>> objects_;
  phys_addr eoo_flag_addr_;
  std::uint64_t pgd_base_frame_ = 0;
  bool boot_complete_ = false;
  bool module_loaded_ = true;
  bool frozen_ = false;
  std::uint64_t steps_ = 0;
  std::uint64_t switches_ = 0;
  std::uint32_t current_pid_ = 0;
  std::uint64_t cr3_ = 0;
  std::uint64_t next_alias_page_ = 0;
};

} // namespace invarmon
