#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invarmon/events.hpp"
#include "invarmon/md5.hpp"
#include "invarmon/physmem.hpp"
#include "invarmon/rng.hpp"

namespace invarmon {

/// MD5 of an object plus the 32-bit value a compact record keeps.
struct digest
{
  md5_value full{};

  /// First four bytes of the MD5 value, big-endian.
  std::uint32_t stored() const noexcept
  {
    return std::uint32_t(full[0]) << 24 | std::uint32_t(full[1]) << 16 |
           std::uint32_t(full[2]) << 8 | std::uint32_t(full[3]);
  }

  friend bool operator==(const digest&, const digest&) = default;
};

digest compute_digest(std::span<const std::uint8_t> data) noexcept;

/// What a record remembers of a digest: 32 bits, or all 128 in full mode.
struct record_digest
{
  std::uint32_t stored = 0;
  std::optional<md5_value> full;

  bool matches(const record_digest& other) const noexcept
  {
    if (full && other.full)
      return *full == *other.full;
    return stored == other.stored;
  }

  std::string to_string() const;

  friend bool operator==(const record_digest&, const record_digest&) = default;
};

namespace record_flag {
inline constexpr std::uint32_t has_copy = 1u << 0;
inline constexpr std::uint32_t compromised_seen = 1u << 1;
} // namespace record_flag

/// Accounted size of one record: 64-bit address, 32-bit size, 32-bit
/// checksum, 32-bit flags.
inline constexpr std::uint64_t record_header_bytes = 20;
/// Same record holding a full 128-bit digest.
inline constexpr std::uint64_t full_record_header_bytes = 32;

/// Fragments and pristine copies live in monitor-owned arenas; a record
/// refers to them by position.
struct protection_record
{
  std::uint32_t id = 0;
  std::uint32_t size = 0;
  record_digest digest;
  std::uint32_t flags = 0;
  std::uint32_t fragment_first = 0;
  std::uint32_t fragment_count = 0;
  std::uint64_t copy_offset = 0;

  bool has_copy() const noexcept { return (flags & record_flag::has_copy) != 0; }
  bool compromised_seen() const noexcept { return (flags & record_flag::compromised_seen) != 0; }
};

enum class ordering_mode : std::uint8_t {
  round_robin,
  seeded_random_per_pass,
};

std::string_view to_string(ordering_mode m) noexcept;
std::optional<ordering_mode> parse_ordering_mode(std::string_view s) noexcept;

struct monitor_options
{
  std::uint64_t subset_size = 100;
  ordering_mode ordering = ordering_mode::round_robin;
  std::uint64_t schedule_seed = 0;
  /// seeded_random_per_pass only: draw a new permutation at every wrap
  /// instead of replaying the boot-time one. Breaks the one-pass latency bound.
  bool reshuffle_each_pass = false;
  bool repair_enabled = true;
  bool full_digest = false;
};

struct detection
{
  std::uint64_t trap_index = 0;
  std::uint64_t event_index = 0;
  std::uint32_t id = 0;
  record_digest expected;
  record_digest actual;
};

struct repair_entry
{
  std::uint64_t trap_index = 0;
  std::uint64_t event_index = 0;
  std::uint32_t id = 0;
};

struct check_result
{
  bool clean = true;
  record_digest expected;
  record_digest actual;
};

enum class repair_result : std::uint8_t { repaired, not_repairable };

/// Outcome of one trapped control-register write.
struct check_report
{
  std::uint64_t event_index = 0;
  std::optional<std::uint64_t> trap_index; ///< absent for ignored events
  std::vector<std::uint32_t> checked_ids;
  std::vector<detection> detections;
  std::vector<std::uint32_t> repairs;
  std::vector<std::uint32_t> not_repairable;
};

/// Byte counts behind the monitor's memory footprint.
struct memory_accounting
{
  std::uint64_t records = 0; ///< record headers
  std::uint64_t copies = 0;  ///< pristine object contents kept for repair
  std::uint64_t total = 0;   ///< records + copies: what protection costs to keep
  std::uint64_t mapping = 0; ///< objects mapped at once while checking one subset
  std::uint64_t overall = 0; ///< total + mapping

  static std::uint64_t kib(std::uint64_t bytes) noexcept;

  friend bool operator==(const memory_accounting&, const memory_accounting&) = default;
};

/// Closed form for N uniform objects of `object_size` bytes checked k at a time.
memory_accounting memory_overhead(std::uint64_t n, std::uint64_t object_size, bool with_copies,
                                  std::uint64_t k, bool full_digest = false) noexcept;

/// Same accounting for an arbitrary population. Mapping is the worst subset:
/// the k largest objects.
memory_accounting memory_overhead(std::span<const std::uint64_t> sizes, bool with_copies,
                                  std::uint64_t k, bool full_digest = false);

/// Process switches between a modification and its detection when it lands
/// right after its subset was scanned: ceil(N/k) - 1.
std::uint64_t worst_case_latency_switches(std::uint64_t n, std::uint64_t k);

/// Hypervisor-side integrity checker.
///
/// Registration is open until seal(). Afterwards every MOV to a control
/// register checks the next subset of at most k records, reading through the
/// physical fragments captured at registration, so later guest page-table
/// games (aliases, remaps) cannot hide a modification.
class monitor
{
public:
  explicit monitor(monitor_options opts = {});

  const monitor_options& options() const noexcept { return opts_; }

  /// Registers every entry or none of them. Returns the count registered.
  std::size_t register_batch(const guest_memory& mem, const page_map& map,
                             const registration_batch& batch);

  /// Only allowed while registration is open.
  void set_schedule_seed(std::uint64_t seed);

  void seal(guest_memory& mem, phys_addr eoo_flag_addr);
  bool sealed() const noexcept { return sealed_; }

  check_result check_record(const guest_memory& mem, std::size_t index);
  repair_result repair(guest_memory& mem, std::size_t index);

  /// Tick and hypercall events, and traps before seal, yield an empty report.
  check_report handle_vmexit(guest_memory& mem, const vm_event& event);

  std::span<const protection_record> records() const noexcept { return records_; }
  std::span<const fragment> fragments_of(const protection_record& rec) const noexcept;
  std::span<const std::uint8_t> copy_of(const protection_record& rec) const noexcept;
  std::optional<std::size_t> index_of(std::uint32_t id) const noexcept;

  std::size_t num_subsets() const noexcept;
  std::size_t cursor() const noexcept { return cursor_; }
  std::span<const std::uint32_t> schedule() const noexcept { return schedule_; }
  std::uint64_t passes_completed() const noexcept { return passes_; }

  std::span<const detection> detections() const noexcept { return detections_; }
  std::span<const repair_entry> repairs() const noexcept { return repairs_; }

  std::uint64_t traps_handled() const noexcept { return traps_; }
  std::uint64_t checks_performed() const noexcept { return checks_; }
  std::uint64_t bytes_hashed() const noexcept { return bytes_hashed_; }

  memory_accounting accounting() const;

private:
  record_digest measure(const guest_memory& mem, std::span<const fragment> frags,
                        std::uint32_t size);
  void reshuffle();

  monitor_options opts_;
  rng schedule_rng_;
  std::vector<protection_record> records_;
  std::vector<fragment> fragment_arena_;
  std::vector<std::uint8_t> copy_arena_;
  std::vector<std::uint32_t> schedule_;
  std::size_t cursor_ = 0;
  std::uint64_t passes_ = 0;
  bool sealed_ = false;

  std::vector<detection> detections_;
  std::vector<repair_entry> repairs_;
  std::uint64_t traps_ = 0;
  std::uint64_t checks_ = 0;
  std::uint64_t bytes_hashed_ = 0;
  std::uint64_t current_trap_ = 0;
  std::uint64_t current_event_ = 0;
};

} // namespace invarmon
