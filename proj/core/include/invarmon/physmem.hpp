#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace invarmon {

inline constexpr std::uint64_t default_frame_size = 4096;

struct phys_addr
{
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(phys_addr, phys_addr) = default;
};

struct virt_addr
{
  std::uint64_t value = 0;

  friend constexpr auto operator<=>(virt_addr, virt_addr) = default;
};

constexpr phys_addr operator+(phys_addr a, std::uint64_t off) noexcept { return {a.value + off}; }
constexpr virt_addr operator+(virt_addr a, std::uint64_t off) noexcept { return {a.value + off}; }

/// A physically contiguous piece of an object. Never crosses a frame boundary.
struct fragment
{
  phys_addr phys;
  std::uint64_t len = 0;

  friend bool operator==(const fragment&, const fragment&) = default;
};

/// Frame-granular simulated physical memory, zero-initialized.
class guest_memory
{
public:
  guest_memory(std::uint64_t num_frames, std::uint64_t frame_size = default_frame_size);

  std::uint64_t frame_size() const noexcept { return frame_size_; }
  std::uint64_t num_frames() const noexcept { return num_frames_; }
  std::uint64_t size() const noexcept { return bytes_.size(); }

  std::vector<std::uint8_t> read(phys_addr at, std::uint64_t len) const;
  void read_into(phys_addr at, std::span<std::uint8_t> out) const;
  std::span<const std::uint8_t> view(phys_addr at, std::uint64_t len) const;
  void write(phys_addr at, std::span<const std::uint8_t> data);

  std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }

  friend bool operator==(const guest_memory&, const guest_memory&) = default;

private:
  void check_range(phys_addr at, std::uint64_t len) const;

  std::uint64_t frame_size_;
  std::uint64_t num_frames_;
  std::vector<std::uint8_t> bytes_;
};

struct page_entry
{
  std::uint64_t frame = 0;
  bool writable = true;

  friend bool operator==(const page_entry&, const page_entry&) = default;
};

/// Flat virtual page -> physical frame map. Aliasing (several pages onto
/// one frame) is allowed; remapping a page replaces its entry.
class page_map
{
public:
  page_map(std::uint64_t num_frames, std::uint64_t frame_size = default_frame_size);

  void map_page(std::uint64_t vpage, std::uint64_t pframe, bool writable = true);
  void unmap_page(std::uint64_t vpage);
  bool is_mapped(std::uint64_t vpage) const noexcept;
  const page_entry* lookup(std::uint64_t vpage) const noexcept;

  std::uint64_t page_of(virt_addr va) const noexcept { return va.value / frame_size_; }
  std::uint64_t frame_size() const noexcept { return frame_size_; }
  std::size_t mapped_pages() const noexcept { return entries_.size(); }

  phys_addr translate(virt_addr va) const;

  /// Splits [va, va+size) into per-frame fragments in ascending virtual order.
  std::vector<fragment> translate_range(virt_addr va, std::uint64_t size) const;

  friend bool operator==(const page_map&, const page_map&) = default;

private:
  std::uint64_t num_frames_;
  std::uint64_t frame_size_;
  std::map<std::uint64_t, page_entry> entries_;
};

std::uint64_t total_length(std::span<const fragment> frags) noexcept;

/// Reads the concatenation of `frags` in order.
std::vector<std::uint8_t> read_fragments(const guest_memory& mem, std::span<const fragment> frags);

/// Scatters `data` over `frags` in order; sizes must match.
void write_fragments(guest_memory& mem, std::span<const fragment> frags,
                     std::span<const std::uint8_t> data);

/// Byte-for-byte access through the page map, as the guest CPU would see it.
std::vector<std::uint8_t> read_virtual(const guest_memory& mem, const page_map& map,
                                       virt_addr va, std::uint64_t len);

/// Guest-side store; honours the writable bit and raises protection_fault.
void write_virtual(guest_memory& mem, const page_map& map, virt_addr va,
                   std::span<const std::uint8_t> data);

} // namespace invarmon
