#include "invarmon/physmem.hpp"

#include "invarmon/error.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <limits>
#include <string>

namespace invarmon {

namespace {

std::string hex(std::uint64_t v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

} // namespace

guest_memory::guest_memory(std::uint64_t num_frames, std::uint64_t frame_size)
  : frame_size_(frame_size)
  , num_frames_(num_frames)
{
  if (num_frames == 0 || frame_size == 0)
    throw std::invalid_argument("guest_memory: frame count and frame size must be non-zero");
  if (num_frames > std::numeric_limits<std::uint64_t>::max() / frame_size)
    throw std::invalid_argument("guest_memory: size overflows 64 bits");
  bytes_.assign(num_frames * frame_size, 0);
}

void guest_memory::check_range(phys_addr at, std::uint64_t len) const
{
  const auto size = bytes_.size();
  if (at.value > size || len > size - at.value)
    throw bounds_error("physical access [" + hex(at.value) + ", +" + std::to_string(len) +
                       ") outside memory of " + std::to_string(size) + " bytes");
}

std::vector<std::uint8_t> guest_memory::read(phys_addr at, std::uint64_t len) const
{
  check_range(at, len);
  return {bytes_.begin() + static_cast<std::ptrdiff_t>(at.value),
          bytes_.begin() + static_cast<std::ptrdiff_t>(at.value + len)};
}

void guest_memory::read_into(phys_addr at, std::span<std::uint8_t> out) const
{
  check_range(at, out.size());
  if (!out.empty())
    std::memcpy(out.data(), bytes_.data() + at.value, out.size());
}

std::span<const std::uint8_t> guest_memory::view(phys_addr at, std::uint64_t len) const
{
  check_range(at, len);
  return {bytes_.data() + at.value, static_cast<std::size_t>(len)};
}

void guest_memory::write(phys_addr at, std::span<const std::uint8_t> data)
{
  check_range(at, data.size());
  if (!data.empty())
    std::memcpy(bytes_.data() + at.value, data.data(), data.size());
}

page_map::page_map(std::uint64_t num_frames, std::uint64_t frame_size)
  : num_frames_(num_frames)
  , frame_size_(frame_size)
{
  if (num_frames == 0 || frame_size == 0)
    throw std::invalid_argument("page_map: frame count and frame size must be non-zero");
}

void page_map::map_page(std::uint64_t vpage, std::uint64_t pframe, bool writable)
{
  if (pframe >= num_frames_)
    throw bounds_error("map_page: frame " + std::to_string(pframe) + " >= " +
                       std::to_string(num_frames_) + " frames");
  entries_[vpage] = page_entry{pframe, writable};
}

void page_map::unmap_page(std::uint64_t vpage)
{
  entries_.erase(vpage);
}

bool page_map::is_mapped(std::uint64_t vpage) const noexcept
{
  return entries_.contains(vpage);
}

const page_entry* page_map::lookup(std::uint64_t vpage) const noexcept
{
  auto it = entries_.find(vpage);
  return it == entries_.end() ? nullptr : &it->second;
}

phys_addr page_map::translate(virt_addr va) const
{
  const auto* e = lookup(page_of(va));
  if (!e)
    throw translation_fault("no mapping for virtual address " + hex(va.value));
  return {e->frame * frame_size_ + va.value % frame_size_};
}

std::vector<fragment> page_map::translate_range(virt_addr va, std::uint64_t size) const
{
  if (size == 0)
    throw std::invalid_argument("translate_range: size must be at least 1");
  if (va.value > std::numeric_limits<std::uint64_t>::max() - (size - 1))
    throw translation_fault("translate_range: range wraps the address space");

  std::vector<fragment> out;
  std::uint64_t done = 0;
  while (done < size) {
    const virt_addr cur = va + done;
    const auto in_page = frame_size_ - cur.value % frame_size_;
    const auto len = std::min(in_page, size - done);
    out.push_back({translate(cur), len});
    done += len;
  }
  return out;
}

std::uint64_t total_length(std::span<const fragment> frags) noexcept
{
  std::uint64_t n = 0;
  for (const auto& f : frags)
    n += f.len;
  return n;
}

std::vector<std::uint8_t> read_fragments(const guest_memory& mem, std::span<const fragment> frags)
{
  std::vector<std::uint8_t> out(total_length(frags));
  std::size_t pos = 0;
  for (const auto& f : frags) {
    mem.read_into(f.phys, std::span(out).subspan(pos, f.len));
    pos += f.len;
  }
  return out;
}

void write_fragments(guest_memory& mem, std::span<const fragment> frags,
                     std::span<const std::uint8_t> data)
{
  if (total_length(frags) != data.size())
    throw std::invalid_argument("write_fragments: data length does not match fragments");
  std::size_t pos = 0;
  for (const auto& f : frags) {
    mem.write(f.phys, data.subspan(pos, f.len));
    pos += f.len;
  }
}

std::vector<std::uint8_t> read_virtual(const guest_memory& mem, const page_map& map,
                                       virt_addr va, std::uint64_t len)
{
  if (len == 0)
    return {};
  return read_fragments(mem, map.translate_range(va, len));
}

void write_virtual(guest_memory& mem, const page_map& map, virt_addr va,
                   std::span<const std::uint8_t> data)
{
  if (data.empty())
    return;
  const auto frags = map.translate_range(va, data.size());
  for (std::uint64_t page = map.page_of(va); page <= map.page_of(va + (data.size() - 1)); ++page) {
    if (!map.lookup(page)->writable)
      throw protection_fault("write to read-only page at " + hex(page * map.frame_size()));
  }
  write_fragments(mem, frags, data);
}

} // namespace invarmon
