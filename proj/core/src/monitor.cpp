#include "invarmon/monitor.hpp"

#include "invarmon/error.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <unordered_set>

namespace invarmon {

digest compute_digest(std::span<const std::uint8_t> data) noexcept
{
  return digest{md5::hash(data)};
}

std::string record_digest::to_string() const
{
  if (full)
    return to_hex(*full);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", stored);
  return buf;
}

std::string_view to_string(ordering_mode m) noexcept
{
  switch (m) {
    case ordering_mode::round_robin: return "round_robin";
    case ordering_mode::seeded_random_per_pass: return "seeded_random_per_pass";
  }
  return "?";
}

std::optional<ordering_mode> parse_ordering_mode(std::string_view s) noexcept
{
  for (auto m : {ordering_mode::round_robin, ordering_mode::seeded_random_per_pass})
    if (to_string(m) == s)
      return m;
  return std::nullopt;
}

std::uint64_t memory_accounting::kib(std::uint64_t bytes) noexcept
{
  return (bytes + 512) / 1024;
}

memory_accounting memory_overhead(std::uint64_t n, std::uint64_t object_size, bool with_copies,
                                  std::uint64_t k, bool full_digest) noexcept
{
  memory_accounting a;
  a.records = n * (full_digest ? full_record_header_bytes : record_header_bytes);
  a.copies = with_copies ? n * object_size : 0;
  a.total = a.records + a.copies;
  a.mapping = std::min(n, k) * object_size;
  a.overall = a.total + a.mapping;
  return a;
}

memory_accounting memory_overhead(std::span<const std::uint64_t> sizes, bool with_copies,
                                  std::uint64_t k, bool full_digest)
{
  memory_accounting a;
  const auto n = static_cast<std::uint64_t>(sizes.size());
  a.records = n * (full_digest ? full_record_header_bytes : record_header_bytes);
  if (with_copies)
    a.copies = std::accumulate(sizes.begin(), sizes.end(), std::uint64_t{0});
  a.total = a.records + a.copies;

  std::vector<std::uint64_t> sorted(sizes.begin(), sizes.end());
  const auto take = static_cast<std::ptrdiff_t>(std::min(n, k));
  std::partial_sort(sorted.begin(), sorted.begin() + take, sorted.end(), std::greater<>{});
  a.mapping = std::accumulate(sorted.begin(), sorted.begin() + take, std::uint64_t{0});
  a.overall = a.total + a.mapping;
  return a;
}

std::uint64_t worst_case_latency_switches(std::uint64_t n, std::uint64_t k)
{
  if (k == 0)
    throw std::invalid_argument("subset size must be at least 1");
  if (n == 0)
    return 0;
  return (n - 1) / k;
}

monitor::monitor(monitor_options opts)
  : opts_(opts)
  , schedule_rng_(opts.schedule_seed)
{
  if (opts_.subset_size == 0)
    throw std::invalid_argument("monitor: subset size must be at least 1");
}

std::optional<std::size_t> monitor::index_of(std::uint32_t id) const noexcept
{
  for (std::size_t i = 0; i < records_.size(); ++i)
    if (records_[i].id == id)
      return i;
  return std::nullopt;
}

std::size_t monitor::register_batch(const guest_memory& mem, const page_map& map,
                                    const registration_batch& batch)
{
  if (sealed_)
    throw registration_closed("registration is closed once the kernel has booted");
  if (batch.entries.empty())
    throw registration_error("empty registration batch");

  std::unordered_set<std::uint32_t> seen;
  for (const auto& r : records_)
    seen.insert(r.id);

  struct staged_record
  {
    protection_record rec;
    std::vector<fragment> fragments;
  };
  std::vector<staged_record> staged;
  staged.reserve(batch.entries.size());
  for (const auto& e : batch.entries) {
    if (e.size == 0)
      throw registration_error("object " + std::to_string(e.id) + " has zero size");
    if (e.size > std::numeric_limits<std::uint32_t>::max())
      throw registration_error("object " + std::to_string(e.id) + " exceeds 32-bit size field");
    if (e.copy && e.copy->size() != e.size)
      throw registration_error("copy of object " + std::to_string(e.id) + " has wrong length");
    if (!seen.insert(e.id).second)
      throw registration_error("object " + std::to_string(e.id) + " registered twice");

    staged_record s;
    s.rec.id = e.id;
    s.rec.size = static_cast<std::uint32_t>(e.size);
    s.fragments = map.translate_range(e.vaddr, e.size);
    s.rec.digest = measure(mem, s.fragments, s.rec.size);
    if (e.copy)
      s.rec.flags |= record_flag::has_copy;
    staged.push_back(std::move(s));
  }

  for (std::size_t i = 0; i < staged.size(); ++i) {
    auto& s = staged[i];
    s.rec.fragment_first = static_cast<std::uint32_t>(fragment_arena_.size());
    s.rec.fragment_count = static_cast<std::uint32_t>(s.fragments.size());
    fragment_arena_.insert(fragment_arena_.end(), s.fragments.begin(), s.fragments.end());
    if (s.rec.has_copy()) {
      const auto& copy = *batch.entries[i].copy;
      s.rec.copy_offset = copy_arena_.size();
      copy_arena_.insert(copy_arena_.end(), copy.begin(), copy.end());
    }
    records_.push_back(s.rec);
  }
  return staged.size();
}

void monitor::set_schedule_seed(std::uint64_t seed)
{
  if (sealed_)
    throw lifecycle_error("schedule seed is fixed once registration is closed");
  opts_.schedule_seed = seed;
  schedule_rng_ = rng(seed);
}

void monitor::seal(guest_memory& mem, phys_addr eoo_flag_addr)
{
  if (sealed_)
    throw lifecycle_error("monitor already sealed");
  const std::uint8_t one = 1;
  mem.write(eoo_flag_addr, std::span(&one, 1));

  schedule_.resize(records_.size());
  std::iota(schedule_.begin(), schedule_.end(), std::uint32_t{0});
  if (opts_.ordering == ordering_mode::seeded_random_per_pass)
    reshuffle();
  cursor_ = 0;
  sealed_ = true;
}

void monitor::reshuffle()
{
  schedule_rng_.shuffle(std::span(schedule_));
}

std::size_t monitor::num_subsets() const noexcept
{
  const auto n = records_.size();
  return n == 0 ? 0 : (n + opts_.subset_size - 1) / opts_.subset_size;
}

std::span<const fragment> monitor::fragments_of(const protection_record& rec) const noexcept
{
  return std::span(fragment_arena_).subspan(rec.fragment_first, rec.fragment_count);
}

std::span<const std::uint8_t> monitor::copy_of(const protection_record& rec) const noexcept
{
  if (!rec.has_copy())
    return {};
  return std::span(copy_arena_).subspan(rec.copy_offset, rec.size);
}

record_digest monitor::measure(const guest_memory& mem, std::span<const fragment> frags,
                               std::uint32_t size)
{
  md5 h;
  for (const auto& f : frags)
    h.update(mem.view(f.phys, f.len));
  bytes_hashed_ += size;
  const digest d{h.finish()};
  record_digest out{d.stored(), std::nullopt};
  if (opts_.full_digest)
    out.full = d.full;
  return out;
}

check_result monitor::check_record(const guest_memory& mem, std::size_t index)
{
  if (!sealed_)
    throw lifecycle_error("checks start after registration is closed");
  auto& rec = records_.at(index);
  ++checks_;
  check_result r;
  r.expected = rec.digest;
  r.actual = measure(mem, fragments_of(rec), rec.size);
  r.clean = rec.digest.matches(r.actual);
  if (!r.clean)
    rec.flags |= record_flag::compromised_seen;
  return r;
}

repair_result monitor::repair(guest_memory& mem, std::size_t index)
{
  auto& rec = records_.at(index);
  if (!opts_.repair_enabled || !rec.has_copy())
    return repair_result::not_repairable;
  write_fragments(mem, fragments_of(rec), copy_of(rec));
  if (!rec.digest.matches(measure(mem, fragments_of(rec), rec.size)))
    throw error("record " + std::to_string(rec.id) + " still differs after restore");
  return repair_result::repaired;
}

check_report monitor::handle_vmexit(guest_memory& mem, const vm_event& event)
{
  check_report report;
  report.event_index = event.index;
  if (!sealed_ || event.kind != event_kind::mov_cr)
    return report;

  current_trap_ = traps_++;
  current_event_ = event.index;
  report.trap_index = current_trap_;
  if (records_.empty())
    return report;

  const auto k = opts_.subset_size;
  const auto begin = cursor_ * k;
  const auto end = std::min<std::size_t>(begin + k, schedule_.size());
  report.checked_ids.reserve(end - begin);

  for (auto pos = begin; pos < end; ++pos) {
    const auto idx = schedule_[pos];
    const auto id = records_[idx].id;
    report.checked_ids.push_back(id);
    const auto r = check_record(mem, idx);
    if (r.clean)
      continue;

    detection d{current_trap_, current_event_, id, r.expected, r.actual};
    detections_.push_back(d);
    report.detections.push_back(d);
    if (repair(mem, idx) == repair_result::repaired) {
      repairs_.push_back({current_trap_, current_event_, id});
      report.repairs.push_back(id);
    } else {
      report.not_repairable.push_back(id);
    }
  }

  if (++cursor_ == num_subsets()) {
    cursor_ = 0;
    ++passes_;
    if (opts_.ordering == ordering_mode::seeded_random_per_pass && opts_.reshuffle_each_pass)
      reshuffle();
  }
  return report;
}

memory_accounting monitor::accounting() const
{
  std::vector<std::uint64_t> sizes;
  sizes.reserve(records_.size());
  for (const auto& r : records_)
    sizes.push_back(r.size);
  auto a = memory_overhead(sizes, false, opts_.subset_size, opts_.full_digest);
  for (const auto& r : records_)
    a.copies += copy_of(r).size();
  a.total = a.records + a.copies;
  a.overall = a.total + a.mapping;
  return a;
}

} // namespace invarmon
