#include "invarmon/guest.hpp"

#include "invarmon/error.hpp"
#include "invarmon/monitor.hpp"
#include "invarmon/rng.hpp"

#include <algorithm>
#include <array>

namespace invarmon {

namespace {

constexpr std::uint64_t slot_bytes = 8;
constexpr std::uint64_t object_align = 8;
constexpr std::uint64_t interrupt_text_offset = 0x10'0000;

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }
std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return ceil_div(v, a) * a; }

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

bool uses_vmalloc(const object_group& g, std::uint64_t frame_size)
{
  return g.kind == object_kind::dynamic_heap && g.size > frame_size;
}

struct layout_plan
{
  std::uint64_t pgd_frames;
  std::uint64_t syscall_frames;
  std::uint64_t interrupt_frames;
  std::uint64_t static_frames;
  std::uint64_t slab_frames;
  std::uint64_t vmalloc_frames;

  std::uint64_t total() const
  {
    return 1 + pgd_frames + syscall_frames + interrupt_frames + static_frames + slab_frames +
           vmalloc_frames;
  }
};

layout_plan plan_layout(const guest_spec& spec)
{
  const auto fs = spec.frame_size;
  layout_plan p{};
  p.pgd_frames = spec.processes;
  p.syscall_frames = ceil_div(std::uint64_t{spec.syscall_entries} * slot_bytes, fs);
  p.interrupt_frames = ceil_div(std::uint64_t{spec.interrupt_vectors} * slot_bytes, fs);

  std::uint64_t static_bytes = 0;
  for (const auto& g : spec.objects) {
    if (g.count == 0)
      continue;
    if (g.kind != object_kind::dynamic_heap) {
      static_bytes += g.count * align_up(g.size, object_align);
    } else if (uses_vmalloc(g, fs)) {
      p.vmalloc_frames += g.count * ceil_div(g.size, fs);
    } else {
      const auto per_frame = fs / align_up(g.size, object_align);
      const auto per = per_frame == 0 ? 1 : per_frame;
      p.slab_frames += ceil_div(g.count, per);
    }
  }
  p.static_frames = ceil_div(static_bytes, fs);
  return p;
}

void validate(const guest_spec& spec)
{
  if (spec.frame_size < slot_bytes)
    throw std::invalid_argument("guest: frame_size must be at least 8 bytes");
  if (!(spec.switch_rate > 0.0))
    throw std::invalid_argument("guest: switch_rate must be positive");
  if (spec.syscall_entries == 0 || spec.interrupt_vectors == 0)
    throw std::invalid_argument("guest: syscall and interrupt tables need at least one slot");
  if (spec.setuid_index >= spec.syscall_entries)
    throw std::invalid_argument("guest: setuid_index outside the syscall table");
  if (spec.processes < 2)
    throw std::invalid_argument("guest: at least two processes are needed for switching");
  for (const auto& g : spec.objects)
    if (g.count != 0 && g.size == 0)
      throw std::invalid_argument("guest: object size must be at least 1 byte");
}

} // namespace

std::string_view to_string(object_kind k) noexcept
{
  switch (k) {
    case object_kind::static_hardcoded: return "static_hardcoded";
    case object_kind::static_mapped: return "static_mapped";
    case object_kind::dynamic_heap: return "dynamic_heap";
  }
  return "?";
}

std::optional<object_kind> parse_object_kind(std::string_view s) noexcept
{
  for (auto k : {object_kind::static_hardcoded, object_kind::static_mapped, object_kind::dynamic_heap})
    if (to_string(k) == s)
      return k;
  return std::nullopt;
}

std::string_view to_string(control_register r) noexcept
{
  switch (r) {
    case control_register::cr0: return "cr0";
    case control_register::cr2: return "cr2";
    case control_register::cr3: return "cr3";
    case control_register::cr4: return "cr4";
  }
  return "?";
}

std::string_view to_string(event_kind k) noexcept
{
  switch (k) {
    case event_kind::mov_cr: return "mov_cr";
    case event_kind::hypercall: return "hypercall";
    case event_kind::tick: return "tick";
  }
  return "?";
}

guest_state::guest_state(const guest_spec& spec, std::uint64_t num_frames)
  : spec_(spec)
  , memory_(num_frames, spec.frame_size)
  , pages_(num_frames, spec.frame_size)
{}

guest_state guest_state::boot(const guest_spec& spec)
{
  validate(spec);
  const auto plan = plan_layout(spec);
  const auto needed = plan.total();
  if (spec.num_frames != 0 && spec.num_frames < needed)
    throw allocation_error("guest population needs " + std::to_string(needed) +
                           " frames, memory has " + std::to_string(spec.num_frames));

  guest_state g(spec, spec.num_frames != 0 ? spec.num_frames : needed);
  const auto fs = spec.frame_size;
  rng content_rng(spec.seed);

  std::uint64_t next_frame = 0;
  auto take_frames = [&](std::uint64_t n) {
    const auto first = next_frame;
    next_frame += n;
    return first;
  };
  auto direct = [](std::uint64_t phys) { return virt_addr{direct_map_base + phys}; };

  const auto shared_frame = take_frames(1);
  g.eoo_flag_addr_ = phys_addr{shared_frame * fs};
  g.pgd_base_frame_ = take_frames(plan.pgd_frames);
  const auto syscall_frame = take_frames(plan.syscall_frames);
  const auto interrupt_frame = take_frames(plan.interrupt_frames);
  const auto static_frame = take_frames(plan.static_frames);

  // Direct map of all RAM; the syscall table may sit on read-only pages.
  for (std::uint64_t f = 0; f < g.memory_.num_frames(); ++f) {
    const bool table_page = f >= syscall_frame && f < syscall_frame + plan.syscall_frames;
    g.pages_.map_page(direct(f * fs).value / fs, f, !(table_page && spec.readonly_syscall_table));
  }

  std::vector<kernel_object> objects;
  auto add_object = [&](object_kind kind, std::string name, virt_addr va, std::uint64_t size) {
    kernel_object obj;
    obj.id = static_cast<std::uint32_t>(objects.size());
    obj.kind = kind;
    obj.name = std::move(name);
    obj.vaddr = va;
    obj.size = size;
    objects.push_back(std::move(obj));
    return &objects.back();
  };

  {
    std::vector<std::uint8_t> table;
    table.reserve(std::size_t{spec.syscall_entries} * slot_bytes);
    for (std::uint32_t nr = 0; nr < spec.syscall_entries; ++nr) {
      const auto e = le64(kernel_text_base + std::uint64_t{nr} * 0x40);
      table.insert(table.end(), e.begin(), e.end());
    }
    auto* obj = add_object(object_kind::static_mapped, "sys_call_table", direct(syscall_frame * fs),
                           table.size());
    obj->initial_content = std::move(table);
  }
  {
    std::vector<std::uint8_t> table;
    table.reserve(std::size_t{spec.interrupt_vectors} * slot_bytes);
    for (std::uint32_t v = 0; v < spec.interrupt_vectors; ++v) {
      const auto e = le64(kernel_text_base + interrupt_text_offset + std::uint64_t{v} * 0x20);
      table.insert(table.end(), e.begin(), e.end());
    }
    auto* obj = add_object(object_kind::static_hardcoded, "idt_table",
                           direct(interrupt_frame * fs), table.size());
    obj->initial_content = std::move(table);
  }

  std::uint64_t static_cursor = static_frame * fs;
  std::uint64_t vmalloc_page = vmalloc_area_base / fs;
  for (const auto& grp : spec.objects) {
    const bool vm = uses_vmalloc(grp, fs);
    const auto stride = align_up(grp.size, object_align);
    const auto per_frame = std::max<std::uint64_t>(1, fs / stride);
    std::uint64_t slab_frame = 0;
    for (std::uint64_t i = 0; i < grp.count; ++i) {
      virt_addr va;
      if (grp.kind != object_kind::dynamic_heap) {
        va = direct(static_cursor);
        static_cursor += stride;
      } else if (vm) {
        const auto n = ceil_div(grp.size, fs);
        std::vector<std::uint64_t> frames(n);
        for (auto& f : frames)
          f = take_frames(1);
        content_rng.shuffle(std::span(frames));
        va = virt_addr{vmalloc_page * fs};
        for (auto f : frames)
          g.pages_.map_page(vmalloc_page++, f);
        ++vmalloc_page; // guard page
      } else {
        if (i % per_frame == 0)
          slab_frame = take_frames(1);
        va = direct(slab_frame * fs + (i % per_frame) * stride);
      }
      auto* obj = add_object(grp.kind, std::string(to_string(grp.kind)) + "#" +
                                           std::to_string(objects.size()),
                             va, grp.size);
      obj->initial_content.resize(grp.size);
      content_rng.fill(obj->initial_content);
    }
  }

  for (const auto& obj : objects)
    write_fragments(g.memory_, g.pages_.translate_range(obj.vaddr, obj.size), obj.initial_content);

  g.objects_ = std::make_shared<const std::vector<kernel_object>>(std::move(objects));
  g.cr3_ = g.process_pgd(0);
  return g;
}

const kernel_object& guest_state::object(std::uint32_t id) const
{
  if (id >= objects_->size())
    throw std::out_of_range("no kernel object with id " + std::to_string(id));
  return (*objects_)[id];
}

registration_batch guest_state::trusted_module_collect(bool with_copies) const
{
  if (!module_loaded_)
    throw lifecycle_error("trusted module is unloaded once the kernel has booted");
  registration_batch batch;
  batch.entries.reserve(objects_->size());
  for (const auto& obj : *objects_) {
    registration_entry e{obj.id, obj.vaddr, obj.size, std::nullopt};
    if (with_copies)
      e.copy = obj.initial_content;
    batch.entries.push_back(std::move(e));
  }
  return batch;
}

void guest_state::raise_hypercall(monitor& mon, const registration_batch& batch, bool final)
{
  mon.register_batch(memory_, pages_, batch);
  if (final)
    complete_boot(mon);
}

void guest_state::complete_boot(monitor& mon)
{
  if (boot_complete_)
    throw lifecycle_error("boot already completed");
  mon.seal(memory_, eoo_flag_addr_);
  if (memory_.read(eoo_flag_addr_, 1)[0] != 1)
    throw lifecycle_error("monitor did not acknowledge end of registration");
  module_loaded_ = false;
  boot_complete_ = true;
}

std::uint64_t guest_state::process_pgd(std::uint32_t pid) const noexcept
{
  return (pgd_base_frame_ + pid) * spec_.frame_size;
}

vm_event guest_state::process_switch()
{
  vm_event ev;
  ev.index = steps_++;
  if (frozen_) {
    ev.kind = event_kind::tick;
    return ev;
  }
  current_pid_ = (current_pid_ + 1) % spec_.processes;
  cr3_ = process_pgd(current_pid_);
  ++switches_;
  ev.kind = event_kind::mov_cr;
  ev.reg = control_register::cr3;
  ev.value = cr3_;
  return ev;
}

vm_event guest_state::control_register_write(control_register reg, std::uint64_t value)
{
  vm_event ev;
  ev.index = steps_++;
  if (frozen_) {
    ev.kind = event_kind::tick;
    return ev;
  }
  ev.kind = event_kind::mov_cr;
  ev.reg = reg;
  ev.value = value;
  if (reg == control_register::cr3)
    cr3_ = value;
  return ev;
}

virt_addr guest_state::syscall_slot(std::uint32_t nr) const
{
  if (nr >= spec_.syscall_entries)
    throw std::out_of_range("syscall " + std::to_string(nr) + " outside the table");
  return syscall_table().vaddr + std::uint64_t{nr} * slot_bytes;
}

virt_addr guest_state::interrupt_slot(std::uint32_t vector) const
{
  if (vector >= spec_.interrupt_vectors)
    throw std::out_of_range("interrupt vector " + std::to_string(vector) + " outside the table");
  return interrupt_table().vaddr + std::uint64_t{vector} * slot_bytes;
}

std::uint64_t guest_state::original_syscall_handler(std::uint32_t nr) const
{
  const auto off = std::uint64_t{nr} * slot_bytes;
  if (nr >= spec_.syscall_entries)
    throw std::out_of_range("syscall " + std::to_string(nr) + " outside the table");
  return load_le64(std::span(syscall_table().initial_content).subspan(off, slot_bytes));
}

std::uint64_t guest_state::original_interrupt_handler(std::uint32_t vector) const
{
  const auto off = std::uint64_t{vector} * slot_bytes;
  if (vector >= spec_.interrupt_vectors)
    throw std::out_of_range("interrupt vector " + std::to_string(vector) + " outside the table");
  return load_le64(std::span(interrupt_table().initial_content).subspan(off, slot_bytes));
}

dispatch_trace guest_state::invoke_syscall(std::uint32_t nr, std::uint64_t arg) const
{
  const auto raw = read_virtual(memory_, pages_, syscall_slot(nr), slot_bytes);
  dispatch_trace t;
  t.nr = nr;
  t.arg = arg;
  t.handler = load_le64(raw);
  t.kind = t.handler == original_syscall_handler(nr) ? dispatch_kind::original
                                                     : dispatch_kind::hijacked;
  return t;
}

std::uint64_t guest_state::interrupt_handler(std::uint32_t vector) const
{
  return load_le64(read_virtual(memory_, pages_, interrupt_slot(vector), slot_bytes));
}

virt_addr guest_state::map_writable_alias(virt_addr va)
{
  const auto fs = spec_.frame_size;
  const auto pa = pages_.translate(va);
  const auto vpage = alias_area_base / fs + next_alias_page_++;
  pages_.map_page(vpage, pa.value / fs, true);
  return virt_addr{vpage * fs + va.value % fs};
}

} // namespace invarmon
