#include "invarmon/harness.hpp"

#include "invarmon/config.hpp"
#include "invarmon/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <thread>

#ifndef INVARMON_VERSION_STRING
#define INVARMON_VERSION_STRING "0.0.0"
#endif

namespace invarmon {

namespace {

std::string path_at(std::string_view base, std::size_t i, std::string_view field = {})
{
  std::string p = std::string(base) + "[" + std::to_string(i) + "]";
  if (!field.empty())
    p += "." + std::string(field);
  return p;
}

std::uint64_t population_count(const guest_spec& g)
{
  std::uint64_t n = 2;
  for (const auto& grp : g.objects)
    n += grp.count;
  return n;
}

std::uint64_t object_size(const guest_spec& g, std::uint64_t id)
{
  if (id == guest_state::syscall_table_id)
    return std::uint64_t{g.syscall_entries} * 8;
  if (id == guest_state::interrupt_table_id)
    return std::uint64_t{g.interrupt_vectors} * 8;
  std::uint64_t first = 2;
  for (const auto& grp : g.objects) {
    if (id < first + grp.count)
      return grp.size;
    first += grp.count;
  }
  return 0;
}

std::uint64_t mix64(std::uint64_t x) noexcept
{
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

bool modifies_memory(attack_kind k) noexcept
{
  return k != attack_kind::scheduler_freeze;
}

std::string hex64(std::uint64_t v)
{
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

} // namespace

std::string_view tool_version() noexcept
{
  return INVARMON_VERSION_STRING;
}

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial) noexcept
{
  return mix64(seed ^ mix64(trial));
}

void validate(const scenario_config& cfg)
{
  const auto& g = cfg.guest;
  if (g.frame_size < 8)
    throw config_error("guest.frame_size", "must be at least 8 bytes");
  if (!(g.switch_rate > 0.0) || !std::isfinite(g.switch_rate))
    throw config_error("guest.switch_rate", "must be a positive number");
  if (g.syscall_entries == 0)
    throw config_error("guest.syscall_entries", "must be at least 1");
  if (g.setuid_index >= g.syscall_entries)
    throw config_error("guest.setuid_index", "must index into the syscall table");
  if (g.interrupt_vectors == 0)
    throw config_error("guest.interrupt_vectors", "must be at least 1");
  if (g.processes < 2)
    throw config_error("guest.processes", "must be at least 2");
  for (std::size_t i = 0; i < g.objects.size(); ++i) {
    if (g.objects[i].size == 0)
      throw config_error(path_at("guest.objects", i, "size"), "must be at least 1");
    if (g.objects[i].size > std::numeric_limits<std::uint32_t>::max())
      throw config_error(path_at("guest.objects", i, "size"), "must fit in 32 bits");
  }

  const auto& m = cfg.monitor;
  if (m.subset_size == 0)
    throw config_error("monitor.subset_size", "must be at least 1");
  if (m.hypervisor_budget == 0)
    throw config_error("monitor.hypervisor_budget", "must be at least 1 byte");
  if (m.reshuffle_each_pass && m.ordering != ordering_mode::seeded_random_per_pass)
    throw config_error("monitor.reshuffle_each_pass", "only meaningful with seeded_random_per_pass");

  const auto& r = cfg.run;
  const auto n = population_count(g);
  if (r.events == 0)
    throw config_error("run.events", "must be at least 1");
  if (r.hypercall_batches == 0 || r.hypercall_batches > n)
    throw config_error("run.hypercall_batches", "must be between 1 and the number of objects");
  std::set<std::uint64_t> cr_steps;
  for (std::size_t i = 0; i < r.control_register_writes.size(); ++i) {
    const auto& w = r.control_register_writes[i];
    if (w.at >= r.events)
      throw config_error(path_at("run.control_register_writes", i, "at"), "beyond the run");
    if (!cr_steps.insert(w.at).second)
      throw config_error(path_at("run.control_register_writes", i, "at"), "duplicate step");
  }

  for (std::size_t i = 0; i < cfg.attacks.size(); ++i) {
    const auto& a = cfg.attacks[i];
    if (a.trigger_event >= r.events)
      throw config_error(path_at("attacks", i, "trigger"), "beyond the run");
    switch (a.kind) {
      case attack_kind::syscall_hook:
        if (a.slot >= g.syscall_entries)
          throw config_error(path_at("attacks", i, "slot"), "outside the syscall table");
        break;
      case attack_kind::interrupt_hook:
        if (a.slot >= g.interrupt_vectors)
          throw config_error(path_at("attacks", i, "slot"), "outside the interrupt table");
        break;
      case attack_kind::racing:
        if (a.hold_events == 0)
          throw config_error(path_at("attacks", i, "hold_events"), "must be at least 1");
        [[fallthrough]];
      case attack_kind::fnptr_hijack: {
        if (a.object_id >= n)
          throw config_error(path_at("attacks", i, "object_id"), "no such object");
        const auto size = object_size(g, a.object_id);
        if (size < 8 || a.offset > size - 8)
          throw config_error(path_at("attacks", i, "offset"), "pointer does not fit in the object");
        break;
      }
      case attack_kind::scheduler_freeze:
        if (a.freeze_events && *a.freeze_events == 0)
          throw config_error(path_at("attacks", i, "freeze_events"), "must be at least 1");
        break;
    }
  }
}

std::vector<std::uint64_t> population_sizes(const guest_spec& spec)
{
  std::vector<std::uint64_t> sizes;
  sizes.reserve(population_count(spec));
  sizes.push_back(std::uint64_t{spec.syscall_entries} * 8);
  sizes.push_back(std::uint64_t{spec.interrupt_vectors} * 8);
  for (const auto& g : spec.objects)
    sizes.insert(sizes.end(), g.count, g.size);
  return sizes;
}

simulation::simulation(scenario_config cfg)
  : cfg_(std::move(cfg))
  , monitor_([this] {
    validate(cfg_);
    monitor_options o;
    o.subset_size = cfg_.monitor.subset_size;
    o.ordering = cfg_.monitor.ordering;
    o.reshuffle_each_pass = cfg_.monitor.reshuffle_each_pass;
    o.repair_enabled = cfg_.monitor.repair;
    o.full_digest = cfg_.monitor.full_digest;
    o.schedule_seed = trial_seed(cfg_.seed, 0);
    return o;
  }())
{
  cfg_.guest.seed = cfg_.seed;
  for (std::size_t i = 0; i < cfg_.attacks.size(); ++i) {
    pending_attack p;
    p.script = cfg_.attacks[i];
    p.rogue = p.script.rogue.value_or(default_rogue_address(i));
    if (p.script.kind == attack_kind::racing)
      p.racer.emplace(p.script.object_id, p.script.offset, p.rogue, p.script.hold_events);
    attacks_.push_back(std::move(p));

    attack_outcome o;
    o.kind = cfg_.attacks[i].kind;
    outcomes_.push_back(o);
  }
}

void simulation::log(std::string_view line)
{
  log_hash_.update(line);
  log_hash_.update("\n");
  ++log_entries_;
}

void simulation::boot()
{
  if (guest_)
    throw lifecycle_error("simulation already booted");
  guest_.emplace(guest_state::boot(cfg_.guest));
  for (std::size_t i = 0; i < attacks_.size(); ++i)
    outcomes_[i].target_id = attack_target(*guest_, attacks_[i].script);

  const auto image = md5::hash(guest_->memory().bytes());
  log("boot objects=" + std::to_string(guest_->objects().size()) +
      " frames=" + std::to_string(guest_->memory().num_frames()) + " image=" + to_hex(image));

  auto batch = guest_->trusted_module_collect(cfg_.monitor.with_copies);
  const auto total = batch.entries.size();
  const auto batches = cfg_.run.hypercall_batches;
  std::size_t begin = 0;
  for (std::uint32_t b = 0; b < batches; ++b) {
    const auto end = total * (b + 1) / batches;
    registration_batch part;
    part.entries.assign(std::make_move_iterator(batch.entries.begin() + static_cast<std::ptrdiff_t>(begin)),
                        std::make_move_iterator(batch.entries.begin() + static_cast<std::ptrdiff_t>(end)));
    guest_->raise_hypercall(monitor_, part, false);
    log("hypercall batch=" + std::to_string(b) + " entries=" + std::to_string(part.entries.size()));
    begin = end;
  }
}

void simulation::set_schedule_seed(std::uint64_t seed)
{
  monitor_.set_schedule_seed(seed);
}

void simulation::seal()
{
  if (!guest_)
    boot();
  guest_->complete_boot(monitor_);
  std::string line = "seal records=" + std::to_string(monitor_.records().size()) +
                     " subsets=" + std::to_string(monitor_.num_subsets()) + " schedule=";
  std::vector<std::uint8_t> packed;
  packed.reserve(monitor_.schedule().size() * 4);
  for (auto idx : monitor_.schedule())
    for (int b = 0; b < 4; ++b)
      packed.push_back(static_cast<std::uint8_t>(idx >> (8 * b)));
  line += to_hex(md5::hash(packed));
  log(line);
}

void simulation::reschedule_attack(std::size_t i, std::uint64_t trigger_event)
{
  if (step_ != 0 || i >= attacks_.size())
    throw lifecycle_error("attacks can only be rescheduled before the event loop starts");
  attacks_[i].script.trigger_event = trigger_event;
  cfg_.attacks[i].trigger_event = trigger_event;
}

void simulation::set_run_length(std::uint64_t events)
{
  if (step_ != 0)
    throw lifecycle_error("run length is fixed once the event loop starts");
  cfg_.run.events = events;
}

void simulation::apply_attack(std::size_t i)
{
  auto& p = attacks_[i];
  auto& o = outcomes_[i];
  o.applied_at = step_;
  p.traps_at_apply = monitor_.traps_handled();
  const auto& s = p.script;
  const auto where = path_at("attacks", i);
  try {
    switch (s.kind) {
      case attack_kind::syscall_hook: hook_syscall(*guest_, s.slot, p.rogue, s.via_alias); break;
      case attack_kind::interrupt_hook: hook_interrupt(*guest_, s.slot, p.rogue, s.via_alias); break;
      case attack_kind::fnptr_hijack: hijack_fnptr(*guest_, s.object_id, s.offset, p.rogue); break;
      case attack_kind::racing: p.racer->begin(*guest_); break;
      case attack_kind::scheduler_freeze:
        freeze_scheduler(*guest_);
        ever_frozen_ = true;
        break;
    }
  } catch (const attack_error& e) {
    throw config_error(where, e.what());
  }
  std::string line = "attack " + std::to_string(i) + " " + std::string(to_string(s.kind)) +
                     " step=" + std::to_string(step_);
  if (o.target_id)
    line += " target=" + std::to_string(*o.target_id) + " rogue=" + hex64(p.rogue);
  log(line);
}

void simulation::finish_attack(std::size_t i)
{
  auto& p = attacks_[i];
  if (p.script.kind == attack_kind::racing) {
    p.racer->end(*guest_);
    outcomes_[i].restored_at = step_;
    log("restore " + std::to_string(i) + " step=" + std::to_string(step_));
  } else if (p.script.kind == attack_kind::scheduler_freeze) {
    unfreeze_scheduler(*guest_);
    outcomes_[i].restored_at = step_;
    log("unfreeze " + std::to_string(i) + " step=" + std::to_string(step_));
  }
}

void simulation::observe(const check_report& r)
{
  for (const auto& d : r.detections) {
    log("detect trap=" + std::to_string(d.trap_index) + " id=" + std::to_string(d.id) +
        " expected=" + d.expected.to_string() + " actual=" + d.actual.to_string());
    for (std::size_t i = 0; i < attacks_.size(); ++i) {
      auto& o = outcomes_[i];
      const bool applied = attacks_[i].script.trigger_event <= step_;
      if (!applied || o.detected_at || o.target_id != d.id)
        continue;
      if (o.restored_at && *o.restored_at <= step_)
        continue;
      o.detected_at = d.event_index;
      o.latency_switches = d.trap_index - attacks_[i].traps_at_apply;
      o.latency_seconds = static_cast<double>(*o.latency_switches) / cfg_.guest.switch_rate;
      o.escaped = false;
    }
  }
  for (auto id : r.repairs) {
    log("repair trap=" + std::to_string(*r.trap_index) + " id=" + std::to_string(id));
    for (auto& o : outcomes_)
      if (o.target_id == id && o.detected_at && !o.repaired_at)
        o.repaired_at = r.event_index;
  }
  for (auto id : r.not_repairable)
    log("unrepaired trap=" + std::to_string(*r.trap_index) + " id=" + std::to_string(id));
}

bool simulation::done() const noexcept
{
  return step_ >= cfg_.run.events;
}

void simulation::step()
{
  if (!monitor_.sealed())
    seal();
  if (done())
    throw lifecycle_error("run already finished");

  for (std::size_t i = 0; i < attacks_.size(); ++i) {
    const auto& s = attacks_[i].script;
    const auto& o = outcomes_[i];
    if (s.trigger_event >= step_ || o.restored_at)
      continue;
    if (s.kind == attack_kind::racing && step_ == s.trigger_event + s.hold_events)
      finish_attack(i);
    else if (s.kind == attack_kind::scheduler_freeze && s.freeze_events &&
             step_ == s.trigger_event + *s.freeze_events)
      finish_attack(i);
  }
  for (std::size_t i = 0; i < attacks_.size(); ++i)
    if (attacks_[i].script.trigger_event == step_)
      apply_attack(i);

  vm_event ev;
  auto w = std::find_if(cfg_.run.control_register_writes.begin(),
                        cfg_.run.control_register_writes.end(),
                        [&](const auto& cw) { return cw.at == step_; });
  if (w != cfg_.run.control_register_writes.end())
    ev = guest_->control_register_write(w->reg, step_ | 0x10);
  else
    ev = guest_->process_switch();

  std::string line = "event " + std::to_string(ev.index) + " " + std::string(to_string(ev.kind));
  if (ev.kind == event_kind::mov_cr)
    line += " " + std::string(to_string(ev.reg)) + "=" + hex64(ev.value);
  log(line);

  observe(monitor_.handle_vmexit(guest_->memory(), ev));
  ++step_;
}

void simulation::run_to_end()
{
  while (!done())
    step();
}

scenario_report simulation::report() const
{
  scenario_report r;
  r.config_hash = config_hash(cfg_);
  r.seed = cfg_.seed;
  r.records = monitor_.records().size();
  r.subset_size = cfg_.monitor.subset_size;
  r.events = step_;
  r.traps = monitor_.traps_handled();
  r.checks_performed = monitor_.checks_performed();
  r.bytes_hashed = monitor_.bytes_hashed();
  r.worst_case_latency_switches = worst_case_latency_switches(r.records, r.subset_size);
  r.switch_rate = cfg_.guest.switch_rate;
  r.simulated_seconds = guest_ ? guest_->clock_seconds() : 0.0;
  r.outcomes = outcomes_;
  r.detections.assign(monitor_.detections().begin(), monitor_.detections().end());
  r.repairs.assign(monitor_.repairs().begin(), monitor_.repairs().end());
  r.accounting = monitor_.accounting();
  r.hypervisor_budget = cfg_.monitor.hypervisor_budget;
  r.overhead_percent = 100.0 * static_cast<double>(r.accounting.overall) /
                       static_cast<double>(r.hypervisor_budget);
  r.frozen = ever_frozen_;
  r.log_entries = log_entries_;
  md5 snapshot = log_hash_;
  r.event_log_digest = to_hex(snapshot.finish());

  // Bytes hashed by traps, excluding registration-time digests.
  std::uint64_t registration_bytes = 0;
  for (const auto& rec : monitor_.records())
    registration_bytes += rec.size;
  if (r.traps > 0 && r.bytes_hashed >= registration_bytes)
    r.bytes_hashed_per_trap = (r.bytes_hashed - registration_bytes) / r.traps;

  for (std::size_t i = 0; i < outcomes_.size(); ++i) {
    const auto& o = outcomes_[i];
    if (!modifies_memory(o.kind))
      continue;
    const auto name = "attack " + std::to_string(i) + " (" + std::string(to_string(o.kind)) + ")";
    if (cfg_.expect.must_detect && !o.detected_at)
      r.violations.push_back(name + " escaped detection");
    if (cfg_.expect.max_latency_switches && o.latency_switches &&
        *o.latency_switches > *cfg_.expect.max_latency_switches)
      r.violations.push_back(name + " detected after " + std::to_string(*o.latency_switches) +
                             " switches, limit " +
                             std::to_string(*cfg_.expect.max_latency_switches));
  }
  if (cfg_.expect.no_detections && !r.detections.empty())
    r.violations.push_back(std::to_string(r.detections.size()) + " detections in a run expected clean");
  return r;
}

scenario_report run(const scenario_config& cfg)
{
  simulation sim(cfg);
  sim.boot();
  sim.seal();
  sim.run_to_end();
  return sim.report();
}

latency_histogram latency_distribution(const scenario_config& cfg, std::uint64_t trials,
                                       attack_phase phase, unsigned threads)
{
  if (trials == 0)
    throw config_error("trials", "must be at least 1");
  auto it = std::find_if(cfg.attacks.begin(), cfg.attacks.end(),
                         [](const auto& a) { return modifies_memory(a.kind); });
  if (it == cfg.attacks.end())
    throw config_error("attacks", "latency distribution needs an attack that modifies memory");

  scenario_config base_cfg = cfg;
  base_cfg.attacks = {*it};
  base_cfg.attacks[0].trigger_event = 0;
  base_cfg.run.control_register_writes.clear();
  base_cfg.expect = {};
  const auto n = population_count(base_cfg.guest);
  const auto subsets = (n + base_cfg.monitor.subset_size - 1) / base_cfg.monitor.subset_size;
  if (phase.mode == attack_phase::kind::fixed && phase.step >= subsets * 64)
    throw config_error("phase", "fixed phase too far from the first pass");
  const auto passes = base_cfg.monitor.reshuffle_each_pass ? 2 : 1;
  const auto max_trigger = phase.mode == attack_phase::kind::fixed ? phase.step : subsets - 1;
  base_cfg.run.events = max_trigger + passes * subsets + 1;

  simulation booted(base_cfg);
  booted.boot();

  std::vector<std::optional<std::uint64_t>> latencies(trials);
  auto run_trial = [&](std::uint64_t t) {
    const auto seed = trial_seed(cfg.seed, t);
    std::uint64_t trigger = phase.step;
    if (phase.mode == attack_phase::kind::uniform) {
      rng r(seed);
      trigger = r.below(subsets);
    }
    simulation sim = booted;
    sim.set_schedule_seed(seed);
    sim.reschedule_attack(0, trigger);
    sim.set_run_length(trigger + passes * subsets + 1);
    sim.seal();
    while (!sim.done()) {
      sim.step();
      const auto& o = sim.outcomes()[0];
      if (o.detected_at || o.restored_at)
        break;
    }
    latencies[t] = sim.outcomes()[0].latency_switches;
  };

  if (threads == 0)
    threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::uint64_t>(threads, trials));
  if (threads <= 1) {
    for (std::uint64_t t = 0; t < trials; ++t)
      run_trial(t);
  } else {
    std::vector<std::jthread> workers;
    for (unsigned w = 0; w < threads; ++w)
      workers.emplace_back([&, w] {
        for (std::uint64_t t = w; t < trials; t += threads)
          run_trial(t);
      });
  }

  latency_histogram h;
  h.trials = trials;
  double sum = 0;
  for (const auto& l : latencies) {
    if (!l) {
      ++h.escaped;
      continue;
    }
    ++h.detected;
    ++h.counts[*l];
    h.max_latency = std::max(h.max_latency, *l);
    sum += static_cast<double>(*l);
  }
  h.mean_latency = h.detected == 0 ? 0.0 : sum / static_cast<double>(h.detected);
  return h;
}

overhead_summary_result overhead_summary(const scenario_config& cfg)
{
  overhead_summary_result out;
  const auto sizes = population_sizes(cfg.guest);
  out.accounting = memory_overhead(sizes, cfg.monitor.with_copies, cfg.monitor.subset_size,
                                   cfg.monitor.full_digest);
  out.budget = cfg.monitor.hypervisor_budget;
  out.percent = 100.0 * static_cast<double>(out.accounting.overall) / static_cast<double>(out.budget);

  const auto& a = out.accounting;
  auto line = [](std::string_view label, std::uint64_t bytes) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%-10s %12llu B  %8llu KiB\n", std::string(label).c_str(),
                  static_cast<unsigned long long>(bytes),
                  static_cast<unsigned long long>(memory_accounting::kib(bytes)));
    return std::string(buf);
  };
  out.text += line("records", a.records);
  out.text += line("copies", a.copies);
  out.text += line("total", a.total);
  out.text += line("mapping", a.mapping);
  out.text += line("overall", a.overall);
  char buf[128];
  std::snprintf(buf, sizeof buf, "budget     %12llu B  overhead %.2f%%\n",
                static_cast<unsigned long long>(out.budget), out.percent);
  out.text += buf;
  return out;
}

scenario_config reference_setuid_scenario()
{
  scenario_config cfg;
  cfg.seed = 2011;
  cfg.guest.switch_rate = 25.0;
  cfg.guest.objects = {{object_kind::dynamic_heap, 14'998, 128}};
  cfg.monitor.subset_size = 100;
  cfg.monitor.ordering = ordering_mode::round_robin;
  cfg.monitor.repair = true;
  cfg.monitor.with_copies = true;

  // The syscall table is record 0, scanned at event 0 and again at event 150.
  attack_script hook;
  hook.kind = attack_kind::syscall_hook;
  hook.trigger_event = 1;
  hook.slot = cfg.guest.setuid_index;
  hook.via_alias = true;
  cfg.attacks = {hook};
  cfg.run.events = 200;
  cfg.expect.must_detect = true;
  cfg.expect.max_latency_switches = 149;
  return cfg;
}

} // namespace invarmon
