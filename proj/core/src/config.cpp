#include "invarmon/config.hpp"

#include "invarmon/error.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <limits>
#include <sstream>

namespace invarmon {

using nlohmann::json;

namespace {

std::string join(const std::string& path, std::string_view key)
{
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string index_path(const std::string& path, std::size_t i)
{
  return path + "[" + std::to_string(i) + "]";
}

void require_object(const json& j, const std::string& path)
{
  if (!j.is_object())
    throw config_error(path, "expected an object");
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed)
{
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed)
      ok = ok || key == a;
    if (!ok)
      throw config_error(join(path, key), "unknown field");
  }
}

std::uint64_t parse_u64_value(const json& v, const std::string& path)
{
  if (v.is_number_unsigned())
    return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const auto s = v.get<std::int64_t>();
    if (s < 0)
      throw config_error(path, "must be non-negative");
    return static_cast<std::uint64_t>(s);
  }
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    std::size_t used = 0;
    try {
      const auto value = std::stoull(s, &used, 0);
      if (used == s.size() && !s.empty() && s[0] != '-')
        return value;
    } catch (const std::exception&) {
    }
    throw config_error(path, "not an unsigned integer: \"" + s + "\"");
  }
  throw config_error(path, "expected an unsigned integer");
}

template <typename T>
void read_uint(const json& j, const std::string& path, std::string_view key, T& out)
{
  auto it = j.find(std::string(key));
  if (it == j.end())
    return;
  const auto p = join(path, key);
  if (it->is_string())
    throw config_error(p, "expected a number");
  const auto v = parse_u64_value(*it, p);
  if (v > std::numeric_limits<T>::max())
    throw config_error(p, "value too large");
  out = static_cast<T>(v);
}

void read_bool(const json& j, const std::string& path, std::string_view key, bool& out)
{
  auto it = j.find(std::string(key));
  if (it == j.end())
    return;
  if (!it->is_boolean())
    throw config_error(join(path, key), "expected true or false");
  out = it->get<bool>();
}

void read_double(const json& j, const std::string& path, std::string_view key, double& out)
{
  auto it = j.find(std::string(key));
  if (it == j.end())
    return;
  if (!it->is_number())
    throw config_error(join(path, key), "expected a number");
  out = it->get<double>();
}

std::string read_string(const json& j, const std::string& path, std::string_view key)
{
  auto it = j.find(std::string(key));
  if (it == j.end())
    throw config_error(join(path, key), "required field missing");
  if (!it->is_string())
    throw config_error(join(path, key), "expected a string");
  return it->get<std::string>();
}

std::optional<control_register> parse_register(std::string_view s)
{
  for (auto r : {control_register::cr0, control_register::cr2, control_register::cr3,
                 control_register::cr4})
    if (to_string(r) == s)
      return r;
  return std::nullopt;
}

void parse_guest(const json& j, guest_spec& g)
{
  const std::string path = "guest";
  require_object(j, path);
  reject_unknown(j, path, {"frame_size", "num_frames", "switch_rate", "syscall_entries",
                           "setuid_index", "interrupt_vectors", "readonly_syscall_table",
                           "processes", "objects"});
  read_uint(j, path, "frame_size", g.frame_size);
  read_uint(j, path, "num_frames", g.num_frames);
  read_double(j, path, "switch_rate", g.switch_rate);
  read_uint(j, path, "syscall_entries", g.syscall_entries);
  read_uint(j, path, "setuid_index", g.setuid_index);
  read_uint(j, path, "interrupt_vectors", g.interrupt_vectors);
  read_bool(j, path, "readonly_syscall_table", g.readonly_syscall_table);
  read_uint(j, path, "processes", g.processes);

  if (auto it = j.find("objects"); it != j.end()) {
    const auto opath = join(path, "objects");
    if (!it->is_array())
      throw config_error(opath, "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& o = (*it)[i];
      const auto p = index_path(opath, i);
      require_object(o, p);
      reject_unknown(o, p, {"kind", "count", "size"});
      object_group grp;
      const auto kind = read_string(o, p, "kind");
      auto k = parse_object_kind(kind);
      if (!k)
        throw config_error(join(p, "kind"), "unknown object kind \"" + kind + "\"");
      grp.kind = *k;
      if (!o.contains("count") || !o.contains("size"))
        throw config_error(p, "both count and size are required");
      read_uint(o, p, "count", grp.count);
      read_uint(o, p, "size", grp.size);
      g.objects.push_back(grp);
    }
  }
}

void parse_monitor(const json& j, monitor_config& m)
{
  const std::string path = "monitor";
  require_object(j, path);
  reject_unknown(j, path, {"subset_size", "ordering", "reshuffle_each_pass", "repair",
                           "with_copies", "full_digest", "hypervisor_budget"});
  read_uint(j, path, "subset_size", m.subset_size);
  if (j.contains("ordering")) {
    const auto s = read_string(j, path, "ordering");
    auto mode = parse_ordering_mode(s);
    if (!mode)
      throw config_error(join(path, "ordering"), "unknown ordering \"" + s + "\"");
    m.ordering = *mode;
  }
  read_bool(j, path, "reshuffle_each_pass", m.reshuffle_each_pass);
  read_bool(j, path, "repair", m.repair);
  read_bool(j, path, "with_copies", m.with_copies);
  read_bool(j, path, "full_digest", m.full_digest);
  read_uint(j, path, "hypervisor_budget", m.hypervisor_budget);
}

attack_script parse_attack(const json& j, const std::string& path, const guest_spec& guest)
{
  require_object(j, path);
  attack_script a;
  const auto kind = read_string(j, path, "kind");
  auto k = parse_attack_kind(kind);
  if (!k)
    throw config_error(join(path, "kind"), "unknown attack kind \"" + kind + "\"");
  a.kind = *k;

  switch (a.kind) {
    case attack_kind::syscall_hook:
    case attack_kind::interrupt_hook:
      reject_unknown(j, path, {"kind", "trigger", "slot", "rogue", "via_alias"});
      break;
    case attack_kind::fnptr_hijack:
      reject_unknown(j, path, {"kind", "trigger", "object_id", "offset", "rogue"});
      break;
    case attack_kind::racing:
      reject_unknown(j, path, {"kind", "trigger", "object_id", "offset", "rogue", "hold_events"});
      break;
    case attack_kind::scheduler_freeze:
      reject_unknown(j, path, {"kind", "trigger", "freeze_events"});
      break;
  }

  if (!j.contains("trigger"))
    throw config_error(join(path, "trigger"), "required field missing");
  read_uint(j, path, "trigger", a.trigger_event);

  if (auto it = j.find("slot"); it != j.end()) {
    if (it->is_string() && it->get<std::string>() == "setuid") {
      if (a.kind != attack_kind::syscall_hook)
        throw config_error(join(path, "slot"), "\"setuid\" names a syscall slot");
      a.slot = guest.setuid_index;
    } else {
      read_uint(j, path, "slot", a.slot);
    }
  } else if (a.kind == attack_kind::syscall_hook || a.kind == attack_kind::interrupt_hook) {
    throw config_error(join(path, "slot"), "required field missing");
  }

  if (a.kind == attack_kind::fnptr_hijack || a.kind == attack_kind::racing) {
    if (!j.contains("object_id"))
      throw config_error(join(path, "object_id"), "required field missing");
    read_uint(j, path, "object_id", a.object_id);
  }
  read_uint(j, path, "offset", a.offset);
  if (auto it = j.find("rogue"); it != j.end())
    a.rogue = parse_u64_value(*it, join(path, "rogue"));
  read_bool(j, path, "via_alias", a.via_alias);
  read_uint(j, path, "hold_events", a.hold_events);
  if (j.contains("freeze_events")) {
    std::uint64_t n = 0;
    read_uint(j, path, "freeze_events", n);
    a.freeze_events = n;
  }
  return a;
}

void parse_run(const json& j, run_config& r)
{
  const std::string path = "run";
  require_object(j, path);
  reject_unknown(j, path, {"events", "hypercall_batches", "control_register_writes"});
  if (!j.contains("events"))
    throw config_error(join(path, "events"), "required field missing");
  read_uint(j, path, "events", r.events);
  read_uint(j, path, "hypercall_batches", r.hypercall_batches);
  if (auto it = j.find("control_register_writes"); it != j.end()) {
    const auto wpath = join(path, "control_register_writes");
    if (!it->is_array())
      throw config_error(wpath, "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const auto& w = (*it)[i];
      const auto p = index_path(wpath, i);
      require_object(w, p);
      reject_unknown(w, p, {"at", "register"});
      control_register_write cw;
      if (!w.contains("at"))
        throw config_error(join(p, "at"), "required field missing");
      read_uint(w, p, "at", cw.at);
      const auto reg = read_string(w, p, "register");
      auto rr = parse_register(reg);
      if (!rr)
        throw config_error(join(p, "register"), "unknown control register \"" + reg + "\"");
      cw.reg = *rr;
      r.control_register_writes.push_back(cw);
    }
  }
}

void parse_expectations(const json& j, expectations& e)
{
  const std::string path = "expectations";
  require_object(j, path);
  reject_unknown(j, path, {"must_detect", "max_latency_switches", "no_detections"});
  read_bool(j, path, "must_detect", e.must_detect);
  if (j.contains("max_latency_switches")) {
    std::uint64_t v = 0;
    read_uint(j, path, "max_latency_switches", v);
    e.max_latency_switches = v;
  }
  read_bool(j, path, "no_detections", e.no_detections);
}

std::string hex64(std::uint64_t v)
{
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

} // namespace

scenario_config parse_config(std::string_view json_text)
{
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw config_error("", std::string("invalid JSON: ") + e.what());
  }
  require_object(j, "");
  reject_unknown(j, "", {"schema_version", "seed", "guest", "monitor", "attacks", "run",
                         "expectations"});

  if (!j.contains("schema_version"))
    throw config_error("schema_version", "required field missing");
  std::uint32_t version = 0;
  read_uint(j, "", "schema_version", version);
  if (version != schema_version)
    throw config_error("schema_version", "unsupported version " + std::to_string(version) +
                                             " (expected " + std::to_string(schema_version) + ")");

  scenario_config cfg;
  read_uint(j, "", "seed", cfg.seed);
  if (j.contains("guest"))
    parse_guest(j["guest"], cfg.guest);
  if (j.contains("monitor"))
    parse_monitor(j["monitor"], cfg.monitor);
  if (!j.contains("run"))
    throw config_error("run", "required section missing");
  parse_run(j["run"], cfg.run);
  if (auto it = j.find("attacks"); it != j.end()) {
    if (!it->is_array())
      throw config_error("attacks", "expected an array");
    for (std::size_t i = 0; i < it->size(); ++i)
      cfg.attacks.push_back(parse_attack((*it)[i], index_path("attacks", i), cfg.guest));
  }
  if (j.contains("expectations"))
    parse_expectations(j["expectations"], cfg.expect);

  validate(cfg);
  return cfg;
}

scenario_config load_config(const std::filesystem::path& path)
{
  std::ifstream in(path);
  if (!in)
    throw config_error("", "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string config_to_json(const scenario_config& cfg, int indent)
{
  json objects = json::array();
  for (const auto& g : cfg.guest.objects)
    objects.push_back({{"kind", to_string(g.kind)}, {"count", g.count}, {"size", g.size}});

  json guest = {
    {"frame_size", cfg.guest.frame_size},
    {"num_frames", cfg.guest.num_frames},
    {"switch_rate", cfg.guest.switch_rate},
    {"syscall_entries", cfg.guest.syscall_entries},
    {"setuid_index", cfg.guest.setuid_index},
    {"interrupt_vectors", cfg.guest.interrupt_vectors},
    {"readonly_syscall_table", cfg.guest.readonly_syscall_table},
    {"processes", cfg.guest.processes},
    {"objects", objects},
  };
  json monitor = {
    {"subset_size", cfg.monitor.subset_size},
    {"ordering", to_string(cfg.monitor.ordering)},
    {"reshuffle_each_pass", cfg.monitor.reshuffle_each_pass},
    {"repair", cfg.monitor.repair},
    {"with_copies", cfg.monitor.with_copies},
    {"full_digest", cfg.monitor.full_digest},
    {"hypervisor_budget", cfg.monitor.hypervisor_budget},
  };
  json attacks = json::array();
  for (const auto& a : cfg.attacks) {
    json o = {{"kind", to_string(a.kind)}, {"trigger", a.trigger_event}};
    switch (a.kind) {
      case attack_kind::syscall_hook:
      case attack_kind::interrupt_hook:
        o["slot"] = a.slot;
        o["via_alias"] = a.via_alias;
        break;
      case attack_kind::racing:
        o["hold_events"] = a.hold_events;
        [[fallthrough]];
      case attack_kind::fnptr_hijack:
        o["object_id"] = a.object_id;
        o["offset"] = a.offset;
        break;
      case attack_kind::scheduler_freeze:
        if (a.freeze_events)
          o["freeze_events"] = *a.freeze_events;
        break;
    }
    if (a.rogue && a.kind != attack_kind::scheduler_freeze)
      o["rogue"] = hex64(*a.rogue);
    attacks.push_back(o);
  }
  json writes = json::array();
  for (const auto& w : cfg.run.control_register_writes)
    writes.push_back({{"at", w.at}, {"register", to_string(w.reg)}});
  json run = {
    {"events", cfg.run.events},
    {"hypercall_batches", cfg.run.hypercall_batches},
    {"control_register_writes", writes},
  };
  json expect = {{"must_detect", cfg.expect.must_detect}, {"no_detections", cfg.expect.no_detections}};
  if (cfg.expect.max_latency_switches)
    expect["max_latency_switches"] = *cfg.expect.max_latency_switches;

  json j = {
    {"schema_version", schema_version},
    {"seed", cfg.seed},
    {"guest", guest},
    {"monitor", monitor},
    {"attacks", attacks},
    {"run", run},
    {"expectations", expect},
  };
  return j.dump(indent);
}

std::string config_hash(const scenario_config& cfg)
{
  md5 h;
  h.update(config_to_json(cfg));
  return to_hex(h.finish());
}

} // namespace invarmon
