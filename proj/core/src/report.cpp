#include "invarmon/config.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace invarmon {

using nlohmann::ordered_json;

namespace {

template <typename T>
ordered_json opt(const std::optional<T>& v)
{
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

double round_to(double v, int digits)
{
  const double scale = std::pow(10.0, digits);
  return std::round(v * scale) / scale;
}

ordered_json report_json(const scenario_report& r)
{
  ordered_json j;
  j["schema_version"] = schema_version;
  j["tool_version"] = tool_version();
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;

  auto& s = j["summary"];
  s["records"] = r.records;
  s["subset_size"] = r.subset_size;
  s["events"] = r.events;
  s["traps"] = r.traps;
  s["checks_performed"] = r.checks_performed;
  s["bytes_hashed"] = r.bytes_hashed;
  s["bytes_hashed_per_trap"] = r.bytes_hashed_per_trap;
  s["worst_case_latency_switches"] = r.worst_case_latency_switches;
  s["switch_rate"] = r.switch_rate;
  s["simulated_seconds"] = round_to(r.simulated_seconds, 6);
  s["detections"] = r.detections.size();
  s["repairs"] = r.repairs.size();
  s["frozen"] = r.frozen;

  j["attacks"] = ordered_json::array();
  for (std::size_t i = 0; i < r.outcomes.size(); ++i) {
    const auto& o = r.outcomes[i];
    ordered_json a;
    a["index"] = i;
    a["kind"] = to_string(o.kind);
    a["target_id"] = opt(o.target_id);
    a["applied_at"] = o.applied_at;
    a["restored_at"] = opt(o.restored_at);
    a["detected_at"] = opt(o.detected_at);
    a["repaired_at"] = opt(o.repaired_at);
    a["latency_switches"] = opt(o.latency_switches);
    a["latency_seconds"] = o.latency_seconds ? ordered_json(round_to(*o.latency_seconds, 6))
                                             : ordered_json(nullptr);
    a["escaped"] = o.escaped;
    j["attacks"].push_back(a);
  }

  j["detections"] = ordered_json::array();
  for (const auto& d : r.detections)
    j["detections"].push_back({{"trap", d.trap_index},
                               {"event", d.event_index},
                               {"id", d.id},
                               {"expected", d.expected.to_string()},
                               {"actual", d.actual.to_string()}});
  j["repairs"] = ordered_json::array();
  for (const auto& rp : r.repairs)
    j["repairs"].push_back({{"trap", rp.trap_index}, {"event", rp.event_index}, {"id", rp.id}});

  const auto& a = r.accounting;
  auto& m = j["memory"];
  m["records_bytes"] = a.records;
  m["copies_bytes"] = a.copies;
  m["total_bytes"] = a.total;
  m["mapping_bytes"] = a.mapping;
  m["overall_bytes"] = a.overall;
  m["records_kib"] = memory_accounting::kib(a.records);
  m["copies_kib"] = memory_accounting::kib(a.copies);
  m["total_kib"] = memory_accounting::kib(a.total);
  m["mapping_kib"] = memory_accounting::kib(a.mapping);
  m["overall_kib"] = memory_accounting::kib(a.overall);
  m["hypervisor_budget_bytes"] = r.hypervisor_budget;
  m["overhead_percent"] = round_to(r.overhead_percent, 4);

  j["event_log"] = {{"entries", r.log_entries}, {"digest", r.event_log_digest}};
  j["expectations"] = {{"met", r.expectations_met()}, {"violations", r.violations}};
  return j;
}

void flatten(const ordered_json& j, const std::string& prefix, std::ostringstream& out)
{
  if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    if (j.empty())
      out << prefix << ": []\n";
    for (std::size_t i = 0; i < j.size(); ++i)
      flatten(j[i], prefix + "[" + std::to_string(i) + "]", out);
  } else if (j.is_string()) {
    out << prefix << ": " << j.get<std::string>() << "\n";
  } else {
    out << prefix << ": " << j.dump() << "\n";
  }
}

ordered_json histogram_json(const latency_histogram& h)
{
  ordered_json j;
  j["schema_version"] = schema_version;
  j["trials"] = h.trials;
  j["detected"] = h.detected;
  j["escaped"] = h.escaped;
  j["detection_rate"] = round_to(h.detection_rate(), 6);
  j["max_latency_switches"] = h.max_latency;
  j["mean_latency_switches"] = round_to(h.mean_latency, 6);
  j["histogram"] = ordered_json::array();
  for (const auto& [lat, count] : h.counts)
    j["histogram"].push_back({{"latency_switches", lat}, {"trials", count}});
  return j;
}

} // namespace

std::string report_to_json(const scenario_report& r, int indent)
{
  return report_json(r).dump(indent);
}

std::string report_to_text(const scenario_report& r)
{
  std::ostringstream out;
  flatten(report_json(r), "", out);
  return out.str();
}

std::string histogram_to_json(const latency_histogram& h, int indent)
{
  return histogram_json(h).dump(indent);
}

std::string histogram_to_text(const latency_histogram& h)
{
  std::ostringstream out;
  flatten(histogram_json(h), "", out);
  return out.str();
}

} // namespace invarmon
