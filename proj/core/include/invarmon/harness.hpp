#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "invarmon/attacks.hpp"
#include "invarmon/guest.hpp"
#include "invarmon/md5.hpp"
#include "invarmon/monitor.hpp"

namespace invarmon {

inline constexpr std::uint32_t schema_version = 1;
std::string_view tool_version() noexcept;

inline constexpr std::uint64_t default_hypervisor_budget = 128ull * 1024 * 1024;

struct monitor_config
{
  std::uint64_t subset_size = 100;
  ordering_mode ordering = ordering_mode::round_robin;
  bool reshuffle_each_pass = false;
  bool repair = true;
  bool with_copies = true;
  bool full_digest = false;
  std::uint64_t hypervisor_budget = default_hypervisor_budget;

  friend bool operator==(const monitor_config&, const monitor_config&) = default;
};

struct control_register_write
{
  std::uint64_t at = 0;
  control_register reg = control_register::cr4;

  friend bool operator==(const control_register_write&, const control_register_write&) = default;
};

struct run_config
{
  std::uint64_t events = 1;
  std::uint32_t hypercall_batches = 1;
  std::vector<control_register_write> control_register_writes;

  friend bool operator==(const run_config&, const run_config&) = default;
};

struct expectations
{
  bool must_detect = false; ///< every modifying attack is detected before the run ends
  std::optional<std::uint64_t> max_latency_switches;
  bool no_detections = false;

  friend bool operator==(const expectations&, const expectations&) = default;
};

/// Everything a run depends on. guest.seed is ignored; `seed` drives both
/// guest content and the monitor schedule.
struct scenario_config
{
  std::uint64_t seed = 0;
  guest_spec guest;
  monitor_config monitor;
  std::vector<attack_script> attacks;
  run_config run;
  expectations expect;

  friend bool operator==(const scenario_config&, const scenario_config&) = default;
};

/// Throws config_error naming the first invalid field.
void validate(const scenario_config& cfg);

struct scenario_report
{
  std::string config_hash;
  std::uint64_t seed = 0;
  std::uint64_t records = 0;
  std::uint64_t subset_size = 0;
  std::uint64_t events = 0;
  std::uint64_t traps = 0;
  std::uint64_t checks_performed = 0;
  std::uint64_t bytes_hashed = 0;
  std::uint64_t bytes_hashed_per_trap = 0;
  std::uint64_t worst_case_latency_switches = 0;
  double simulated_seconds = 0;
  double switch_rate = 0;

  std::vector<attack_outcome> outcomes;
  std::vector<detection> detections;
  std::vector<repair_entry> repairs;

  memory_accounting accounting;
  std::uint64_t hypervisor_budget = 0;
  double overhead_percent = 0;

  bool frozen = false;
  std::uint64_t log_entries = 0;
  std::string event_log_digest;

  std::vector<std::string> violations;
  bool expectations_met() const noexcept { return violations.empty(); }
};

/// One scenario instance: a guest, its monitor, and the scripted attacks.
/// Copyable, so a booted-but-unsealed state can seed many trials.
class simulation
{
public:
  explicit simulation(scenario_config cfg);

  /// Boot, collect, and send every hypercall except the sealing step.
  void boot();
  void set_schedule_seed(std::uint64_t seed);
  void seal();
  /// Attacks due at the current step, then one event through the monitor.
  void step();
  void run_to_end();
  bool done() const noexcept;

  /// Trial reuse: move attack `i` and the run length before stepping starts.
  void reschedule_attack(std::size_t i, std::uint64_t trigger_event);
  void set_run_length(std::uint64_t events);

  scenario_report report() const;

  const scenario_config& config() const noexcept { return cfg_; }
  guest_state& guest() { return *guest_; }
  const guest_state& guest() const { return *guest_; }
  invarmon::monitor& mon() noexcept { return monitor_; }
  const invarmon::monitor& mon() const noexcept { return monitor_; }
  std::span<const attack_outcome> outcomes() const noexcept { return outcomes_; }
  std::uint64_t current_step() const noexcept { return step_; }

private:
  struct pending_attack
  {
    attack_script script;
    std::uint64_t rogue = 0;
    std::optional<racing_attack> racer;
    std::uint64_t traps_at_apply = 0;
  };

  void log(std::string_view line);
  void apply_attack(std::size_t i);
  void finish_attack(std::size_t i);
  void observe(const check_report& r);

  scenario_config cfg_;
  std::optional<guest_state> guest_;
  invarmon::monitor monitor_;
  std::vector<pending_attack> attacks_;
  std::vector<attack_outcome> outcomes_;
  std::uint64_t step_ = 0;
  md5 log_hash_;
  std::uint64_t log_entries_ = 0;
  bool ever_frozen_ = false;
};

/// boot -> collect -> hypercall -> seal -> event loop -> report.
scenario_report run(const scenario_config& cfg);

/// Where a persistent attack lands relative to the check cycle.
struct attack_phase
{
  enum class kind : std::uint8_t { uniform, fixed } mode = kind::uniform;
  std::uint64_t step = 0; ///< fixed: trigger step

  static attack_phase uniform() { return {}; }
  static attack_phase fixed(std::uint64_t s) { return {kind::fixed, s}; }
};

struct latency_histogram
{
  std::map<std::uint64_t, std::uint64_t> counts; ///< latency in switches -> trials
  std::uint64_t trials = 0;
  std::uint64_t detected = 0;
  std::uint64_t escaped = 0;
  std::uint64_t max_latency = 0;
  double mean_latency = 0;

  double detection_rate() const noexcept
  {
    return trials == 0 ? 0.0 : static_cast<double>(detected) / static_cast<double>(trials);
  }
};

/// Repeats the config's first modifying attack over `trials` independent
/// runs. Trial i re-seeds the monitor schedule with a value derived from
/// (seed, i); under the uniform phase the trigger is drawn from one pass.
/// Trials run on `threads` workers (0: hardware concurrency) and the result
/// does not depend on the thread count.
latency_histogram latency_distribution(const scenario_config& cfg, std::uint64_t trials,
                                       attack_phase phase, unsigned threads = 0);

struct overhead_summary_result
{
  memory_accounting accounting;
  std::uint64_t budget = 0;
  double percent = 0;
  std::string text;
};

overhead_summary_result overhead_summary(const scenario_config& cfg);

/// Sizes of every object the config's guest will register, tables included.
std::vector<std::uint64_t> population_sizes(const guest_spec& spec);

/// Canned setuid-hijack scenario: 15,000 registered objects (both tables plus
/// 14,998 heap objects of 128 bytes), k = 100, hook lands right after the
/// syscall table's subset was scanned.
scenario_config reference_setuid_scenario();

std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t trial) noexcept;

} // namespace invarmon
