#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace invarmon::cli {

enum exit_code : int {
  exit_ok = 0,
  exit_config_error = 1,
  exit_expectation_violated = 2,
};

struct run_options
{
  std::string config_path;
  bool json = false;
  std::optional<std::uint64_t> seed;
  std::string out_path;
};

struct bench_options
{
  std::string config_path;
  std::uint64_t trials = 1000;
  std::string phase = "uniform"; ///< "uniform" or a trigger step
  unsigned threads = 0;
  bool json = false;
  std::optional<std::uint64_t> seed;
  std::string out_path;
};

struct figures_options
{
  bool json = false;
  bool simulate = true; ///< also run the canned scenario for a measured latency
  std::string out_path;
};

int cmd_run(const run_options& opts, std::ostream& out, std::ostream& err);
int cmd_bench(const bench_options& opts, std::ostream& out, std::ostream& err);
int cmd_figures(const figures_options& opts, std::ostream& out, std::ostream& err);
int cmd_validate(const std::string& config_path, std::ostream& out, std::ostream& err);

/// Parses argv (argv[0] is the program name) and dispatches.
int main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace invarmon::cli
