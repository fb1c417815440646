#include <cli.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

namespace fs = std::filesystem;
using namespace invarmon::cli;

const fs::path scenarios{INVARMON_SCENARIO_DIR};

struct result
{
  int code;
  std::string out;
  std::string err;
};

result invoke(std::vector<std::string> args)
{
  args.insert(args.begin(), "invarmon");
  std::ostringstream out, err;
  const int code = main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path write_temp(const std::string& name, const std::string& text)
{
  const auto p = fs::temp_directory_path() / name;
  std::ofstream(p) << text;
  return p;
}

} // namespace

TEST(Cli, RunSetuidScenario)
{
  const auto r = invoke({"run", (scenarios / "setuid-hijack.json").string(), "--json"});
  EXPECT_EQ(r.code, exit_ok) << r.err;
  EXPECT_NE(r.out.find("\"latency_switches\": 149"), std::string::npos);
}

TEST(Cli, ExpectationViolationExitsTwo)
{
  const auto r = invoke({"run", (scenarios / "racing-escape.json").string()});
  EXPECT_EQ(r.code, exit_expectation_violated);
}

TEST(Cli, UnknownFieldExitsOneWithPath)
{
  const auto p = write_temp("invarmon_unknown.json",
                            R"({"schema_version": 1, "run": {"events": 3}, "monitor": {"k": 5}})");
  const auto r = invoke({"validate", p.string()});
  EXPECT_EQ(r.code, exit_config_error);
  EXPECT_NE(r.err.find("monitor.k"), std::string::npos) << r.err;
  EXPECT_EQ(invoke({"run", p.string()}).code, exit_config_error);
}

TEST(Cli, ZeroSubsetExitsOne)
{
  const auto p = write_temp("invarmon_k0.json",
                            R"({"schema_version": 1, "run": {"events": 3}, "monitor": {"subset_size": 0}})");
  const auto r = invoke({"run", p.string()});
  EXPECT_EQ(r.code, exit_config_error);
  EXPECT_NE(r.err.find("monitor.subset_size"), std::string::npos) << r.err;
}

TEST(Cli, BadArgumentsExitOne)
{
  EXPECT_EQ(invoke({}).code, exit_config_error);
  EXPECT_EQ(invoke({"frobnicate"}).code, exit_config_error);
  EXPECT_EQ(invoke({"run", "/nonexistent/file.json"}).code, exit_config_error);
  EXPECT_EQ(invoke({"bench", (scenarios / "clean.json").string(), "--trials", "5"}).code,
            exit_config_error);
}

TEST(Cli, ValidateShippedScenarios)
{
  for (const auto& e : fs::directory_iterator(scenarios))
    EXPECT_EQ(invoke({"validate", e.path().string()}).code, exit_ok) << e.path();
}

TEST(Cli, RunWritesOutFile)
{
  const auto out = fs::temp_directory_path() / "invarmon_report.json";
  fs::remove(out);
  const auto r = invoke({"run", (scenarios / "clean.json").string(), "--json", "--out", out.string()});
  EXPECT_EQ(r.code, exit_ok) << r.err;
  EXPECT_TRUE(fs::exists(out));
  EXPECT_GT(fs::file_size(out), 100u);
}

TEST(Cli, SeedOverrideChangesDigest)
{
  const auto path = (scenarios / "clean.json").string();
  const auto a = invoke({"run", path, "--json"});
  const auto b = invoke({"run", path, "--json", "--seed", "8"});
  EXPECT_EQ(a.code, exit_ok);
  EXPECT_EQ(b.code, exit_ok);
  EXPECT_NE(a.out, b.out);
  EXPECT_EQ(a.out, invoke({"run", path, "--json"}).out);
}

TEST(Cli, BenchSmallRun)
{
  const auto r = invoke({"bench", (scenarios / "interrupt-hook.json").string(), "--trials", "20",
                         "--threads", "1", "--json"});
  EXPECT_EQ(r.code, exit_ok) << r.err;
  EXPECT_NE(r.out.find("\"trials\": 20"), std::string::npos) << r.out;
}

TEST(Cli, Figures)
{
  const auto r = invoke({"figures", "--no-simulate"});
  EXPECT_EQ(r.code, exit_ok) << r.err;
  EXPECT_NE(r.out.find("2168"), std::string::npos);
  EXPECT_NE(r.out.find("293"), std::string::npos);
  EXPECT_NE(r.out.find("149"), std::string::npos);
  EXPECT_NE(r.out.find("discrepancy"), std::string::npos);
}
