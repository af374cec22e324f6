#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support/cli_run.hpp"

namespace fs = std::filesystem;
using namespace flowvar;

namespace {

fs::path scratch(const std::string& name) { return fs::temp_directory_path() / ("flowvar_test_cli_" + name); }

}  // namespace

TEST(Cli, RerunIsByteIdentical) {
  const fs::path a = scratch("a"), b = scratch("b");
  ASSERT_EQ(cli::run_pipeline(a), "");
  ASSERT_EQ(cli::run_pipeline(b), "");
  const auto sa = cli::snapshot(a / "out", {".csv", ".pgm", ".fvm"});
  const auto sb = cli::snapshot(b / "out", {".csv", ".pgm", ".fvm"});
  EXPECT_GT(sa.size(), 20u);
  ASSERT_EQ(sa.size(), sb.size());
  for (const auto& [name, bytes] : sa) {
    ASSERT_TRUE(sb.count(name)) << name;
    EXPECT_TRUE(sb.at(name) == bytes) << name;
  }
  EXPECT_TRUE(fs::exists(a / "out" / "cost.meta"));
}

TEST(Cli, MissingModelIsValidationError) {
  const fs::path dir = scratch("missing");
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string log = (dir / "log.txt").string();
  EXPECT_EQ(cli::run("--out " + dir.string() + " uq tweedie --t 0.5", log), 1);
  EXPECT_NE(cli::slurp(log).find("model not found"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli::run("frobnicate"), 1);
  EXPECT_EQ(cli::run("--bogus-flag oracle-check"), 1);
  EXPECT_EQ(cli::run("uq sideways"), 1);
  EXPECT_EQ(cli::run(""), 1);
  EXPECT_EQ(cli::run("--help"), 0);
}

TEST(Cli, BadConfigIsValidationError) {
  const fs::path dir = scratch("badcfg");
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "bad.ini") << "[train]\nepochz = 3\n";
  const std::string log = (dir / "log.txt").string();
  EXPECT_EQ(cli::run("--config " + (dir / "bad.ini").string() + " --out " + dir.string() + " oracle-check", log), 1);
  EXPECT_NE(cli::slurp(log).find("unknown key epochz"), std::string::npos);
}

TEST(Cli, OracleCheckPreset) {
  const fs::path dir = scratch("oracle");
  fs::remove_all(dir);
  const std::string log = (dir.string() + ".log");
  EXPECT_EQ(cli::run("--config gmm2d --out " + dir.string() + " oracle-check", log), 0);
  const std::string text = cli::slurp(log);
  EXPECT_NE(text.find("max relative Frobenius error"), std::string::npos);
  EXPECT_NE(text.find("PASS"), std::string::npos);
}

TEST(Cli, AblationHasOneRowPerProbeCountAndReplicate) {
  const fs::path dir = scratch("ablate");
  fs::remove_all(dir);
  ASSERT_EQ(cli::run("--config gmm2d --out " + dir.string() + " ablate-probes --analytic --S 4,16,64,256"), 0);
  const std::string csv = cli::slurp(dir / "ablate_probes.csv");
  const auto lines = std::count(csv.begin(), csv.end(), '\n');
  EXPECT_EQ(lines, 1 + 4 * 8);
}
