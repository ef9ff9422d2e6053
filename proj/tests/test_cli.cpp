#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ubu/bounds.hpp"
#include "ubu/cli.hpp"
#include "ubu/errors.hpp"

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "ubu_cli");
  std::ostringstream out, err;
  const int code = ubu::parse_and_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("ubu_cli_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cli, NoArgumentsPrintsUsage) {
  const auto r = run({});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, UnknownSubcommandAndFlag) {
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  const auto r = run({"chaos", "--tensor", "diag:1", "--bogus", "3"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, HelpDocumentsCsvSchema) {
  const auto r = run({"order", "--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("kind,statistic,h,d,n,value,std_error"), std::string::npos);
}

TEST(Cli, ChaosDiagonal) {
  const auto dir = scratch("chaos");
  const auto r = run({"chaos", "--tensor", "diag:1,2,3", "--output-dir", dir.string()});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("exact 42"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("bound 81"), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "chaos.json"));
}

TEST(Cli, BoundMatchesLibrary) {
  const auto dir = scratch("bound");
  const auto r = run({"bound", "--c", "1", "--L", "1", "--L1s", "0", "--d", "1", "--r", "1", "--h", "0.1",
                      "--n", "100", "--w0", "1", "--output-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto k = ubu::BoundConstants::from(ubu::theorem25_constants(1, 1, 0, 1), 1, 0.1, false);
  std::ostringstream expect;
  expect.precision(12);
  expect << ubu::wasserstein_bound(100, 0.1, 1, k);
  EXPECT_NE(r.out.find("W2 <= " + expect.str()), std::string::npos) << r.out;
}

TEST(Cli, BoundMissingFieldsListedTogether) {
  const auto r = run({"bound", "--c", "1"});
  EXPECT_EQ(r.code, 1);
  for (const char* key : {"'L'", "'L1s'", "'d_grid'", "'r'", "'h_grid'", "'n'", "'w0'"}) {
    EXPECT_NE(r.err.find(key), std::string::npos) << key << "\n" << r.err;
  }
}

TEST(Cli, OutOfRegimeAndNumericalFailureExitCodes) {
  const auto dir = scratch("codes");
  EXPECT_EQ(run({"bound", "--c", "1", "--L", "1", "--L1s", "0", "--d", "1", "--r", "1", "--h", "0.1", "--n",
                 "1", "--w0", "1", "--gamma", "1", "--output-dir", dir.string()})
                .code,
            1);
  // R_h <= 0: step too large for the contraction bound.
  const auto r = run({"bound", "--c", "1", "--L", "1", "--L1s", "0", "--d", "1", "--r", "0.5", "--h", "1",
                      "--n", "1", "--w0", "1", "--output-dir", dir.string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("R_h"), std::string::npos);
}

TEST(Cli, ConfigFileFlagsOverrideAndSeedPersisted) {
  const auto dir = scratch("config");
  const auto cfg = dir / "run.cfg";
  std::ofstream(cfg) << "# strong order\nd_grid = 2\nh_grid = 1/4, 1/8, 1/16, 1/32\nreplicas = 4\n"
                     << "output_dir = " << dir.string() << "\n";
  const auto r = run({"order", "--config", cfg.string(), "--replicas", "6"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("(generated)"), std::string::npos);
  std::ifstream manifest(dir / "order.json");
  const auto j = nlohmann::json::parse(manifest);
  EXPECT_EQ(j["config"]["n_replicas"].get<int>(), 6);
  const auto seed = j["seed"].get<std::uint64_t>();
  EXPECT_NE(r.out.find("seed " + std::to_string(seed)), std::string::npos);

  // Re-running with the persisted seed reproduces the CSV (wall clock aside).
  auto strip = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string all, line;
    while (std::getline(in, line)) {
      const auto last = line.rfind(',');
      const auto wall = line.rfind(',', last - 1);
      all += line.substr(0, wall) + line.substr(last) + "\n";
    }
    return all;
  };
  const std::string first = strip(dir / "order.csv");
  ASSERT_EQ(run({"order", "--config", cfg.string(), "--replicas", "6", "--seed", std::to_string(seed)}).code, 0);
  EXPECT_EQ(strip(dir / "order.csv"), first);
}

TEST(Cli, ConfigErrorsEnumerated) {
  const auto dir = scratch("badcfg");
  const auto cfg = dir / "bad.cfg";
  std::ofstream(cfg) << "h_grid = 0.1, x\nreplicas = 2.5\ncolour = blue\n";
  const auto r = run({"contract", "--config", cfg.string(), "--seed", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("h_grid"), std::string::npos);
  EXPECT_NE(r.err.find("replicas"), std::string::npos);
  EXPECT_NE(r.err.find("colour"), std::string::npos);

  std::ofstream(cfg) << "no equals sign here\n";
  EXPECT_THROW(ubu::read_config_file(cfg.string()), ubu::ValidationError);
}

TEST(Cli, NormsAndStepsToEps) {
  const auto dir = scratch("misc");
  auto r = run({"norms", "--tensor", "diag:1,-3,2", "--output-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("{1,2}{3} 3"), std::string::npos) << r.out;
  r = run({"steps-to-eps", "--eps", "1e-3", "--d", "4,8", "--c", "0.25", "--L", "2", "--L1s", "0.5", "--r", "0.2",
           "--output-dir", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ratio"), std::string::npos);
  EXPECT_EQ(run({"norms", "--tensor", "random:x"}).code, 1);
}

TEST(Cli, ExperimentSubcommandsRun) {
  const auto dir = scratch("experiments");
  const std::string out = dir.string();
  EXPECT_EQ(run({"step", "--seed", "1", "--output-dir", out}).code, 0);
  EXPECT_EQ(run({"contract", "--seed", "1", "--replicas", "4", "--output-dir", out}).code, 0);
  EXPECT_EQ(run({"local-order", "--seed", "1", "--replicas", "8", "--output-dir", out}).code, 0);
  const auto r = run({"dims", "--seed", "1", "--replicas", "4", "--d", "2,4,8,16", "--h", "1/4", "--window", "5",
                      "--output-dir", out});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("slope vs d"), std::string::npos);
  for (const char* f : {"step.csv", "contract.csv", "local-order.csv", "dims.csv", "dims.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
}
