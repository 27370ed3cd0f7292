#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr discarded and returns stdout and the exit code.
CliRun run(const std::string& args) {
  const std::string cmd = std::string(AOTMEM_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* p = popen(cmd.c_str(), "r");
  CliRun r;
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string temp(const std::string& name) { return (fs::temp_directory_path() / ("aotmem_cli_" + name)).string(); }

}  // namespace

TEST(Cli, ConstructSucceedsAndWritesModel) {
  const std::string model = temp("model.json");
  const CliRun r = run("construct --n 5 --s 2 --d 2 --dh 2 --seed 7 --out " + model + " --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto cert = nlohmann::json::parse(r.out);
  EXPECT_EQ(cert["achieved_accuracy"].get<double>(), 1.0);
  EXPECT_EQ(cert["H_used"].get<int>(), 12);
  ASSERT_TRUE(fs::exists(model));

  const CliRun v = run("verify --model " + model + " --n 5 --s 2 --json");
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_EQ(nlohmann::json::parse(v.out)["achieved_accuracy"].get<double>(), 1.0);
  fs::remove(model);
  fs::remove(model + ".cert.json");
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("construct --no-such-flag").code, 2);
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("construct --n 0").code, 2);
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, CapacityReport) {
  const CliRun r = run("bounds --capacity --n 50 --s 2 --H 20 --dh 10 --d 10 --json");
  ASSERT_EQ(r.code, 0);
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["ours"].get<int>(), 210);
  EXPECT_EQ(j["previous"].get<int>(), 181);
}

TEST(Cli, FitReadsSweepCsv) {
  const std::string csv = temp("fit.csv");
  {
    std::ofstream out(csv);
    out << "figure_id,seed,N,S,d,d_h,H,variant,params,final_accuracy,final_kl,wall_seconds\n";
    for (int H = 1; H <= 4; ++H) out << "x,0,10,1,2,2," << H << ",aot,0," << 0.1 * H << ",0,0\n";
  }
  const CliRun r = run("fit --csv " + csv + " --json");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_NEAR(j["coefficients"][1].get<double>(), 0.1, 1e-12);
  EXPECT_NEAR(j["r_squared"].get<double>(), 1.0, 1e-12);
  fs::remove(csv);
}

TEST(Cli, MissingFileIsInvalidArgument) { EXPECT_EQ(run("fit --csv /nonexistent/x.csv").code, 2); }
