/*
 * Copyright 2026 The GNP Lab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kCli = GNP_CLI_PATH;
const fs::path kData = fs::path(GNP_SOURCE_DIR) / "tests" / "data";

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

struct CliResult {
  int status = -1;
  std::string out;
  std::string err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("gnp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  CliResult run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = kCli + " " + args + " >" + out.string() + " 2>" + err.string();
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(out), slurp(err)};
  }

  fs::path train(const std::string& config, const std::string& sub) {
    const CliResult r = run("train --quiet --config " + (kData / config).string() + " --out-dir " +
                      (dir_ / sub).string());
    EXPECT_EQ(r.status, 0) << r.err;
    return fs::path(lines(r.out).at(0));
  }

  fs::path dir_;
};

TEST_F(CliTest, TrainIsReproducible) {
  const fs::path a = train("smoke_gnp.json", "a");
  const fs::path b = train("smoke_gnp.json", "b");
  EXPECT_EQ(a.filename(), b.filename());
  EXPECT_EQ(slurp(a / "history.csv"), slurp(b / "history.csv"));
  EXPECT_EQ(slurp(a / "checkpoint.json"), slurp(b / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(a / "checkpoint_epoch0.json"));
  EXPECT_TRUE(fs::exists(a / "checkpoint_epoch1.json"));
  const auto hist = lines(slurp(a / "history.csv"));
  ASSERT_EQ(hist.size(), 4u);
  EXPECT_EQ(hist[0].rfind("# config_hash=" + a.filename().string() + " seed=11 ", 0), 0u) << hist[0];
  EXPECT_EQ(hist[1], "epoch,train_nll,val_loglik");
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(manifest.at("config_hash"), a.filename().string());
  EXPECT_FALSE(fs::exists(a / "timing.csv"));
}

TEST_F(CliTest, TrainZeroEpochsWritesInitialCheckpoint) {
  const fs::path d = train("smoke_gnp_zero_epochs.json", "z");
  EXPECT_EQ(lines(slurp(d / "history.csv")).size(), 2u);
  EXPECT_TRUE(fs::exists(d / "checkpoint.json"));
}

TEST_F(CliTest, TrainRejectsBadConfig) {
  std::ofstream(dir_ / "bad.json") << R"({"seed": 1, "trainig": {}})";
  const CliResult r = run("train --config " + (dir_ / "bad.json").string() + " --out-dir " + dir_.string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("trainig"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvalIsByteIdenticalWithUnavailableCells) {
  const fs::path d = train("smoke_gnp.json", "e");
  const std::string args = "eval --config " + (kData / "smoke_gnp.json").string() +
                           " --checkpoint " + (d / "checkpoint.json").string();
  const CliResult r1 = run(args), r2 = run(args);
  ASSERT_EQ(r1.status, 0) << r1.err;
  EXPECT_EQ(r1.out, r2.out);
  const auto rows = lines(r1.out);
  // provenance + header + 2 tasks x 2 splits x 3 predictors
  ASSERT_EQ(rows.size(), 14u);
  EXPECT_EQ(rows[1], "task,split,predictor,mean,ci95,n_tasks,seed");
  int unavailable = 0;
  for (const auto& row : rows) {
    if (row.rfind("sawtooth,", 0) == 0 && row.find(",oracle-") != std::string::npos) {
      EXPECT_NE(row.find(",n/a,n/a,8,11"), std::string::npos) << row;
      ++unavailable;
    }
  }
  EXPECT_EQ(unavailable, 4);
  const CliResult seeded = run(args + " --seed 3 --n-tasks 4");
  EXPECT_NE(lines(seeded.out)[2].find(",4,3"), std::string::npos) << seeded.out;
}

TEST_F(CliTest, EvalRejectsForeignCheckpoint) {
  const fs::path d = train("smoke_gnp.json", "f");
  const CliResult r = run("eval --config " + (kData / "smoke_convcnp.json").string() + " --checkpoint " +
                    (d / "checkpoint.json").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("does not match config hash"), std::string::npos) << r.err;
  const CliResult missing = run("eval --config " + (kData / "smoke_gnp.json").string());
  EXPECT_EQ(missing.status, 2);
}

TEST_F(CliTest, KernelDump) {
  const fs::path d = train("smoke_gnp.json", "k");
  const CliResult r = run("kernel-dump --checkpoint " + (d / "checkpoint.json").string());
  ASSERT_EQ(r.status, 0) << r.err;
  const auto rows = lines(r.out);
  ASSERT_EQ(rows.size(), 23u);
  EXPECT_EQ(rows[1], "lag,covariance,normalized,truth");
  EXPECT_EQ(rows[2].rfind("0,", 0), 0u);
  EXPECT_NE(rows[2].find(",1,"), std::string::npos) << rows[2];
  EXPECT_EQ(rows[12].rfind("1,", 0), 0u) << rows[12];
  EXPECT_NE(rows[12].find(",0.6065306597"), std::string::npos) << rows[12];

  const CliResult custom = run("kernel-dump --lags -1:1:0.5 --checkpoint " + (d / "checkpoint.json").string());
  EXPECT_EQ(lines(custom.out).size(), 7u);
  const CliResult bad = run("kernel-dump --lags 1:0:0.5 --checkpoint " + (d / "checkpoint.json").string());
  EXPECT_EQ(bad.status, 2);
}

TEST_F(CliTest, KernelDumpRejectsConvCnp) {
  const fs::path d = train("smoke_convcnp.json", "c");
  const CliResult r = run("kernel-dump --checkpoint " + (d / "checkpoint.json").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.err.find("has no kernel map"), std::string::npos) << r.err;
}

TEST_F(CliTest, SelftestReportsJson) {
  const CliResult r = run("selftest --out " + (dir_ / "report.json").string());
  EXPECT_EQ(r.status, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir_ / "report.json"));
  EXPECT_EQ(report.at("report"), "gnp-selftest");
  EXPECT_TRUE(report.at("passed").get<bool>());
}

TEST_F(CliTest, UnknownSubcommandFails) {
  EXPECT_NE(run("frobnicate").status, 0);
  EXPECT_NE(run("").status, 0);
}

}  // namespace
