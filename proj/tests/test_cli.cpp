/*
 * Copyright 2026 The GeoFlow Authors
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

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "geoflow/cli.hpp"
#include "geoflow/common.hpp"
#include "geoflow/taskgen.hpp"
#include "support.hpp"

namespace geoflow {
namespace {

namespace fs = std::filesystem;
using geoflow::testing::data_file;
using geoflow::testing::TempDir;

struct CliResult {
  int code = -1;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args, const std::string& input = "") {
  args.insert(args.begin(), "geoflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::istringstream in(input);
  std::ostringstream out;
  std::ostringstream err;
  CliResult r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), in, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

/// Two tasks per template with gold scripts, shared by the bench tests.
class Bench : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli_bench");
    const CliResult g = cli({"gen-tasks", "--n", "2", "--out", tasks(), "--scripts", scripts()});
    ASSERT_EQ(g.code, 0) << g.err;
    const CliResult p = cli({"gen-tasks", "--n", "2", "--out", *dir_ / "tasks_p.jsonl", "--scripts",
                             premature_scripts(), "--scenario", "premature"});
    ASSERT_EQ(p.code, 0) << p.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static std::string tasks() { return *dir_ / "tasks.jsonl"; }
  static std::string scripts() { return *dir_ / "scripts"; }
  static std::string premature_scripts() { return *dir_ / "scripts_premature"; }

  static std::vector<std::string> bench(const std::string& out, const std::string& scripts_dir) {
    return {"bench", "--tasks", tasks(), "--backend", data_file("config/replay.json"), "--scripts",
            scripts_dir, "--out", out};
  }

  static TempDir* dir_;
};

TempDir* Bench::dir_ = nullptr;

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  const CliResult r = cli({"bench", "--tasks", "x"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--backend"), std::string::npos);
}

TEST(Cli, GenCatalogIsDeterministic) {
  TempDir a("cat_a");
  TempDir b("cat_b");
  ASSERT_EQ(cli({"gen-catalog", "--seed", "3", "--images", "30", "--out", a.str()}).code, 0);
  ASSERT_EQ(cli({"gen-catalog", "--seed", "3", "--images", "30", "--out", b.str()}).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a.str())) {
    ++files;
    const std::string name = e.path().filename().string();
    EXPECT_EQ(read_file(e.path().string()), read_file(b / name)) << name;
  }
  EXPECT_GE(files, 3u);
}

TEST_F(Bench, GoldRunSucceeds) {
  TempDir out("bench_gold");
  const CliResult r = cli(bench(out.str(), scripts()));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::is_regular_file(out / "report.json"));
  EXPECT_TRUE(fs::is_regular_file(out / "report.txt"));
  EXPECT_EQ(std::distance(fs::directory_iterator(out / "runs"), fs::directory_iterator{}), 16);
  EXPECT_EQ(std::distance(fs::directory_iterator(out / "transcripts"), fs::directory_iterator{}), 16);
  EXPECT_NE(r.out.find("100.0"), std::string::npos) << r.out;

  // The report subcommand rebuilds the same table from the run files.
  const CliResult rep = cli({"report", "--tasks", tasks(), "--runs", out.str()});
  EXPECT_EQ(rep.code, 0) << rep.err;
  EXPECT_EQ(rep.out, read_file(out / "report.txt"));
}

TEST_F(Bench, PrematureReactRunFails) {
  TempDir out("bench_react");
  auto args = bench(out.str(), premature_scripts());
  args.insert(args.end(), {"--mode", "react"});
  EXPECT_EQ(cli(args).code, 1);

  TempDir guarded("bench_guarded");
  EXPECT_EQ(cli(bench(guarded.str(), premature_scripts())).code, 0);
}

TEST_F(Bench, MissingPricingWritesNothing) {
  TempDir out("bench_pricing");
  auto args = bench(out.str(), scripts());
  args.insert(args.end(), {"--pricing", out / "nope.toml"});
  const CliResult r = cli(args);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("pricing"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(out / "report.json"));
  EXPECT_FALSE(fs::exists(out / "runs"));
}

TEST_F(Bench, MissingScriptIsAConfigError) {
  TempDir out("bench_scripts");
  TempDir empty("bench_noscripts");
  const CliResult r = cli(bench(out.str(), empty.str()));
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(out / "runs"));
}

TEST_F(Bench, InvalidOptionsAreUsageErrors) {
  TempDir out("bench_opts");
  auto args = bench(out.str(), scripts());
  args.insert(args.end(), {"--fault-rate", "1.5"});
  EXPECT_EQ(cli(args).code, 2);
  args = bench(out.str(), scripts());
  args.insert(args.end(), {"--mode", "reflex"});
  EXPECT_EQ(cli(args).code, 2);
}

TEST_F(Bench, SingleRunReportsSuccess) {
  const auto all = load_tasks(tasks());
  const CliResult r = cli({"run", "--tasks", tasks(), "--task-id", all.front().task_id, "--backend",
                           data_file("config/replay.json"), "--scripts", scripts(), "--pricing",
                           data_file("config/pricing.toml")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("success: yes"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("completed"), std::string::npos);
  EXPECT_EQ(cli({"run", "--backend", data_file("config/replay.json")}).code, 2);
}

// ---------------------------------------------------------------------------
// REPL
// ---------------------------------------------------------------------------

/// Gold scripts for two queries, saved under the ids the REPL assigns.
void write_repl_scripts(const std::string& dir, const std::vector<TaskSpec>& picked) {
  const WorkflowSpec wf =
      load_workflow_file(data_file("workflows/eo_multi.flow"), sandbox_registry());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    TaskSpec t = picked[i];
    t.task_id = "repl-0" + std::to_string(i + 1);
    write_file((fs::path(dir) / (t.task_id + ".replay.json")).string(),
               to_json(build_replay_script(t, wf)).dump());
  }
}

std::size_t occurrences(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

TEST_F(Bench, ReplAnswersEachQueryInIsolation) {
  const auto all = load_tasks(tasks());
  std::vector<TaskSpec> picked;
  for (const auto& t : all) {
    if (t.template_id == "forest_loss" || t.template_id == "object_count") {
      if (picked.empty() || picked.back().template_id != t.template_id) picked.push_back(t);
    }
  }
  ASSERT_EQ(picked.size(), 2u);
  TempDir s("repl_scripts");
  write_repl_scripts(s.str(), picked);

  const std::string input = picked[0].query + "\n\n   \n" + picked[1].query + "\n";
  const CliResult r =
      cli({"repl", "--backend", data_file("config/replay.json"), "--scripts", s.str()}, input);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.err.empty()) << r.err;
  // One prompt per input line plus the one that meets end of input.
  EXPECT_EQ(occurrences(r.out, "geoflow> "), 5u);
  EXPECT_NE(r.out.find("task repl-01: completed"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("task repl-02: completed"), std::string::npos) << r.out;
  EXPECT_EQ(occurrences(r.out, "answer: The"), 2u) << r.out;
  EXPECT_NE(r.out.find("intent: " + *picked[0].intent_gold), std::string::npos);
  EXPECT_NE(r.out.find("intent: " + *picked[1].intent_gold), std::string::npos);
}

TEST(Cli, ReplSurvivesAFailingQuery) {
  TempDir s("repl_empty");
  const CliResult r =
      cli({"repl", "--backend", data_file("config/replay.json"), "--scripts", s.str()}, "hello\n");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("query failed"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace geoflow
