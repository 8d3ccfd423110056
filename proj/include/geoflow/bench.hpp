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

#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "geoflow/agent.hpp"
#include "geoflow/eval.hpp"

namespace geoflow {

using BackendFactory = std::function<std::unique_ptr<ChatBackend>(const TaskSpec&)>;

struct ExecuteOptions {
  AgentConfig agent;
  std::size_t parallel = 1;
  std::optional<FaultPlan> faults;
  std::string artifact_dir;  // empty: keep artifacts in memory
};

/// Runs every task on a worker pool of `parallel` threads. Results come back
/// in task order, so the output does not depend on scheduling. Worlds are
/// generated once per distinct scenario.
std::vector<RunRecord> execute_tasks(const std::vector<TaskSpec>& tasks, const WorkflowSpec& wf,
                                     const BackendFactory& factory, const ExecuteOptions& options);

struct BenchOptions {
  std::string tasks_path;
  std::string workflow_path;
  std::string backend_path;
  std::string pricing_path;
  std::string out_dir;
  std::string scripts_override;  // replaces the replay config's scripts_dir
  AgentConfig agent;
  std::size_t parallel = 1;
  std::optional<FaultPlan> faults;
};

struct BenchResult {
  MetricsReport report;
  std::vector<RunRecord> runs;
  /// 0 when every task succeeded, 1 otherwise.
  int exit_code = 0;
};

/// Loads and checks every input first; any problem there throws ConfigError
/// before a run starts or a file is written. Writes `runs/`, `transcripts/`,
/// `artifacts/`, `report.json` and `report.txt` under out_dir.
BenchResult run_bench(const BenchOptions& options);

/// Writes one run's `{task_id}.run.json` and `{task_id}.transcript.jsonl`.
void write_run_files(const RunRecord& run, const std::string& out_dir);

}  // namespace geoflow
