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

#include "geoflow/bench.hpp"

#include <atomic>
#include <filesystem>
#include <map>
#include <thread>

namespace geoflow {

namespace fs = std::filesystem;

std::vector<RunRecord> execute_tasks(const std::vector<TaskSpec>& tasks, const WorkflowSpec& wf,
                                     const BackendFactory& factory, const ExecuteOptions& options) {
  std::map<std::tuple<std::uint64_t, std::size_t, std::size_t>, World> worlds;
  for (const auto& t : tasks) {
    const auto key = std::make_tuple(t.scenario.seed, t.scenario.n_images, t.scenario.n_regions);
    if (!worlds.count(key)) worlds.emplace(key, generate_catalog(t.scenario));
  }

  std::vector<RunRecord> runs(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      const TaskSpec& task = tasks[i];
      const World& world = worlds.at(
          std::make_tuple(task.scenario.seed, task.scenario.n_images, task.scenario.n_regions));
      SessionOptions so;
      so.task_id = task.task_id;
      so.artifact_dir = options.artifact_dir;
      so.faults = options.faults;
      Session session(world, so);
      try {
        std::unique_ptr<ChatBackend> backend = factory(task);
        runs[i] = run_task(task, wf, *backend, session, options.agent);
      } catch (const std::exception& e) {
        RunRecord r;
        r.task_id = task.task_id;
        r.mode = options.agent.mode;
        r.status = RunStatus::aborted;
        r.abort_reason = std::string("backend setup failed: ") + e.what();
        runs[i] = std::move(r);
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(options.parallel, tasks.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < n; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return runs;
}

void write_run_files(const RunRecord& run, const std::string& out_dir) {
  const fs::path root(out_dir);
  write_file((root / "runs" / (run.task_id + ".run.json")).string(), to_json(run).dump(2) + "\n");
  write_file((root / "transcripts" / (run.task_id + ".transcript.jsonl")).string(),
             run.transcript.to_jsonl());
}

BenchResult run_bench(const BenchOptions& o) {
  // Everything that can be wrong with the inputs is checked here.
  if (o.parallel < 1) throw ConfigError("--parallel must be at least 1");
  if (o.out_dir.empty()) throw ConfigError("an output directory is required");
  std::vector<TaskSpec> tasks;
  WorkflowSpec wf;
  BackendConfig backend;
  PricingTable pricing;
  try {
    tasks = load_tasks(o.tasks_path);
  } catch (const Error& e) {
    throw ConfigError(std::string("tasks: ") + e.what());
  }
  if (tasks.empty()) throw ConfigError("tasks: no tasks in " + o.tasks_path);
  try {
    wf = load_workflow_file(o.workflow_path, sandbox_registry());
  } catch (const Error& e) {
    throw ConfigError(std::string("workflow: ") + e.what());
  }
  backend = load_backend_config(o.backend_path);
  if (!o.scripts_override.empty()) backend.scripts_dir = o.scripts_override;
  try {
    pricing = load_pricing(o.pricing_path);
  } catch (const Error& e) {
    throw ConfigError(std::string("pricing: ") + e.what());
  }
  try {
    (void)compute_cost(TokenTotals{}, 0.0, pricing, backend.cost_basis, backend.model);
  } catch (const PricingError& e) {
    throw ConfigError(std::string("pricing: ") + e.what());
  }
  if (backend.kind == BackendKind::replay) {
    for (const auto& t : tasks) {
      const fs::path script = fs::path(backend.scripts_dir) / (t.task_id + ".replay.json");
      if (!fs::is_regular_file(script)) {
        throw ConfigError("replay script missing for " + t.task_id + ": " + script.string());
      }
    }
  }
  if (o.faults && (o.faults->fault_rate < 0 || o.faults->fault_rate > 1)) {
    throw ConfigError("--fault-rate must lie in [0, 1]");
  }

  ExecuteOptions ex;
  ex.agent = o.agent;
  ex.parallel = o.parallel;
  ex.faults = o.faults;
  ex.artifact_dir = (fs::path(o.out_dir) / "artifacts").string();
  fs::create_directories(ex.artifact_dir);
  BackendFactory factory = [&backend](const TaskSpec& t) { return make_backend(backend, t.task_id); };

  BenchResult result;
  result.runs = execute_tasks(tasks, wf, factory, ex);
  for (auto& run : result.runs) run.cost = compute_cost(run, pricing, backend.cost_basis, backend.model);
  for (const auto& run : result.runs) write_run_files(run, o.out_dir);

  result.report = aggregate_report(result.runs, tasks, ex.artifact_dir);
  write_file((fs::path(o.out_dir) / "report.json").string(), to_json(result.report).dump(2) + "\n");
  write_file((fs::path(o.out_dir) / "report.txt").string(), render_report_table(result.report));
  const bool all_ok = std::all_of(result.report.rows.begin(), result.report.rows.end(),
                                  [](const TaskRow& r) { return r.success; });
  result.exit_code = all_ok ? 0 : 1;
  return result;
}

}  // namespace geoflow
