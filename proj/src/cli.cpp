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

#include "geoflow/cli.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "geoflow/bench.hpp"
#include "geoflow/taskgen.hpp"

namespace geoflow {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailures = 1;
constexpr int kExitConfig = 2;

std::string data_path(const std::string& rel) { return std::string(GEOFLOW_DATA_DIR) + "/" + rel; }

struct CatalogFlags {
  std::uint64_t seed = 7;
  std::size_t images = 400;
  std::size_t regions = 8;

  void add(CLI::App* cmd) {
    cmd->add_option("--catalog-seed", seed, "Catalog seed")->capture_default_str();
    cmd->add_option("--images", images, "Number of catalog images")->capture_default_str();
    cmd->add_option("--regions", regions, "Number of regions")->capture_default_str();
  }
  CatalogParams params() const { return {seed, images, regions}; }
};

struct AgentFlags {
  std::string mode = "stateflow";
  bool strict = false;
  int max_turns = 25;

  void add(CLI::App* cmd) {
    cmd->add_option("--mode", mode, "stateflow, react or react-errtrm")
        ->check(CLI::IsMember({"stateflow", "react", "react-errtrm"}))
        ->capture_default_str();
    cmd->add_flag("--strict-transitions", strict, "Abort on transitions the workflow does not allow");
    cmd->add_option("--max-turns", max_turns, "Turn limit per task")->check(CLI::PositiveNumber)
        ->capture_default_str();
  }
  AgentConfig config() const {
    AgentConfig c = AgentConfig::for_mode(agent_mode_from_string(mode));
    c.max_turns = max_turns;
    c.transition_mode = strict ? TransitionMode::strict : TransitionMode::clamp;
    return c;
  }
};

struct FaultFlags {
  double rate = 0.0;
  std::uint64_t seed = 11;

  void add(CLI::App* cmd, const char* seed_flag) {
    cmd->add_option("--fault-rate", rate, "Injected tool fault probability")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_option(seed_flag, seed, "Fault plan seed")->capture_default_str();
  }
  std::optional<FaultPlan> plan() const {
    if (rate <= 0.0) return std::nullopt;
    FaultPlan p;
    p.fault_rate = rate;
    p.seed = seed;
    return p;
  }
};

BackendConfig backend_with_scripts(const std::string& path, const std::string& scripts) {
  BackendConfig cfg = load_backend_config(path);
  if (!scripts.empty()) cfg.scripts_dir = scripts;
  return cfg;
}

void print_run_summary(std::ostream& out, const RunRecord& run, const std::string& artifact_dir) {
  out << "task " << run.task_id << ": " << to_string(run.status);
  if (!run.abort_reason.empty() && run.status != RunStatus::completed) out << " (" << run.abort_reason << ")";
  out << "\n";
  if (run.intent_resolved) out << "  intent: " << *run.intent_resolved << "\n";
  out << "  answer: ";
  if (run.final_answer) {
    out << run.final_answer->text;
    if (run.final_answer->value) out << " [value " << format_number(*run.final_answer->value) << "]";
  } else {
    out << "(none)";
  }
  out << "\n  artifacts:";
  if (run.artifacts.empty()) out << " (none)";
  for (const auto& a : run.artifacts) {
    out << " " << (artifact_dir.empty() ? a : (fs::path(artifact_dir) / a).string());
  }
  out << "\n  states:";
  for (std::size_t i = 0; i < run.states_visited.size(); ++i) {
    out << (i ? " -> " : " ") << run.states_visited[i];
  }
  if (run.states_visited.empty()) out << " (none)";
  const auto& t = run.usage.tokens;
  out << "\n  tokens: in " << t.input_tokens << ", cached " << t.cached_tokens << ", out "
      << t.output_tokens << (t.estimated ? " (estimated)" : "") << "; backend calls "
      << run.counts.backend_calls() << "; cost " << format_number(run.cost) << "\n";
}

int cmd_gen_catalog(const CatalogFlags& cat, const std::string& out_dir, std::ostream& out) {
  World world = generate_catalog(cat.params());
  write_catalog(world, out_dir);
  out << "wrote " << world.images().size() << " images, " << world.regions().size()
      << " regions and " << world.series().size() << " series rows to " << out_dir << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::istream& in, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"geoflow: state-driven tool-calling agent engine for Earth-observation workflows"};
  app.require_subcommand(1);

  // gen-catalog
  CatalogFlags cat_gc;
  std::string gc_out;
  auto* gc = app.add_subcommand("gen-catalog", "Generate the synthetic catalog files");
  cat_gc.add(gc);
  gc->add_option("--seed", cat_gc.seed, "Catalog seed")->capture_default_str();
  gc->add_option("--out", gc_out, "Output directory")->required();

  // gen-tasks
  CatalogFlags cat_gt;
  std::string gt_templates = data_path("templates/eo_default.json");
  std::string gt_workflow = data_path("workflows/eo_multi.flow");
  std::string gt_out, gt_scripts, gt_scenario = "gold";
  std::size_t gt_n = 13;
  std::uint64_t gt_task_seed = 1;
  FaultFlags gt_faults;
  auto* gt = app.add_subcommand("gen-tasks", "Generate benchmark tasks and gold replay scripts");
  cat_gt.add(gt);
  gt->add_option("--seed", cat_gt.seed, "Catalog seed")->capture_default_str();
  gt->add_option("--templates", gt_templates, "Template document")->capture_default_str();
  gt->add_option("--n", gt_n, "Variants per template")->capture_default_str();
  gt->add_option("--task-seed", gt_task_seed, "Slot sampling seed")->capture_default_str();
  gt->add_option("--out", gt_out, "Tasks file (line-delimited JSON)")->required();
  gt->add_option("--scripts", gt_scripts, "Also write gold replay scripts into this directory");
  gt->add_option("--workflow", gt_workflow, "Workflow the scripts drive")->capture_default_str();
  gt->add_option("--scenario", gt_scenario, "gold or premature")
      ->check(CLI::IsMember({"gold", "premature"}))
      ->capture_default_str();
  gt_faults.add(gt, "--fault-seed");

  // run
  std::string run_tasks, run_task_id, run_query, run_workflow = data_path("workflows/eo_multi.flow");
  std::string run_backend, run_out, run_pricing, run_scripts;
  CatalogFlags cat_run;
  AgentFlags agent_run;
  FaultFlags run_faults;
  auto* rn = app.add_subcommand("run", "Run a single task");
  rn->add_option("--tasks", run_tasks, "Tasks file");
  rn->add_option("--task-id", run_task_id, "Task to run from --tasks");
  rn->add_option("--query", run_query, "Ad-hoc query instead of a task");
  rn->add_option("--workflow", run_workflow, "Workflow document")->capture_default_str();
  rn->add_option("--backend", run_backend, "Backend config")->required();
  rn->add_option("--scripts", run_scripts, "Override the replay scripts directory");
  rn->add_option("--out", run_out, "Output directory for run files and artifacts");
  rn->add_option("--pricing", run_pricing, "Pricing document for the cost line");
  cat_run.add(rn);
  agent_run.add(rn);
  run_faults.add(rn, "--seed");

  // bench
  BenchOptions bo;
  bo.workflow_path = data_path("workflows/eo_multi.flow");
  bo.pricing_path = data_path("config/pricing.toml");
  std::string bench_scripts;
  AgentFlags agent_bench;
  FaultFlags bench_faults;
  auto* bn = app.add_subcommand("bench", "Run every task and write the report");
  bn->add_option("--tasks", bo.tasks_path, "Tasks file")->required();
  bn->add_option("--workflow", bo.workflow_path, "Workflow document")->capture_default_str();
  bn->add_option("--backend", bo.backend_path, "Backend config")->required();
  bn->add_option("--pricing", bo.pricing_path, "Pricing document")->capture_default_str();
  bn->add_option("--scripts", bench_scripts, "Override the replay scripts directory");
  bn->add_option("--out", bo.out_dir, "Output directory")->required();
  bn->add_option("--parallel", bo.parallel, "Worker threads")->capture_default_str();
  agent_bench.add(bn);
  bench_faults.add(bn, "--seed");

  // report
  std::string rep_tasks, rep_dir, rep_out;
  auto* rp = app.add_subcommand("report", "Aggregate run files into a report");
  rp->add_option("--tasks", rep_tasks, "Tasks file")->required();
  rp->add_option("--runs", rep_dir, "Bench output directory (holding runs/ and artifacts/)")
      ->required();
  rp->add_option("--out", rep_out, "Write report.json here");

  // repl
  std::string repl_workflow = data_path("workflows/eo_multi.flow"), repl_backend, repl_out,
              repl_pricing, repl_scripts;
  CatalogFlags cat_repl;
  AgentFlags agent_repl;
  auto* rl = app.add_subcommand("repl", "Interactive query loop");
  rl->add_option("--workflow", repl_workflow, "Workflow document")->capture_default_str();
  rl->add_option("--backend", repl_backend, "Backend config")->required();
  rl->add_option("--scripts", repl_scripts, "Override the replay scripts directory");
  rl->add_option("--out", repl_out, "Output directory for run files and artifacts");
  rl->add_option("--pricing", repl_pricing, "Pricing document for the cost line");
  cat_repl.add(rl);
  agent_repl.add(rl);

  // record-fixtures
  std::string rec_backend, rec_out, rec_prompt = "Load the xview1 product. Reply OK when done.";
  auto* rf = app.add_subcommand("record-fixtures", "Record a request/response pair from a live endpoint");
  rf->add_option("--backend", rec_backend, "Backend config (openai_compat or ollama)")->required();
  rf->add_option("--out", rec_out, "Output prefix, e.g. fixtures/openai_toolcall")->required();
  rf->add_option("--prompt", rec_prompt, "User prompt")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (app.get_subcommands().size() == 1) {
      err << app.get_subcommands().front()->help();
    } else {
      err << app.help();
    }
    return kExitConfig;
  }

  try {
    if (*gc) return cmd_gen_catalog(cat_gc, gc_out, out);

    if (*gt) {
      std::vector<TaskTemplate> templates = load_templates(gt_templates);
      World world = generate_catalog(cat_gt.params());
      TaskGenOptions go;
      go.n_per_template = gt_n;
      go.seed = gt_task_seed;
      std::vector<TaskSpec> tasks = generate_tasks(world, cat_gt.params(), templates, go);
      std::optional<WorkflowSpec> wf;
      if (!gt_scripts.empty()) {
        wf = load_workflow_file(gt_workflow, sandbox_registry());
        ScriptOptions so;
        so.faults = gt_faults.plan();
        so.premature_terminate = gt_scenario == "premature";
        std::vector<std::pair<std::string, std::string>> scripts;
        for (const auto& t : tasks) {
          scripts.emplace_back((fs::path(gt_scripts) / (t.task_id + ".replay.json")).string(),
                               to_json(build_replay_script(t, *wf, so)).dump(2) + "\n");
        }
        for (const auto& [path, body] : scripts) write_file(path, body);
      }
      write_file(gt_out, tasks_jsonl(tasks));
      out << "wrote " << tasks.size() << " tasks to " << gt_out;
      if (!gt_scripts.empty()) out << " and " << tasks.size() << " replay scripts to " << gt_scripts;
      out << "\n";
      return kExitOk;
    }

    if (*rn) {
      if (run_query.empty() == run_task_id.empty()) {
        throw ConfigError("give exactly one of --task-id (with --tasks) or --query");
      }
      TaskSpec task;
      if (!run_task_id.empty()) {
        if (run_tasks.empty()) throw ConfigError("--task-id needs --tasks");
        bool found = false;
        for (auto& t : load_tasks(run_tasks)) {
          if (t.task_id == run_task_id) {
            task = std::move(t);
            found = true;
          }
        }
        if (!found) throw ConfigError("no task '" + run_task_id + "' in " + run_tasks);
      } else {
        task.task_id = "query-01";
        task.query = run_query;
        task.scenario = cat_run.params();
      }
      WorkflowSpec wf = load_workflow_file(run_workflow, sandbox_registry());
      BackendConfig bc = backend_with_scripts(run_backend, run_scripts);
      std::optional<PricingTable> pricing;
      if (!run_pricing.empty()) pricing = load_pricing(run_pricing);
      World world = generate_catalog(task.scenario);
      SessionOptions so;
      so.task_id = task.task_id;
      so.faults = run_faults.plan();
      if (!run_out.empty()) so.artifact_dir = (fs::path(run_out) / "artifacts").string();
      Session session(world, so);
      auto backend = make_backend(bc, task.task_id);
      RunRecord run = run_task(task, wf, *backend, session, agent_run.config());
      if (pricing) run.cost = compute_cost(run, *pricing, bc.cost_basis, bc.model);
      if (!run_out.empty()) write_run_files(run, run_out);
      print_run_summary(out, run, so.artifact_dir);
      if (!run_task_id.empty()) {
        const bool ok = success_check(task, run);
        const double corr = match_trajectory(task.gold_trajectory, run.executed_calls()).correctness;
        out << "  success: " << (ok ? "yes" : "no") << "; correctness " << format_number(corr) << "\n";
        return ok ? kExitOk : kExitFailures;
      }
      return run.status == RunStatus::completed ? kExitOk : kExitFailures;
    }

    if (*bn) {
      bo.agent = agent_bench.config();
      bo.faults = bench_faults.plan();
      bo.scripts_override = bench_scripts;
      BenchResult r = run_bench(bo);
      out << render_report_table(r.report);
      out << "wrote " << r.runs.size() << " run files and report.json to " << bo.out_dir << "\n";
      return r.exit_code;
    }

    if (*rp) {
      std::vector<TaskSpec> tasks = load_tasks(rep_tasks);
      std::vector<RunRecord> runs;
      for (const auto& t : tasks) {
        const fs::path p = fs::path(rep_dir) / "runs" / (t.task_id + ".run.json");
        if (!fs::is_regular_file(p)) throw ConfigError("missing run file " + p.string());
        RunRecord r = run_from_json(Json::parse(read_file(p.string())));
        runs.push_back(std::move(r));
      }
      MetricsReport rep = aggregate_report(runs, tasks, (fs::path(rep_dir) / "artifacts").string());
      if (!rep_out.empty()) {
        write_file((fs::path(rep_out) / "report.json").string(), to_json(rep).dump(2) + "\n");
      }
      out << render_report_table(rep);
      const bool all_ok = std::all_of(rep.rows.begin(), rep.rows.end(),
                                      [](const TaskRow& r) { return r.success; });
      return all_ok ? kExitOk : kExitFailures;
    }

    if (*rl) {
      WorkflowSpec wf = load_workflow_file(repl_workflow, sandbox_registry());
      BackendConfig bc = backend_with_scripts(repl_backend, repl_scripts);
      std::optional<PricingTable> pricing;
      if (!repl_pricing.empty()) pricing = load_pricing(repl_pricing);
      World world = generate_catalog(cat_repl.params());
      const AgentConfig cfg = agent_repl.config();
      int n = 0;
      std::string line;
      while (true) {
        out << "geoflow> " << std::flush;
        if (!std::getline(in, line)) break;
        if (trim(line).empty()) continue;
        char id[32];
        std::snprintf(id, sizeof(id), "repl-%02d", ++n);
        TaskSpec task;
        task.task_id = id;
        task.query = trim(line);
        task.scenario = cat_repl.params();
        SessionOptions so;
        so.task_id = task.task_id;
        if (!repl_out.empty()) so.artifact_dir = (fs::path(repl_out) / "artifacts").string();
        Session session(world, so);
        try {
          auto backend = make_backend(bc, task.task_id);
          RunRecord run = run_task(task, wf, *backend, session, cfg);
          if (pricing) run.cost = compute_cost(run, *pricing, bc.cost_basis, bc.model);
          if (!repl_out.empty()) write_run_files(run, repl_out);
          print_run_summary(out, run, so.artifact_dir);
        } catch (const std::exception& e) {
          err << "query failed: " << e.what() << "\n";
        }
      }
      out << "\n";
      return kExitOk;
    }

    if (*rf) {
      BackendConfig bc = load_backend_config(rec_backend);
      if (bc.kind == BackendKind::replay) throw ConfigError("record-fixtures needs a live backend");
      std::vector<ChatMessage> msgs;
      Ledger l;
      l.push(Role::system, "You are a geospatial analysis agent. Use the tools when needed.");
      l.push(Role::user, rec_prompt);
      msgs = l.messages();
      const ToolRegistry& reg = sandbox_registry();
      std::vector<ToolDefinition> tools{*reg.find("load_product"), *reg.find("filter_temporal")};
      record_fixture(bc, msgs, tools, rec_out);
      out << "wrote " << rec_out << ".req.json, .resp.json and .meta.json\n";
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const WorkflowError& e) {
    err << "workflow error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TaskError& e) {
    err << "task error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const TemplateError& e) {
    err << "template error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PricingError& e) {
    err << "pricing error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << "\n";
    return kExitFailures;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace geoflow
