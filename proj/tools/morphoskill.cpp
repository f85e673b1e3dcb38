#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "morphoskill/errors.hpp"
#include "morphoskill/evaluation.hpp"
#include "morphoskill/gateway.hpp"
#include "morphoskill/orchestrator.hpp"
#include "morphoskill/prompt_blocks.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace morphoskill;

namespace {

enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kUnavailable = 3,
  kMissingSource = 4,
  kSchemaError = 5,
};

struct RunFlags {
  std::string config_path;
  std::string out;
  std::string task;
  std::optional<int> scale;
  std::optional<int> budget;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string evaluator;
  std::string backend;
  std::optional<int> parallelism;
  std::string baseline;
  bool no_diagnose = false;
  bool no_merge = false;
  bool pure_llm = false;
  bool no_l2l3 = false;
  bool quiet = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_mode) {
  cmd->add_option("--config", f.config_path, "key = value run configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out, "run directory");
  cmd->add_option("--task", f.task, "task name, e.g. Walker");
  cmd->add_option("--scale", f.scale, "grid size n (5 or 10)");
  cmd->add_option("--budget", f.budget, "morphology evaluations");
  cmd->add_option("--seed", f.seed, "master seed");
  if (with_mode) cmd->add_option("--mode", f.mode, "cold_start | ga_only | transfer_with_ref | transfer_skill_only");
  cmd->add_option("--evaluator", f.evaluator, "surrogate[:profile] | external:<cmd:...|tcp:host:port>");
  cmd->add_option("--backend", f.backend, "heuristic | scripted:<dir> | remote");
  cmd->add_option("--parallelism", f.parallelism, "concurrent evaluations and proposals");
  cmd->add_option("--baseline", f.baseline, "ga_only run directory used for summary.csv");
  cmd->add_flag("--no-diagnose", f.no_diagnose, "ablation: skip Diagnose");
  cmd->add_flag("--no-merge", f.no_merge, "ablation: skip Merge");
  cmd->add_flag("--pure-llm", f.pure_llm, "ablation: every slot is skill-conditioned");
  cmd->add_flag("--no-l2l3", f.no_l2l3, "ablation: hide L2 rules and L3 history from Propose");
  cmd->add_flag("-q,--quiet", f.quiet, "no per-generation progress");
}

RunConfig build_config(const RunFlags& f, const std::string& forced_mode = {}, const std::string& source = {}) {
  RunConfig cfg = default_config("Walker", 5);
  if (!f.config_path.empty()) cfg = load_config(f.config_path, cfg);
  std::string text;
  auto put = [&](const std::string& k, const std::string& v) { text += k + " = " + v + "\n"; };
  if (!f.task.empty()) put("task", f.task);
  if (f.scale) put("scale", std::to_string(*f.scale));
  if (f.budget) put("budget", std::to_string(*f.budget));
  if (f.seed) put("master_seed", std::to_string(*f.seed));
  if (!forced_mode.empty()) {
    put("mode", forced_mode);
  } else if (!f.mode.empty()) {
    put("mode", f.mode);
  }
  if (!f.evaluator.empty()) put("evaluator", f.evaluator);
  if (!f.backend.empty()) put("backend", f.backend);
  if (f.parallelism) put("parallelism", std::to_string(*f.parallelism));
  if (!f.baseline.empty()) put("baseline_run", f.baseline);
  if (!source.empty()) put("source_run", source);
  if (f.no_diagnose) put("no_diagnose", "true");
  if (f.no_merge) put("no_merge", "true");
  if (f.pure_llm) put("pure_llm", "true");
  if (f.no_l2l3) put("no_l2_l3", "true");
  cfg = parse_config(text, cfg);
  validate(cfg);
  return cfg;
}

std::string default_out(const RunConfig& c) {
  return fmt::format("runs/{}-{}-{}-s{}", c.task, grid_label(c.scale), to_string(c.mode), c.master_seed);
}

void progress(const json& rec) {
  const auto best = rec.at("best_fitness");
  const auto& stats = rec.at("library_stats");
  std::cout << fmt::format("gen {:>3}  evals {:>5}  best {:>8}  skills {}  leaves +{}/-{}  pool {}{}\n",
                           rec.at("generation").get<int>(), rec.at("evals_used").get<long long>(),
                           best.is_null() ? std::string("n/a") : fmt::format("{:.4f}", best.get<double>()),
                           stats.at("skills").get<int>(), stats.at("positive_leaves").get<int>(),
                           stats.at("negative_leaves").get<int>(), stats.at("pool").get<int>(),
                           rec.at("partial").get<bool>() ? "  (partial)" : "");
}

int execute_run(const RunConfig& cfg, const fs::path& out, bool resume, bool quiet) {
  const auto outcome = run_to_completion(cfg, out, resume, quiet ? std::function<void(const json&)>{} : progress);
  const auto best = outcome.state.best_fitness();
  std::cout << fmt::format("run directory: {}\nevaluations: {}\nbest fitness: {}\n", out.string(),
                           outcome.state.evals_used, best ? fmt::format("{:.6f}", *best) : std::string("n/a"));
  return kOk;
}

Body read_body(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MalformedBody("cannot read body file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  // best_body.json wraps the matrix in an object.
  auto j = json::parse(text, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("body")) return body_from_json(j.at("body"));
  return parse_body_text(text);
}

void print_validity(const std::string& label, const Body& b) {
  const auto r = check_validity(b);
  std::cout << fmt::format("{} ({}): valid={} connected={} actuator={} legal_codes={} components={}\n", label,
                           grid_label(b.size()), r.is_valid, r.connected, r.has_actuator, r.legal_codes,
                           r.component_count);
}

int library_inspect(const SkillLibrary& lib, double delta_max) {
  std::cout << fmt::format("library task={} scale={} generation={}\n", lib.task.empty() ? "-" : lib.task, lib.scale,
                           lib.generation);
  std::cout << fmt::format("{:<24} {:<10} {:>4} {:>4} {:>5} {:>8}  {}\n", "skill_id", "structure", "+L2", "-L2", "n_s",
                           "weight", "condition");
  std::size_t pos = 0;
  std::size_t neg = 0;
  for (const auto& s : lib.skills) {
    pos += s.l2_positive.size();
    neg += s.l2_negative.size();
    std::cout << fmt::format("{:<24} {:<10} {:>4} {:>4} {:>5} {:>8.4f}  {}{}\n", s.skill_id, s.l1_structure,
                             s.l2_positive.size(), s.l2_negative.size(), s.l3_observations.size(),
                             skill_weight(s, delta_max), s.l1_condition, s.imported ? "  [imported]" : "");
  }
  std::cout << fmt::format("totals (skills / positive / negative): {} / {} / {}\n", lib.skills.size(), pos, neg);
  std::cout << fmt::format("observations: {}  unassigned pool: {}\n", lib.observation_count(), lib.pool.size());
  return kOk;
}

int library_merge_dry_run(const SkillLibrary& lib, const std::string& backend_spec) {
  if (lib.skills.size() < 2) {
    std::cout << "fewer than two skills; nothing to merge\n";
    return kOk;
  }
  auto backend = make_backend(backend_spec, RemoteBackendConfig{}, 0);
  const auto request = render_prompt(PromptTemplate::Merge, {{"skills_full_content", merge_skills_block(lib.skills)}},
                                     lib.generation, 0);
  std::cout << "--- prompt ---\n" << request.rendered_text << "\n--- proposed clusters ---\n";
  const auto out = parse_merge(dispatch(request, *backend));
  if (out.dropped) std::cout << "response dropped: " << out.note << "\n";
  if (out.clusters.empty()) std::cout << "(none)\n";
  for (const auto& c : out.clusters) {
    std::string ids;
    for (const auto& id : c.skill_ids) ids += (ids.empty() ? "" : ", ") + id;
    std::cout << fmt::format("{} <- [{}]  {}\n", c.group_label, ids, c.reason);
  }
  if (!out.clusters.empty()) {
    try {
      const auto merged = apply_merge(lib, out.clusters);
      std::cout << fmt::format("would leave {} skills (from {})\n", merged.skills.size(), lib.skills.size());
    } catch (const Error& e) {
      std::cout << "clusters would be rejected: " << e.kind() << ": " << e.what() << "\n";
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Skill-library morphology search for voxel soft robots"};
  app.require_subcommand(1);
  app.allow_extras(false);

  RunFlags run_flags;
  auto* run = app.add_subcommand("run", "run a search from scratch (or ga_only baseline)");
  add_run_flags(run, run_flags, true);

  RunFlags transfer_flags;
  std::string source;
  bool with_ref = false;
  bool skill_only = false;
  auto* transfer = app.add_subcommand("transfer", "warm-start a run from a source run's library");
  add_run_flags(transfer, transfer_flags, false);
  transfer->add_option("--source", source, "source run directory")->required();
  auto* ref_flag = transfer->add_flag("--with-ref", with_ref, "inject source elite bodies into prompts");
  auto* skill_flag = transfer->add_flag("--skill-only", skill_only, "import skills only");
  ref_flag->excludes(skill_flag);

  std::string resume_dir;
  bool resume_quiet = false;
  auto* resume = app.add_subcommand("resume", "continue an interrupted run");
  resume->add_option("run_dir", resume_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  resume->add_flag("-q,--quiet", resume_quiet, "no per-generation progress");

  std::string report_dir;
  std::string report_baseline;
  auto* report = app.add_subcommand("report", "recompute summary.csv and print the comparison table");
  report->add_option("run_dir", report_dir, "run directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("--baseline", report_baseline, "ga_only run directory")->check(CLI::ExistingDirectory);

  std::string lib_action;
  std::string lib_path;
  std::string lib_out;
  std::string lib_backend = "heuristic";
  double lib_delta = 2.0;
  auto* library = app.add_subcommand("library", "inspect, merge-dry-run or export a skill library");
  library->add_option("action", lib_action, "inspect | merge-dry-run | export")
      ->required()
      ->check(CLI::IsMember({"inspect", "merge-dry-run", "export"}));
  library->add_option("library", lib_path, "library.json or run directory")->required();
  library->add_option("--out", lib_out, "export destination (stdout when omitted)");
  library->add_option("--backend", lib_backend, "backend for merge-dry-run");
  library->add_option("--delta-max", lib_delta, "weight normalizer");

  std::string eval_body;
  std::string eval_task = "Walker";
  std::string eval_spec = "surrogate";
  std::uint64_t eval_seed = 0;
  std::int64_t eval_steps = kDefaultBudgetSteps;
  double eval_timeout = 3600.0;
  auto* evaluate = app.add_subcommand("evaluate", "score one body");
  evaluate->add_option("body", eval_body, "body file (JSON matrix or whitespace rows)")->required();
  evaluate->add_option("--task", eval_task, "task name");
  evaluate->add_option("--evaluator", eval_spec, "surrogate[:profile] | external:<endpoint>");
  evaluate->add_option("--seed", eval_seed, "controller seed");
  evaluate->add_option("--budget-steps", eval_steps, "controller training steps");
  evaluate->add_option("--timeout", eval_timeout, "seconds");

  std::string up_body;
  std::string up_out;
  int up_factor = 2;
  auto* upsample = app.add_subcommand("upsample", "tile a body k x k per voxel");
  upsample->add_option("body", up_body, "body file")->required();
  upsample->add_option("--factor", up_factor, "tiling factor")->check(CLI::PositiveNumber);
  upsample->add_option("--out", up_out, "output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (app.exit(e) == 0) return kOk;
    std::cerr << app.help();
    return kConfigError;
  }

  try {
    if (*run) {
      const auto cfg = build_config(run_flags);
      if (cfg.mode == RunMode::TransferWithRef || cfg.mode == RunMode::TransferSkillOnly) {
        throw ConfigInvalid("use the transfer verb for transfer modes");
      }
      return execute_run(cfg, run_flags.out.empty() ? default_out(cfg) : run_flags.out, false, run_flags.quiet);
    }
    if (*transfer) {
      if (!with_ref && !skill_only) throw ConfigInvalid("transfer needs --with-ref or --skill-only");
      if (!fs::exists(RunPaths{source}.library())) {
        throw SourceLibraryMissing("no library.json under " + source);
      }
      const auto cfg = build_config(transfer_flags, with_ref ? "transfer_with_ref" : "transfer_skill_only", source);
      return execute_run(cfg, transfer_flags.out.empty() ? default_out(cfg) : transfer_flags.out, false,
                         transfer_flags.quiet);
    }
    if (*resume) {
      const RunPaths paths{resume_dir};
      if (!fs::exists(paths.config())) throw ConfigInvalid("no config.snapshot in " + resume_dir);
      return execute_run(load_config(paths.config()), resume_dir, true, resume_quiet);
    }
    if (*report) {
      const RunPaths paths{report_dir};
      if (!fs::exists(paths.config())) throw ConfigInvalid("no config.snapshot in " + report_dir);
      const auto cfg = load_config(paths.config());
      std::optional<fs::path> baseline;
      if (!report_baseline.empty()) {
        baseline = fs::path(report_baseline);
      } else if (!cfg.baseline_run.empty()) {
        baseline = fs::path(cfg.baseline_run);
      }
      const auto summary = summary_for_run(report_dir, cfg.task, baseline);
      {
        std::ofstream out(paths.summary(), std::ios::trunc);
        if (!out) throw IoError("cannot write " + paths.summary().string());
        out << summary;
      }
      if (baseline) {
        const auto row = compare(cfg.task, load_run_curve(report_dir), load_run_curve(*baseline));
        std::cout << summary_table(std::span<const ComparisonSummary>(&row, 1));
      } else {
        std::cout << summary;
      }
      return kOk;
    }
    if (*library) {
      fs::path path = lib_path;
      if (fs::is_directory(path)) path = RunPaths{path}.library();
      if (!fs::exists(path)) throw SourceLibraryMissing("no library at " + path.string());
      const auto lib = load_library(path.string());
      if (lib_action == "inspect") return library_inspect(lib, lib_delta);
      if (lib_action == "merge-dry-run") return library_merge_dry_run(lib, lib_backend);
      const auto exported = import_for_transfer(lib);
      if (lib_out.empty()) {
        std::cout << to_json(exported).dump(2) << "\n";
      } else {
        save_library(exported, lib_out);
        std::cout << fmt::format("exported {} skills, {} leaves, 0 observations to {}\n", exported.skills.size(),
                                 exported.leaf_count(), lib_out);
      }
      return kOk;
    }
    if (*evaluate) {
      Body body;
      try {
        body = read_body(eval_body);
      } catch (const Error& e) {
        throw ConfigInvalid(e.what());
      }
      print_validity("body", body);
      auto evaluator = make_evaluator(eval_spec, std::chrono::milliseconds(static_cast<long long>(eval_timeout * 1000)));
      EvalRequest req;
      req.request_id = "cli";
      req.body = body;
      req.task = env_id(eval_task, body.size());
      req.scale = body.size();
      req.controller_seed = eval_seed;
      req.budget_steps = eval_steps;
      const auto results = evaluate_batch({req}, *evaluator, 1);
      if (!results[0].ok()) {
        std::cerr << "evaluation failed: " << results[0].error.value_or("unknown error") << "\n";
        return kFailure;
      }
      std::cout << fmt::format("fitness: {}\n", *results[0].fitness);
      return kOk;
    }
    if (*upsample) {
      Body body;
      try {
        body = read_body(up_body);
      } catch (const Error& e) {
        throw ConfigInvalid(e.what());
      }
      const Body tiled = upsample_tiling(body, up_factor);
      print_validity("source", body);
      print_validity("tiled", tiled);
      const std::string text = to_json(tiled).dump() + "\n";
      if (up_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(up_out, std::ios::trunc);
        if (!out) throw IoError("cannot write " + up_out);
        out << text;
      }
      return kOk;
    }
  } catch (const ConfigInvalid& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const MalformedBody& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kConfigError;
  } catch (const SourceLibraryMissing& e) {
    std::cerr << "missing source library: " << e.what() << "\n";
    return kMissingSource;
  } catch (const SchemaViolation& e) {
    std::cerr << "schema violation: " << e.what() << "\n";
    return kSchemaError;
  } catch (const BackendUnavailable& e) {
    std::cerr << "backend unavailable: " << e.what() << "\n";
    return kUnavailable;
  } catch (const EvaluatorUnavailable& e) {
    std::cerr << "evaluator unavailable: " << e.what() << "\n";
    return kUnavailable;
  } catch (const ProtocolViolation& e) {
    std::cerr << "evaluator protocol violation: " << e.what() << "\n";
    return kUnavailable;
  } catch (const Timeout& e) {
    std::cerr << "timeout: " << e.what() << "\n";
    return kUnavailable;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
