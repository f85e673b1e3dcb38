#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphoskill/evaluation.hpp"
#include "morphoskill/gateway.hpp"
#include "morphoskill/metrics.hpp"
#include "morphoskill/rng.hpp"
#include "morphoskill/skill_library.hpp"
#include "morphoskill/voxel_body.hpp"

namespace morphoskill {

enum class RunMode { ColdStart, TransferWithRef, TransferSkillOnly, GaOnly };

std::string to_string(RunMode m);
RunMode run_mode_from_string(const std::string& s);  // throws ConfigInvalid

struct Ablations {
  bool no_diagnose = false;
  bool no_merge = false;
  bool pure_llm = false;
  bool no_l2_l3 = false;
};

struct RunConfig {
  std::string task = "Walker";
  int scale = 5;
  int budget = 250;
  int generation_size = 25;
  int path_a_slots = 15;
  int path_b_slots = 10;
  int elite_pool_k = 5;
  int mutation_low = 1;
  int mutation_high = 3;
  double delta_max = 2.0;
  int pool_threshold = 30;
  int prior_only_k = 5;
  int static_elite_pool = 5;
  RunMode mode = RunMode::ColdStart;
  Ablations ablations;
  std::uint64_t master_seed = 0;

  std::string evaluator = "surrogate";
  std::string backend = "heuristic";
  int parallelism = 1;
  std::int64_t budget_steps = 512000;
  double eval_timeout_s = 3600.0;
  double per_voxel_rate = 0.1;
  double ga_survival_rate = 0.5;
  std::string source_run;     // transfer modes
  std::string baseline_run;   // optional ga_only run used for summary.csv
  RemoteBackendConfig remote;
};

/// Budget by task family and scale (250/500/750 at 5x5, 1000 otherwise).
int default_budget(const std::string& task, int scale);
/// Mutation range upper bound: 3 at 5x5, 10 at larger grids.
int default_mutation_high(int scale);
/// Config with task/scale-dependent defaults filled in.
RunConfig default_config(const std::string& task, int scale);

/// Environment id used on the evaluator protocol, e.g. Walker-v0 or Walker-v0-10x10.
std::string env_id(const std::string& task, int scale);

/// Throws ConfigInvalid describing the first broken constraint.
void validate(const RunConfig& config);

/// Applies `key = value` settings on top of `base`. Unknown keys, duplicate keys
/// and unparsable values throw ConfigInvalid. Changing task or scale re-derives
/// the dependent defaults unless they are also set explicitly.
RunConfig parse_config(const std::string& text, const RunConfig& base = {});
RunConfig load_config(const std::filesystem::path& path, const RunConfig& base = {});
/// Every field, one per line, in a fixed order; round-trips through parse_config.
std::string serialize_config(const RunConfig& config);

struct Individual {
  std::int64_t eval_index = 0;
  Body body;
  std::optional<double> fitness;
  int generation = 0;
  std::optional<std::int64_t> parent;  // eval index
};

struct RunState {
  int generation = -1;  // last completed generation
  std::vector<Individual> population;  // population[i].eval_index == i + 1
  std::vector<std::int64_t> elites;    // eval indices, best first
  std::int64_t evals_used = 0;
  SkillLibrary library;
  std::map<std::int64_t, std::vector<std::int64_t>> children;  // parent -> children
  std::vector<Body> references;  // with-ref transfer exemplars

  const Individual& at(std::int64_t eval_index) const { return population.at(eval_index - 1); }
  std::optional<double> best_fitness() const;
  std::vector<std::optional<double>> fitness_log() const;
};

/// Top-k evaluated individuals by fitness; ties keep the earlier eval index.
std::vector<std::int64_t> update_elites(const std::vector<Individual>& population, int k);

/// GA-baseline parents: top ceil(rate * generation_size) individuals.
std::vector<std::int64_t> truncation_survivors(const std::vector<Individual>& population, double rate,
                                               int generation_size);

/// Backend, evaluator and logs a run talks to. Logs may be null.
struct RunServices {
  ProposalBackend* backend = nullptr;
  Evaluator* evaluator = nullptr;
  PromptAuditLog* prompt_log = nullptr;
};

/// Generation-level driver. Deterministic for a fixed config, backend and evaluator.
class Orchestrator {
 public:
  Orchestrator(RunConfig config, RunServices services);

  const RunConfig& config() const { return config_; }
  const RunState& state() const { return state_; }
  RunState& mutable_state() { return state_; }
  const SeedStreams& streams() const { return streams_; }

  /// Builds generation 0. Throws ConfigInvalid or SourceLibraryMissing.
  nlohmann::json initialize();
  /// Runs the next generation; throws BudgetExhausted when nothing is left.
  nlohmann::json run_generation();
  bool done() const { return state_.evals_used >= config_.budget; }

  /// Rebuilds state from earlier records and a saved library.
  void restore(const std::vector<nlohmann::json>& records, SkillLibrary library);

  /// Loads the transfer source library and, with references, its elite bodies.
  void load_transfer_source();

 private:
  struct Slot;

  std::vector<Slot> propose_path_a(int t, int n_a, nlohmann::json& notes);
  std::vector<Slot> propose_path_b(int t, int n_b, int slot_offset);
  Body ga_child(const Body& parent, std::string_view stream, int t, int index) const;
  void evaluate_slots(int t, std::vector<Slot>& slots);
  nlohmann::json maintain(int t, const std::vector<Slot>& slots);
  nlohmann::json record_for(int t, const std::string& phase, const std::vector<Slot>& slots, bool partial,
                            nlohmann::json maintenance) const;

  BackendResponse call(const PromptRequest& request);
  int next_ordinal(OpKind op, int t);
  std::string transfer_block() const;
  TransferContext transfer_context() const;

  RunConfig config_;
  RunServices services_;
  SeedStreams streams_;
  RunState state_;
  std::map<std::pair<int, int>, int> ordinals_;
  std::string source_exp_;
  int source_scale_ = 0;
};

/// Run directory artifacts.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path config() const { return dir / "config.snapshot"; }
  std::filesystem::path log() const { return dir / "run.log.jsonl"; }
  std::filesystem::path prompts() const { return dir / "prompts.log.jsonl"; }
  std::filesystem::path library() const { return dir / "library.json"; }
  std::filesystem::path best_body() const { return dir / "best_body.json"; }
  std::filesystem::path curve() const { return dir / "curve.csv"; }
  std::filesystem::path summary() const { return dir / "summary.csv"; }
  std::filesystem::path checkpoint() const { return dir / "checkpoint.json"; }
};

std::vector<nlohmann::json> read_run_log(const std::filesystem::path& path);
/// Log records with volatile fields (timestamps) removed, one JSON document per line.
std::string comparable_log_payload(const std::filesystem::path& path);

FitnessCurve run_curve(const RunState& state, std::int64_t budget);
FitnessCurve load_run_curve(const std::filesystem::path& run_dir);

/// Writes curve.csv, best_body.json and summary.csv for a run directory.
void write_reports(const RunPaths& paths, const RunConfig& config, const RunState& state);
/// Recomputes summary.csv from curve.csv files (agent run, optional GA baseline).
std::string summary_for_run(const std::filesystem::path& run_dir, const std::string& task,
                            const std::optional<std::filesystem::path>& baseline_dir);

struct RunOutcome {
  RunState state;
  std::size_t generations = 0;
};

/// Executes or continues a run in `out_dir`. When `resume` is set the run
/// continues from the last complete generation recorded there.
RunOutcome run_to_completion(const RunConfig& config, const std::filesystem::path& out_dir, bool resume = false,
                             const std::function<void(const nlohmann::json&)>& on_generation = {});

/// Reference bodies for with-ref transfer: best distinct bodies in a run log.
std::vector<Body> top_bodies_from_log(const std::filesystem::path& log_path, int count);

}  // namespace morphoskill
