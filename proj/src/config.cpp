#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "morphoskill/errors.hpp"
#include "morphoskill/orchestrator.hpp"
#include "morphoskill/prompts.hpp"

namespace morphoskill {

std::string to_string(RunMode m) {
  switch (m) {
    case RunMode::ColdStart: return "cold_start";
    case RunMode::TransferWithRef: return "transfer_with_ref";
    case RunMode::TransferSkillOnly: return "transfer_skill_only";
    case RunMode::GaOnly: return "ga_only";
  }
  return "cold_start";
}

RunMode run_mode_from_string(const std::string& s) {
  for (auto m : {RunMode::ColdStart, RunMode::TransferWithRef, RunMode::TransferSkillOnly, RunMode::GaOnly}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigInvalid("unknown mode '" + s + "' (cold_start, transfer_with_ref, transfer_skill_only, ga_only)");
}

int default_budget(const std::string& task, int scale) {
  if (scale != 5) return 1000;
  static const std::map<std::string, int> kBudgets{{"Walker", 250},   {"BridgeWalker", 250}, {"Balancer", 500},
                                                   {"Carrier", 500},  {"Climber", 500},      {"Jumper", 750},
                                                   {"Pusher", 750}};
  const auto it = kBudgets.find(task);
  return it == kBudgets.end() ? 250 : it->second;
}

int default_mutation_high(int scale) { return scale <= 5 ? 3 : 10; }

RunConfig default_config(const std::string& task, int scale) {
  RunConfig c;
  c.task = task;
  c.scale = scale;
  c.budget = default_budget(task, scale);
  c.mutation_low = 1;
  c.mutation_high = default_mutation_high(scale);
  return c;
}

std::string env_id(const std::string& task, int scale) {
  return task + "-v0" + (scale == 5 ? std::string() : "-" + grid_label(scale));
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigInvalid(msg);
  };
  require(!c.task.empty(), "task must be set");
  require(c.scale >= 2, "scale must be at least 2");
  require(c.budget >= 1, "budget must be positive");
  require(c.generation_size >= 1, "generation_size must be positive");
  require(c.path_a_slots >= 0 && c.path_b_slots >= 0, "slot counts must be non-negative");
  require(c.path_a_slots + c.path_b_slots == c.generation_size,
          fmt::format("path_a_slots + path_b_slots ({} + {}) must equal generation_size ({})", c.path_a_slots,
                      c.path_b_slots, c.generation_size));
  if (c.ablations.pure_llm) {
    require(c.path_b_slots == 0 && c.path_a_slots == c.generation_size,
            "pure_llm requires path_b_slots = 0 and path_a_slots = generation_size");
    require(c.mode != RunMode::GaOnly, "pure_llm cannot be combined with ga_only");
  }
  require(c.elite_pool_k >= 1, "elite_pool_k must be at least 1");
  require(c.mutation_low >= 1 && c.mutation_low <= c.mutation_high, "mutation_range must satisfy 1 <= low <= high");
  require(c.delta_max > 0.0, "delta_max must be positive");
  require(c.pool_threshold >= 1, "pool_threshold must be at least 1");
  require(c.prior_only_k >= 0, "prior_only_k must be non-negative");
  require(c.static_elite_pool >= 0, "static_elite_pool must be non-negative");
  require(c.parallelism >= 1, "parallelism must be at least 1");
  require(c.budget_steps >= 1, "budget_steps must be positive");
  require(c.eval_timeout_s > 0.0, "eval_timeout_s must be positive");
  require(c.per_voxel_rate > 0.0 && c.per_voxel_rate <= 1.0, "per_voxel_rate must be in (0, 1]");
  require(c.ga_survival_rate > 0.0 && c.ga_survival_rate <= 1.0, "ga_survival_rate must be in (0, 1]");
  const bool transfer = c.mode == RunMode::TransferWithRef || c.mode == RunMode::TransferSkillOnly;
  require(!transfer || !c.source_run.empty(), "transfer modes need source_run");
  require(!c.evaluator.empty(), "evaluator must be set");
  require(c.mode == RunMode::GaOnly || !c.backend.empty(), "backend must be set");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(value, &used);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!value.empty() && value[0] == '-') throw std::invalid_argument("negative");
      out = std::stoull(value, &used, 0);
    } else if constexpr (std::is_same_v<T, std::int64_t>) {
      out = std::stoll(value, &used);
    } else {
      out = std::stoi(value, &used);
    }
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::logic_error&) {
    throw ConfigInvalid("bad value for " + key + ": '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  static const std::set<std::string> yes{"true", "1", "yes", "on"};
  static const std::set<std::string> no{"false", "0", "no", "off"};
  if (yes.count(value)) return true;
  if (no.count(value)) return false;
  throw ConfigInvalid("bad boolean for " + key + ": '" + value + "'");
}

void parse_range(const std::string& key, const std::string& value, int& low, int& high) {
  const auto dash = value.find('-');
  if (dash == std::string::npos) throw ConfigInvalid("bad value for " + key + ": expected low-high");
  low = parse_number<int>(key, trim(value.substr(0, dash)));
  high = parse_number<int>(key, trim(value.substr(dash + 1)));
}

using Setter = void (*)(RunConfig&, const std::string&, const std::string&);

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> kSetters{
      {"task", [](RunConfig& c, const std::string&, const std::string& v) { c.task = v; }},
      {"scale", [](RunConfig& c, const std::string& k, const std::string& v) { c.scale = parse_number<int>(k, v); }},
      {"budget", [](RunConfig& c, const std::string& k, const std::string& v) { c.budget = parse_number<int>(k, v); }},
      {"generation_size",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.generation_size = parse_number<int>(k, v); }},
      {"path_a_slots",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.path_a_slots = parse_number<int>(k, v); }},
      {"path_b_slots",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.path_b_slots = parse_number<int>(k, v); }},
      {"elite_pool_k",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.elite_pool_k = parse_number<int>(k, v); }},
      {"mutation_range",
       [](RunConfig& c, const std::string& k, const std::string& v) { parse_range(k, v, c.mutation_low, c.mutation_high); }},
      {"delta_max",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.delta_max = parse_number<double>(k, v); }},
      {"pool_threshold",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.pool_threshold = parse_number<int>(k, v); }},
      {"prior_only_k",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.prior_only_k = parse_number<int>(k, v); }},
      {"static_elite_pool",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.static_elite_pool = parse_number<int>(k, v); }},
      {"mode", [](RunConfig& c, const std::string&, const std::string& v) { c.mode = run_mode_from_string(v); }},
      {"no_diagnose",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.ablations.no_diagnose = parse_bool(k, v); }},
      {"no_merge", [](RunConfig& c, const std::string& k, const std::string& v) { c.ablations.no_merge = parse_bool(k, v); }},
      {"pure_llm", [](RunConfig& c, const std::string& k, const std::string& v) { c.ablations.pure_llm = parse_bool(k, v); }},
      {"no_l2_l3", [](RunConfig& c, const std::string& k, const std::string& v) { c.ablations.no_l2_l3 = parse_bool(k, v); }},
      {"master_seed",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.master_seed = parse_number<std::uint64_t>(k, v); }},
      {"evaluator", [](RunConfig& c, const std::string&, const std::string& v) { c.evaluator = v; }},
      {"backend", [](RunConfig& c, const std::string&, const std::string& v) { c.backend = v; }},
      {"parallelism",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.parallelism = parse_number<int>(k, v); }},
      {"budget_steps",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.budget_steps = parse_number<std::int64_t>(k, v); }},
      {"eval_timeout_s",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_timeout_s = parse_number<double>(k, v); }},
      {"per_voxel_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.per_voxel_rate = parse_number<double>(k, v); }},
      {"ga_survival_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.ga_survival_rate = parse_number<double>(k, v); }},
      {"source_run", [](RunConfig& c, const std::string&, const std::string& v) { c.source_run = v; }},
      {"baseline_run", [](RunConfig& c, const std::string&, const std::string& v) { c.baseline_run = v; }},
      {"remote.base_url", [](RunConfig& c, const std::string&, const std::string& v) { c.remote.base_url = v; }},
      {"remote.model_name", [](RunConfig& c, const std::string&, const std::string& v) { c.remote.model_name = v; }},
      {"remote.temperature",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.remote.temperature = parse_number<double>(k, v); }},
      {"remote.timeout_s",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.remote.request_timeout =
             std::chrono::milliseconds(static_cast<std::int64_t>(parse_number<double>(k, v) * 1000.0));
       }},
      {"remote.max_retries",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.remote.max_retries = parse_number<int>(k, v); }},
      {"remote.max_tokens",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v.empty()) {
           c.remote.max_tokens.reset();
         } else {
           c.remote.max_tokens = parse_number<int>(k, v);
         }
       }},
      {"remote.system_prompt",
       [](RunConfig& c, const std::string&, const std::string& v) {
         if (v.empty()) {
           c.remote.system_prompt.reset();
         } else {
           c.remote.system_prompt = v;
         }
       }},
  };
  return kSetters;
}

}  // namespace

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  std::map<std::string, std::string> values;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigInvalid(fmt::format("line {}: expected key = value", line_no));
    const auto key = trim(t.substr(0, eq));
    const auto value = trim(t.substr(eq + 1));
    if (!values.emplace(key, value).second) throw ConfigInvalid(fmt::format("line {}: duplicate key {}", line_no, key));
  }

  RunConfig c = base;
  std::set<std::string> known;
  for (const auto& [key, set] : setters()) {
    known.insert(key);
    if (auto it = values.find(key); it != values.end()) set(c, key, it->second);
  }
  for (const auto& [key, value] : values) {
    if (!known.count(key)) throw ConfigInvalid("unknown config key '" + key + "'");
  }

  if (values.count("task") || values.count("scale")) {
    if (!values.count("budget")) c.budget = default_budget(c.task, c.scale);
    if (!values.count("mutation_range")) {
      c.mutation_low = 1;
      c.mutation_high = default_mutation_high(c.scale);
    }
  }
  if (c.ablations.pure_llm && !values.count("path_a_slots") && !values.count("path_b_slots")) {
    c.path_a_slots = c.generation_size;
    c.path_b_slots = 0;
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string serialize_config(const RunConfig& c) {
  auto b = [](bool v) { return v ? "true" : "false"; };
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  put("task", c.task);
  put("scale", std::to_string(c.scale));
  put("budget", std::to_string(c.budget));
  put("generation_size", std::to_string(c.generation_size));
  put("path_a_slots", std::to_string(c.path_a_slots));
  put("path_b_slots", std::to_string(c.path_b_slots));
  put("elite_pool_k", std::to_string(c.elite_pool_k));
  put("mutation_range", fmt::format("{}-{}", c.mutation_low, c.mutation_high));
  put("delta_max", fmt::format("{}", c.delta_max));
  put("pool_threshold", std::to_string(c.pool_threshold));
  put("prior_only_k", std::to_string(c.prior_only_k));
  put("static_elite_pool", std::to_string(c.static_elite_pool));
  put("mode", to_string(c.mode));
  put("no_diagnose", b(c.ablations.no_diagnose));
  put("no_merge", b(c.ablations.no_merge));
  put("pure_llm", b(c.ablations.pure_llm));
  put("no_l2_l3", b(c.ablations.no_l2_l3));
  put("master_seed", std::to_string(c.master_seed));
  put("evaluator", c.evaluator);
  put("backend", c.backend);
  put("parallelism", std::to_string(c.parallelism));
  put("budget_steps", std::to_string(c.budget_steps));
  put("eval_timeout_s", fmt::format("{}", c.eval_timeout_s));
  put("per_voxel_rate", fmt::format("{}", c.per_voxel_rate));
  put("ga_survival_rate", fmt::format("{}", c.ga_survival_rate));
  put("source_run", c.source_run);
  put("baseline_run", c.baseline_run);
  put("remote.base_url", c.remote.base_url);
  put("remote.model_name", c.remote.model_name);
  put("remote.temperature", fmt::format("{}", c.remote.temperature));
  put("remote.timeout_s", fmt::format("{}", c.remote.request_timeout.count() / 1000.0));
  put("remote.max_retries", std::to_string(c.remote.max_retries));
  put("remote.max_tokens", c.remote.max_tokens ? std::to_string(*c.remote.max_tokens) : "");
  put("remote.system_prompt", c.remote.system_prompt.value_or(""));
  return out;
}

}  // namespace morphoskill
