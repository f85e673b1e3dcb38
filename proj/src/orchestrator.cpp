#include "morphoskill/orchestrator.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <future>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "morphoskill/errors.hpp"
#include "morphoskill/prompt_blocks.hpp"

namespace morphoskill {

using nlohmann::json;

namespace {

json opt(const std::optional<std::string>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json opt(const std::optional<std::int64_t>& v) { return v ? json(*v) : json(nullptr); }

std::string run_name(const std::filesystem::path& dir) {
  auto p = dir.lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

bool is_transfer(RunMode m) { return m == RunMode::TransferWithRef || m == RunMode::TransferSkillOnly; }

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

LeafAssignment no_leaf(std::int64_t obs_id) {
  LeafAssignment a;
  a.obs_id = obs_id;
  a.kind = LeafAssignment::Kind::NoLeaf;
  return a;
}

struct Guarded {
  BackendResponse response;
  std::exception_ptr failure;
};

// Timeouts degrade to an empty response; a dead backend is fatal for the run.
Guarded guarded_dispatch(const PromptRequest& request, ProposalBackend& backend) {
  Guarded g;
  try {
    g.response = dispatch(request, backend);
  } catch (const Timeout& e) {
    g.response.error = std::string("Timeout: ") + e.what();
  } catch (...) {
    g.failure = std::current_exception();
  }
  return g;
}

std::string failure_text(const std::exception_ptr& p) {
  try {
    std::rethrow_exception(p);
  } catch (const Error& e) {
    return e.kind() + ": " + e.what();
  } catch (const std::exception& e) {
    return e.what();
  }
}

}  // namespace

std::optional<double> RunState::best_fitness() const {
  std::optional<double> best;
  for (const auto& i : population) {
    if (i.fitness && (!best || *i.fitness > *best)) best = i.fitness;
  }
  return best;
}

std::vector<std::optional<double>> RunState::fitness_log() const {
  std::vector<std::optional<double>> out;
  out.reserve(population.size());
  for (const auto& i : population) out.push_back(i.fitness);
  return out;
}

std::vector<std::int64_t> update_elites(const std::vector<Individual>& population, int k) {
  if (k < 1) throw std::invalid_argument("elite pool size must be at least 1");
  std::vector<const Individual*> ranked;
  for (const auto& i : population) {
    if (i.fitness) ranked.push_back(&i);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const Individual* a, const Individual* b) {
    if (*a->fitness != *b->fitness) return *a->fitness > *b->fitness;
    return a->eval_index < b->eval_index;
  });
  if (ranked.size() > static_cast<std::size_t>(k)) ranked.resize(static_cast<std::size_t>(k));
  std::vector<std::int64_t> out;
  for (const auto* i : ranked) out.push_back(i->eval_index);
  return out;
}

std::vector<std::int64_t> truncation_survivors(const std::vector<Individual>& population, double rate,
                                               int generation_size) {
  const int n = std::max(1, static_cast<int>(std::ceil(rate * generation_size)));
  return update_elites(population, n);
}

struct Orchestrator::Slot {
  int index = 0;
  std::string path = "B";
  bool fallback_from_a = false;
  std::optional<std::int64_t> parent;
  std::optional<std::string> skill_id;
  std::optional<std::string> intended_leaf_id;
  bool leaf_id_nulled = false;
  bool repaired = false;
  bool out_of_range = false;
  std::string fallback_reason;
  Body body;
  std::int64_t eval_index = 0;
  std::optional<double> fitness;
  std::optional<double> gain;
  std::string error;
};

Orchestrator::Orchestrator(RunConfig config, RunServices services)
    : config_(std::move(config)), services_(services), streams_(config_.master_seed) {
  validate(config_);
  if (!services_.evaluator) throw ConfigInvalid("no evaluator configured");
  if (config_.mode != RunMode::GaOnly && !services_.backend) throw ConfigInvalid("no proposal backend configured");
  state_.library.task = config_.task;
  state_.library.scale = config_.scale;
}

int Orchestrator::next_ordinal(OpKind op, int t) { return ordinals_[{static_cast<int>(op), t}]++; }

BackendResponse Orchestrator::call(const PromptRequest& request) {
  auto g = guarded_dispatch(request, *services_.backend);
  if (services_.prompt_log) {
    services_.prompt_log->append(request, g.response.raw_text, g.failure ? failure_text(g.failure) : g.response.error);
  }
  if (g.failure) std::rethrow_exception(g.failure);
  return g.response;
}

TransferContext Orchestrator::transfer_context() const {
  TransferContext ctx;
  ctx.current_env = env_id(config_.task, config_.scale);
  ctx.current_grid = config_.scale;
  ctx.source_grid = source_scale_ ? source_scale_ : config_.scale;
  ctx.source_exp = source_exp_;
  ctx.with_reference = config_.mode == RunMode::TransferWithRef;
  return ctx;
}

std::string Orchestrator::transfer_block() const {
  return is_transfer(config_.mode) ? transfer_context_block(transfer_context()) : std::string();
}

void Orchestrator::load_transfer_source() {
  namespace fs = std::filesystem;
  const RunPaths src{config_.source_run};
  if (!fs::exists(src.library())) {
    throw SourceLibraryMissing("no library.json in source run '" + config_.source_run + "'");
  }
  SkillLibrary source;
  try {
    source = load_library(src.library().string());
  } catch (const Error& e) {
    throw SourceLibraryMissing("cannot load source library: " + std::string(e.what()));
  }
  source_scale_ = source.scale > 0 ? source.scale : config_.scale;
  if (fs::exists(src.config())) source_scale_ = load_config(src.config()).scale;
  source_exp_ = run_name(config_.source_run);

  SkillLibrary imported = import_for_transfer(source);
  // Imported skills must be retrievable under the target task name.
  for (auto& s : imported.skills) {
    if (std::find(s.task_family.begin(), s.task_family.end(), config_.task) == s.task_family.end()) {
      s.task_family.push_back(config_.task);
    }
  }
  imported.task = config_.task;
  imported.scale = config_.scale;
  imported.generation = state_.library.generation;
  state_.library = std::move(imported);

  state_.references.clear();
  if (config_.mode == RunMode::TransferWithRef && fs::exists(src.log())) {
    state_.references = top_bodies_from_log(src.log(), config_.static_elite_pool);
  }
}

Body Orchestrator::ga_child(const Body& parent, std::string_view stream, int t, int index) const {
  // A handful of re-draws when mutation happens to reproduce the parent.
  constexpr int kCloneRetries = 8;
  Body child;
  for (int attempt = 0; attempt <= kCloneRetries; ++attempt) {
    const auto seed = streams_.seed(stream, static_cast<std::uint64_t>(t),
                                    static_cast<std::uint64_t>(index) * 64 + static_cast<std::uint64_t>(attempt));
    child = ga_mutate(parent, seed, config_.per_voxel_rate);
    if (!(child == parent)) break;
  }
  return child;
}

json Orchestrator::initialize() {
  if (state_.generation >= 0) throw ConfigInvalid("run already initialized");
  if (is_transfer(config_.mode)) load_transfer_source();

  const int n = std::min(config_.generation_size, config_.budget);
  std::vector<Slot> slots(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    slots[i].index = i;
    slots[i].path = "init";
  }

  if (config_.mode == RunMode::GaOnly) {
    for (int i = 0; i < n; ++i) slots[i].body = random_valid_body(config_.scale, streams_.seed(streams::kInit, 0, i));
  } else {
    Substitutions subs{{"task_desc", task_description(config_.task)},
                       {"voxel_legend", std::string(voxel_legend())},
                       {"n_designs", std::to_string(n)},
                       {"grid_size", std::to_string(config_.scale)}};
    auto request = render_prompt(PromptTemplate::ProposeColdStart, subs, 0, next_ordinal(OpKind::Propose, 0));
    if (is_transfer(config_.mode)) {
      const auto refs = static_reference_block(transfer_context(), state_.references);
      request.rendered_text = transfer_block() + "\n\n" + (refs.empty() ? "" : refs + "\n") + request.rendered_text;
    }
    const auto outcomes = parse_cold_start(call(request), n, config_.scale);
    for (int i = 0; i < n; ++i) {
      const auto& o = outcomes[i];
      if (o.body) {
        slots[i].body = *o.body;
        slots[i].repaired = o.repaired;
      } else {
        slots[i].fallback_reason = o.fallback_reason;
        slots[i].body = random_valid_body(config_.scale, streams_.seed(streams::kInit, 0, i));
      }
    }
  }

  evaluate_slots(0, slots);
  state_.generation = 0;
  state_.library.generation = 0;
  return record_for(0, "init", slots, n < config_.generation_size, json::object());
}

std::vector<Orchestrator::Slot> Orchestrator::propose_path_a(int t, int n_a, json& notes) {
  std::vector<Slot> slots(static_cast<std::size_t>(n_a));
  if (n_a == 0) return slots;

  const auto& elites = state_.elites;
  const auto candidates = retrieve(state_.library, config_.task, config_.scale, t, config_.prior_only_k);
  const bool with_rules = !config_.ablations.no_l2_l3;

  // Parent groups in order of first appearance; one Propose call per group.
  std::vector<std::int64_t> group_parents;
  std::map<std::int64_t, std::vector<int>> groups;
  for (int i = 0; i < n_a; ++i) {
    auto& s = slots[i];
    s.index = i;
    s.parent = elites[static_cast<std::size_t>(i) % elites.size()];
    if (!candidates.empty()) {
      const Skill& skill = sample_skill(candidates, config_.delta_max, streams_.seed(streams::kSampling, t, i));
      s.skill_id = skill.skill_id;
    } else if (!config_.ablations.pure_llm) {
      s.path = "B";
      s.fallback_from_a = true;
      s.fallback_reason = "no skills retrieved";
      s.body = ga_child(state_.at(*s.parent).body, streams::kPathAFallback, t, i);
      continue;
    }
    if (!groups.count(*s.parent)) group_parents.push_back(*s.parent);
    groups[*s.parent].push_back(i);
  }

  struct Call {
    std::int64_t parent;
    ProposeContext context;
    PromptRequest request;
    Guarded result;
  };
  std::vector<Call> calls;
  const TransferContext tctx = transfer_context();
  const std::string reference_block = static_reference_block(tctx, state_.references);
  for (const auto parent_id : group_parents) {
    const Individual& parent = state_.at(parent_id);
    Call c;
    c.parent = parent_id;
    c.context.grid_size = config_.scale;
    c.context.parent = parent.body;
    c.context.range_low = config_.mutation_low;
    c.context.range_high = config_.mutation_high;

    std::vector<HistoryEntry> history;
    if (auto it = state_.children.find(parent_id); it != state_.children.end()) {
      for (const auto child_id : it->second) {
        const auto& child = state_.at(child_id);
        c.context.history.push_back(child.body);
        if (child.fitness) history.push_back({child.body, *child.fitness});
      }
    }

    std::string assignments;
    for (const int i : groups[parent_id]) {
      SlotContext sc;
      sc.slot_index = i;
      sc.skill_id = slots[i].skill_id;
      const Skill* skill = slots[i].skill_id ? state_.library.find(*slots[i].skill_id) : nullptr;
      if (skill && with_rules) {
        for (const auto* leaves : {&skill->l2_positive, &skill->l2_negative}) {
          for (const auto& l : *leaves) {
            sc.leaf_ids.push_back(l.leaf_id);
            sc.leaf_claims.push_back(l.claim);
          }
        }
      }
      assignments += slot_block(i, skill, with_rules);
      c.context.slots.push_back(std::move(sc));
    }
    if (!assignments.empty() && assignments.back() == '\n') assignments.pop_back();

    Substitutions subs{{"task_desc", task_description(config_.task)},
                       {"transfer_context_block", transfer_block()},
                       {"voxel_legend", std::string(voxel_legend())},
                       {"parent_fitness", fmt::format("{:.17g}", *parent.fitness)},
                       {"parent_body", parent.body.to_text()},
                       {"skill_assignments_block", assignments},
                       {"static_reference_block", reference_block},
                       {"history_block", with_rules ? history_block(parent.body, history) : kOmittedBlock},
                       {"n_designs", std::to_string(groups[parent_id].size())},
                       {"grid_size", std::to_string(config_.scale)},
                       {"mutation_range", range_text(config_.mutation_low, config_.mutation_high)}};
    c.request = render_prompt(PromptTemplate::ProposeMutation, subs, t, next_ordinal(OpKind::Propose, t));
    calls.push_back(std::move(c));
  }

  // Requests are independent; fan out, then log in ordinal order.
  if (config_.parallelism > 1 && calls.size() > 1) {
    for (std::size_t start = 0; start < calls.size(); start += static_cast<std::size_t>(config_.parallelism)) {
      const auto end = std::min(calls.size(), start + static_cast<std::size_t>(config_.parallelism));
      std::vector<std::future<Guarded>> pending;
      for (auto k = start; k < end; ++k) {
        pending.push_back(std::async(std::launch::async, guarded_dispatch, std::cref(calls[k].request),
                                     std::ref(*services_.backend)));
      }
      for (auto k = start; k < end; ++k) calls[k].result = pending[k - start].get();
    }
  } else {
    for (auto& c : calls) c.result = guarded_dispatch(c.request, *services_.backend);
  }
  for (const auto& c : calls) {
    if (services_.prompt_log) {
      services_.prompt_log->append(c.request, c.result.response.raw_text,
                                   c.result.failure ? failure_text(c.result.failure) : c.result.response.error);
    }
  }
  for (const auto& c : calls) {
    if (c.result.failure) std::rethrow_exception(c.result.failure);
  }

  for (const auto& c : calls) {
    if (!c.result.response.error.empty()) notes.push_back(fmt::format("propose {}: {}", c.request.ordinal, c.result.response.error));
    for (const auto& o : parse_propose(c.result.response, c.context)) {
      auto& s = slots[o.slot_index];
      s.out_of_range = o.out_of_range;
      s.leaf_id_nulled = o.leaf_id_nulled;
      if (o.child) {
        s.path = "A";
        s.body = *o.child;
        s.repaired = o.repaired;
        s.intended_leaf_id = o.intended_leaf_id;
      } else {
        // Pure-LLM runs keep the slot on Path A; the flag marks the GA stand-in.
        s.path = config_.ablations.pure_llm ? "A" : "B";
        s.fallback_from_a = true;
        s.fallback_reason = o.fallback_reason;
        s.body = ga_child(state_.at(c.parent).body, streams::kPathAFallback, t, o.slot_index);
      }
    }
  }
  // Fallback children are GA children: they carry no skill.
  for (auto& s : slots) {
    if (s.fallback_from_a) s.skill_id.reset();
  }
  return slots;
}

std::vector<Orchestrator::Slot> Orchestrator::propose_path_b(int t, int n_b, int slot_offset) {
  std::vector<Slot> slots(static_cast<std::size_t>(n_b));
  if (n_b == 0) return slots;
  const auto parents = config_.mode == RunMode::GaOnly
                           ? truncation_survivors(state_.population, config_.ga_survival_rate, config_.generation_size)
                           : state_.elites;
  for (int j = 0; j < n_b; ++j) {
    auto& s = slots[j];
    s.index = slot_offset + j;
    s.path = "B";
    s.parent = parents[static_cast<std::size_t>(j) % parents.size()];
    s.body = ga_child(state_.at(*s.parent).body, streams::kPathB, t, j);
  }
  return slots;
}

void Orchestrator::evaluate_slots(int t, std::vector<Slot>& slots) {
  std::vector<EvalRequest> requests;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& s = slots[k];
    s.eval_index = state_.evals_used + static_cast<std::int64_t>(k) + 1;
    EvalRequest r;
    r.request_id = "e" + std::to_string(s.eval_index);
    r.body = s.body;
    r.task = env_id(config_.task, config_.scale);
    r.scale = config_.scale;
    r.controller_seed = streams_.seed(streams::kEvaluator, static_cast<std::uint64_t>(s.eval_index), 0);
    r.budget_steps = config_.budget_steps;
    requests.push_back(std::move(r));
  }
  const auto results = evaluate_batch(requests, *services_.evaluator, config_.parallelism);

  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto& s = slots[k];
    s.fitness = results[k].fitness;
    if (results[k].error) s.error = *results[k].error;
    if (s.fitness && s.parent) s.gain = *s.fitness - *state_.at(*s.parent).fitness;

    Individual ind;
    ind.eval_index = s.eval_index;
    ind.body = s.body;
    ind.fitness = s.fitness;
    ind.generation = t;
    ind.parent = s.parent;
    state_.population.push_back(std::move(ind));
    if (s.parent) state_.children[*s.parent].push_back(s.eval_index);
  }
  state_.evals_used += static_cast<std::int64_t>(slots.size());
  state_.elites = update_elites(state_.population, config_.elite_pool_k);
}

json Orchestrator::run_generation() {
  if (done()) throw BudgetExhausted(fmt::format("budget of {} evaluations is spent", config_.budget));
  if (state_.generation < 0) throw ConfigInvalid("run_generation before initialize");
  const int t = state_.generation + 1;
  const int remaining = static_cast<int>(config_.budget - state_.evals_used);

  int n_a = 0;
  int n_b = 0;
  if (config_.mode == RunMode::GaOnly) {
    n_b = std::min(config_.generation_size, remaining);
  } else {
    n_a = std::min(config_.path_a_slots, remaining);
    n_b = std::min(config_.path_b_slots, remaining - n_a);
  }

  json notes = json::array();
  std::vector<Slot> slots;
  if (state_.elites.empty()) {
    // Nothing evaluated successfully yet: reseed with random bodies.
    for (int i = 0; i < n_a + n_b; ++i) {
      Slot s;
      s.index = i;
      s.fallback_reason = "no evaluated parents";
      s.body = random_valid_body(config_.scale, streams_.seed(streams::kInit, t, i));
      slots.push_back(std::move(s));
    }
  } else {
    slots = propose_path_a(t, n_a, notes);
    auto b = propose_path_b(t, n_b, n_a);
    slots.insert(slots.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  }

  evaluate_slots(t, slots);
  json maintenance = config_.mode == RunMode::GaOnly ? json::object() : maintain(t, slots);
  if (!notes.empty()) maintenance["propose_notes"] = notes;
  state_.library.generation = t;
  state_.generation = t;
  return record_for(t, "search", slots, static_cast<int>(slots.size()) < config_.generation_size,
                    std::move(maintenance));
}

json Orchestrator::maintain(int t, const std::vector<Slot>& slots) {
  auto& lib = state_.library;
  json m = json::object();

  // Attribute: Path A children with a live skill attach directly, the rest are classified.
  std::vector<Observation> observations;
  std::vector<AttributionDecision> decisions;
  std::vector<std::size_t> to_classify;
  std::vector<double> gen_fitness;
  for (const auto& s : slots) {
    if (!s.fitness) continue;
    gen_fitness.push_back(*s.fitness);
    if (!s.parent) continue;
    const auto& parent = state_.at(*s.parent);
    Observation o;
    o.eval_index = s.eval_index;
    o.generation = t;
    o.child_body = s.body;
    o.parent_body = parent.body;
    o.task = config_.task;
    o.scale = config_.scale;
    o.fitness = *s.fitness;
    o.parent_fitness = *parent.fitness;
    o.gain = *s.gain;
    o.proposal_path = s.path == "A" ? ProposalPath::A : ProposalPath::B;
    o.intended_leaf_id = s.intended_leaf_id;
    const std::size_t idx = observations.size();
    if (s.path == "A" && s.skill_id && lib.find(*s.skill_id)) {
      decisions.push_back({idx, s.skill_id, "assigned skill"});
    } else {
      to_classify.push_back(idx);
    }
    observations.push_back(std::move(o));
  }

  json attribute{{"direct", decisions.size()}, {"classified", json::array()}, {"notes", json::array()}};
  if (!to_classify.empty()) {
    if (lib.skills.empty()) {
      for (auto idx : to_classify) decisions.push_back({idx, std::nullopt, "empty library"});
    } else {
      std::vector<Body> bodies;
      for (auto idx : to_classify) bodies.push_back(observations[idx].child_body);
      std::vector<std::string> known;
      for (const auto& s : lib.skills) known.push_back(s.skill_id);
      Substitutions subs{{"skills_block", skills_summary_block(lib.skills)}, {"designs_block", designs_block(bodies)}};
      const auto out = parse_attribute(
          call(render_prompt(PromptTemplate::Attribute, subs, t, next_ordinal(OpKind::Attribute, t))), bodies.size(),
          known);
      for (const auto& d : out.decisions) {
        decisions.push_back({to_classify[d.local_index], d.skill_id, d.reason});
        attribute["classified"].push_back(
            {{"eval_index", observations[to_classify[d.local_index]].eval_index}, {"skill_id", opt(d.skill_id)}});
      }
      for (const auto& n : out.notes) attribute["notes"].push_back(n);
    }
  }
  std::sort(decisions.begin(), decisions.end(),
            [](const AttributionDecision& a, const AttributionDecision& b) { return a.local_index < b.local_index; });
  lib = apply_attribution(std::move(lib), std::move(observations), decisions);
  m["attribute"] = attribute;

  // Pool pressure: retry attribution over the whole pool.
  if (!lib.skills.empty() && pool_pressure(lib.pool, static_cast<std::size_t>(config_.pool_threshold))) {
    std::vector<Body> bodies;
    for (const auto& o : lib.pool.entries) bodies.push_back(o.child_body);
    std::vector<std::string> known;
    for (const auto& s : lib.skills) known.push_back(s.skill_id);
    // attribution_pass is metadata only; the template does not reference it.
    Substitutions subs{{"skills_block", skills_summary_block(lib.skills)},
                       {"designs_block", designs_block(bodies)},
                       {"attribution_pass", "pool"}};
    const auto out = parse_attribute(
        call(render_prompt(PromptTemplate::Attribute, subs, t, next_ordinal(OpKind::Attribute, t))), bodies.size(),
        known);
    const auto before = lib.pool.size();
    lib = apply_reattribution(std::move(lib), out.decisions);
    m["reattribution"] = {{"pool_before", before}, {"pool_after", lib.pool.size()}, {"notes", out.notes}};
  }

  // Add: at most one new archetype, from this generation's unexplained improvements.
  {
    std::vector<Observation> fresh;
    for (const auto& o : lib.pool.entries) {
      if (o.generation == t) fresh.push_back(o);
    }
    std::stable_sort(fresh.begin(), fresh.end(),
                     [](const Observation& a, const Observation& b) { return a.fitness > b.fitness; });
    std::vector<Observation> high;
    for (const auto& o : fresh) {
      if (o.gain > 0.0 && high.size() < 6) high.push_back(o);
    }
    std::vector<Observation> low;
    for (auto it = fresh.rbegin(); it != fresh.rend() && low.size() < 6; ++it) {
      const bool in_high = std::any_of(high.begin(), high.end(), [&](const Observation& h) { return h.obs_id == it->obs_id; });
      if (!in_high) low.push_back(*it);
    }
    json add{{"candidates", high.size()}};
    if (!high.empty()) {
      Substitutions subs{
          {"high_designs", scored_designs_block(high)},
          {"low_designs", scored_designs_block(low)},
          {"existing_skills_block", skills_summary_block(lib.skills)},
          {"task_name", config_.task},
          {"low_skill_hint", lib.skills.size() < 3
                                 ? "- The library holds fewer than three skills for this task; a clear recurring "
                                   "structure in the high designs is enough to add one."
                                 : ""}};
      const auto out = parse_add(call(render_prompt(PromptTemplate::Add, subs, t, next_ordinal(OpKind::Add, t))),
                                 config_.task);
      add["action"] = out.decision.add ? "add" : "no_add";
      if (out.dropped) add["note"] = out.note;
      if (out.decision.add && out.decision.skill) {
        add["skill_id"] = out.decision.skill->skill_id;
        try {
          lib = apply_add(std::move(lib), out.decision, t);
          add["applied"] = true;
        } catch (const Error& e) {
          add["applied"] = false;
          add["note"] = e.kind() + ": " + e.what();
        }
      }
    }
    m["add"] = add;
  }

  // Diagnose: skills with new evidence, in id order.
  json diagnose = json::array();
  if (!config_.ablations.no_diagnose) {
    const double gen_mean =
        gen_fitness.empty() ? 0.0 : std::accumulate(gen_fitness.begin(), gen_fitness.end(), 0.0) / gen_fitness.size();
    const double gen_p25 = quantile(gen_fitness, 0.25);
    std::vector<std::string> ids;
    for (const auto& s : lib.skills) ids.push_back(s.skill_id);
    std::sort(ids.begin(), ids.end());
    for (const auto& id : ids) {
      Skill& skill = *lib.find(id);
      const bool fresh = std::any_of(skill.l3_observations.begin(), skill.l3_observations.end(),
                                     [&](const Observation& o) { return o.generation == t; });
      if (!fresh) continue;

      json entry{{"skill_id", id}, {"targeted", 0}};
      int targeted = 0;
      for (auto& o : skill.l3_observations) {
        if (o.intended_leaf_id && is_pending(o) && assign_targeted(skill, o.obs_id, *o.intended_leaf_id)) ++targeted;
      }
      entry["targeted"] = targeted;

      std::vector<Observation> pending;
      std::vector<Observation> context;
      for (const auto& o : skill.l3_observations) {
        if (is_pending(o)) {
          pending.push_back(o);
        } else if (o.generation == t) {
          context.push_back(o);
        }
      }
      if (pending.empty()) {
        diagnose.push_back(entry);
        continue;
      }

      const auto subs = diagnose_substitutions(skill, pending, context, gen_mean, gen_p25);
      const auto out =
          parse_diagnose(call(render_prompt(PromptTemplate::Diagnose, subs, t, next_ordinal(OpKind::Diagnose, t))));

      std::set<std::int64_t> pending_ids;
      for (const auto& o : pending) pending_ids.insert(o.obs_id);
      std::vector<LeafAssignment> assignments;
      std::set<std::int64_t> decided;
      if (!out.dropped) {
        for (const auto& a : out.assignments) {
          if (pending_ids.count(a.obs_id) && decided.insert(a.obs_id).second) assignments.push_back(a);
        }
      }
      for (const auto id2 : pending_ids) {
        if (!decided.count(id2)) assignments.push_back(no_leaf(id2));
      }
      std::vector<StandaloneLeaf> standalone;
      if (!out.dropped) {
        for (const auto& sl : out.standalone) {
          const bool known = std::all_of(sl.supporting_obs_ids.begin(), sl.supporting_obs_ids.end(),
                                         [&](std::int64_t o) { return skill.find_observation(o) != nullptr; });
          if (known) standalone.push_back(sl);
        }
      }

      std::vector<std::string> notes;
      if (out.dropped) notes.push_back(out.note);
      try {
        skill = apply_diagnose(skill, assignments, standalone, &notes);
      } catch (const Error& e) {
        notes.push_back(e.kind() + ": " + e.what() + "; treated as no_leaf");
        std::vector<LeafAssignment> none;
        for (const auto id2 : pending_ids) none.push_back(no_leaf(id2));
        skill = apply_diagnose(skill, none, {}, &notes);
      }
      entry["pending"] = pending.size();
      entry["leaves"] = skill.leaf_count();
      entry["notes"] = notes;
      diagnose.push_back(entry);
    }
  }
  m["diagnose"] = diagnose;

  // Merge.
  if (!config_.ablations.no_merge && lib.skills.size() >= 2) {
    Substitutions subs{{"skills_full_content", merge_skills_block(lib.skills)}};
    const auto out = parse_merge(call(render_prompt(PromptTemplate::Merge, subs, t, next_ordinal(OpKind::Merge, t))));
    json merge{{"clusters", json::array()}};
    for (const auto& c : out.clusters) merge["clusters"].push_back({{"group_label", c.group_label}, {"skill_ids", c.skill_ids}});
    if (out.dropped) merge["note"] = out.note;
    if (!out.dropped && !out.clusters.empty()) {
      try {
        lib = apply_merge(std::move(lib), out.clusters);
        merge["applied"] = true;
      } catch (const Error& e) {
        merge["applied"] = false;
        merge["note"] = e.kind() + ": " + e.what();
      }
    }
    m["merge"] = merge;
  }
  return m;
}

json Orchestrator::record_for(int t, const std::string& phase, const std::vector<Slot>& slots, bool partial,
                              json maintenance) const {
  json rows = json::array();
  for (const auto& s : slots) {
    rows.push_back({{"slot", s.index},
                    {"path", s.path},
                    {"fallback_from_a", s.fallback_from_a},
                    {"parent", opt(s.parent)},
                    {"skill_id", opt(s.skill_id)},
                    {"intended_leaf_id", opt(s.intended_leaf_id)},
                    {"leaf_id_nulled", s.leaf_id_nulled},
                    {"body", to_json(s.body)},
                    {"repaired", s.repaired},
                    {"out_of_range", s.out_of_range},
                    {"fallback_reason", s.fallback_reason},
                    {"eval_index", s.eval_index},
                    {"fitness", opt(s.fitness)},
                    {"gain", opt(s.gain)},
                    {"error", s.error.empty() ? json(nullptr) : json(s.error)}});
  }
  const auto& lib = state_.library;
  std::size_t positive = 0;
  std::size_t negative = 0;
  json imported = json::array();
  for (const auto& s : lib.skills) {
    positive += s.l2_positive.size();
    negative += s.l2_negative.size();
    if (s.imported) imported.push_back(s.skill_id);
  }
  return {{"generation", t},
          {"phase", phase},
          {"partial", partial},
          {"evals_used", state_.evals_used},
          {"best_fitness", opt(state_.best_fitness())},
          {"elites", state_.elites},
          {"slots", rows},
          {"maintenance", std::move(maintenance)},
          {"library_stats",
           {{"skills", lib.skills.size()},
            {"imported_skills", imported.size()},
            {"imported_ids", imported},
            {"positive_leaves", positive},
            {"negative_leaves", negative},
            {"observations", lib.observation_count()},
            {"pool", lib.pool.size()}}}};
}

void Orchestrator::restore(const std::vector<json>& records, SkillLibrary library) {
  state_ = RunState{};
  for (const auto& rec : records) {
    const int t = rec.at("generation").get<int>();
    for (const auto& row : rec.at("slots")) {
      Individual ind;
      ind.eval_index = row.at("eval_index").get<std::int64_t>();
      if (ind.eval_index != static_cast<std::int64_t>(state_.population.size()) + 1) {
        throw ConfigInvalid(fmt::format("run log is out of order at eval {}", ind.eval_index));
      }
      ind.body = body_from_json(row.at("body"));
      if (!row.at("fitness").is_null()) ind.fitness = row.at("fitness").get<double>();
      ind.generation = t;
      if (!row.at("parent").is_null()) ind.parent = row.at("parent").get<std::int64_t>();
      if (ind.parent) state_.children[*ind.parent].push_back(ind.eval_index);
      state_.population.push_back(std::move(ind));
    }
    state_.generation = t;
  }
  state_.evals_used = static_cast<std::int64_t>(state_.population.size());
  state_.elites = update_elites(state_.population, config_.elite_pool_k);
  state_.library = std::move(library);
  state_.library.task = config_.task;
  state_.library.scale = config_.scale;
  if (config_.mode == RunMode::TransferWithRef && !config_.source_run.empty()) {
    const RunPaths src{config_.source_run};
    if (std::filesystem::exists(src.log())) state_.references = top_bodies_from_log(src.log(), config_.static_elite_pool);
  }
  if (is_transfer(config_.mode) && !config_.source_run.empty()) {
    const RunPaths src{config_.source_run};
    if (std::filesystem::exists(src.config())) source_scale_ = load_config(src.config()).scale;
    source_exp_ = run_name(config_.source_run);
  }
}

}  // namespace morphoskill
