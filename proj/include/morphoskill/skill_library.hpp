#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphoskill/voxel_body.hpp"

namespace morphoskill {

enum class Polarity { Positive, Negative };
enum class ProposalPath { A, B };

std::string to_string(Polarity p);
std::string to_string(ProposalPath p);

/// L2 rule. `support_count`/`mean_gain` track evidence gathered in this run;
/// `prior_*` hold the frozen statistics of an imported rule and never change.
struct RuleLeaf {
  std::string leaf_id;
  Polarity polarity = Polarity::Positive;
  std::string claim;
  std::string description;
  int support_count = 0;
  double mean_gain = 0.0;
  std::vector<std::int64_t> supporting_obs_ids;
  std::optional<int> prior_support_count;
  std::optional<double> prior_mean_gain;
};

/// L3 record of one evaluated child.
struct Observation {
  std::int64_t obs_id = -1;
  std::int64_t eval_index = -1;  // run-wide audit key, survives id re-issue
  int generation = 0;
  Body child_body;
  Body parent_body;
  std::string task;
  int scale = 0;
  double fitness = 0.0;
  double parent_fitness = 0.0;
  double gain = 0.0;
  bool valid = true;
  ProposalPath proposal_path = ProposalPath::B;
  std::optional<std::string> attributed_skill;
  std::optional<std::string> intended_leaf_id;
  std::optional<std::string> assigned_leaf_id;
  int no_leaf_attempts = 0;
};

constexpr int kMaxNoLeafAttempts = 3;

inline bool is_pending(const Observation& o) {
  return !o.assigned_leaf_id && o.no_leaf_attempts < kMaxNoLeafAttempts;
}

struct Skill {
  std::string skill_id;
  std::vector<std::string> task_family;
  std::string l1_structure;
  std::string l1_condition;
  std::vector<RuleLeaf> l2_positive;
  std::vector<RuleLeaf> l2_negative;
  std::vector<Observation> l3_observations;
  std::int64_t next_leaf_id_counter = 0;
  std::int64_t next_obs_id_counter = 0;
  bool imported = false;

  const RuleLeaf* find_leaf(const std::string& leaf_id) const;
  RuleLeaf* find_leaf(const std::string& leaf_id);
  Observation* find_observation(std::int64_t obs_id);
  std::size_t leaf_count() const { return l2_positive.size() + l2_negative.size(); }
};

struct UnassignedPool {
  std::vector<Observation> entries;
  std::size_t size() const { return entries.size(); }
};

struct SkillLibrary {
  static constexpr int kSchemaVersion = 1;

  std::string task;
  int scale = 0;
  std::vector<Skill> skills;
  UnassignedPool pool;
  std::int64_t next_pool_obs_id = 0;
  int last_add_generation = -1;
  int generation = -1;  // last generation whose maintenance completed

  const Skill* find(const std::string& skill_id) const;
  Skill* find(const std::string& skill_id);
  std::size_t observation_count() const;  // L3 only, pool excluded
  std::size_t leaf_count() const;
};

/// Smoothed usefulness: (1 + sum clip(g/delta_max, 0, 1)) / (2 + n).
double skill_weight(std::span<const double> gains, double delta_max);
double skill_weight(const Skill& skill, double delta_max);

/// Draws proportionally to skill_weight. Throws EmptyCandidates.
const Skill& sample_skill(std::span<const Skill* const> candidates, double delta_max, std::uint64_t seed);

/// Skills whose task family contains `task`. While `generation < prior_only_horizon`
/// and imported matches exist, only imported skills are returned.
std::vector<const Skill*> retrieve(const SkillLibrary& library, const std::string& task, int scale, int generation,
                                   int prior_only_horizon);

/// Incremental mean: m <- m + 1, mean <- mean + (g - mean) / m.
RuleLeaf update_rule_mean(RuleLeaf leaf, double gain);

struct AttributionDecision {
  std::size_t local_index = 0;
  std::optional<std::string> skill_id;
  std::string reason;
};

/// Routes fresh observations into skills or the unassigned pool. Routing is by
/// decision only; fitness plays no part.
SkillLibrary apply_attribution(SkillLibrary library, std::vector<Observation> observations,
                               std::span<const AttributionDecision> decisions);

/// Re-routes pool entries; `local_index` addresses `library.pool.entries`.
SkillLibrary apply_reattribution(SkillLibrary library, std::span<const AttributionDecision> decisions);

struct AddDecision {
  bool add = false;
  std::vector<std::int64_t> inspired_obs_ids;
  std::optional<Skill> skill;
  nlohmann::json reasoning;
};

bool is_valid_skill_id(const std::string& id);

SkillLibrary apply_add(SkillLibrary library, const AddDecision& decision, int generation);

struct DescriptionUpdate {
  enum class Mode { Overwrite, Append } mode = Mode::Overwrite;
  std::string text;
};

struct LeafAssignment {
  enum class Kind { MatchExisting, NewLeaf, NoLeaf };
  std::int64_t obs_id = -1;
  Kind kind = Kind::NoLeaf;
  std::string leaf_id;                              // MatchExisting
  std::optional<DescriptionUpdate> description_update;  // MatchExisting
  Polarity polarity = Polarity::Positive;           // NewLeaf
  std::string claim;                                // NewLeaf
  std::string description;                          // NewLeaf
};

struct StandaloneLeaf {
  Polarity polarity = Polarity::Positive;
  std::string claim;
  std::string description;
  std::vector<std::int64_t> supporting_obs_ids;
};

/// True when text names absolute cells ("row 0", "column 4", "(5,4)", "voxel at").
bool contains_coordinates(const std::string& text);

/// Applies one Diagnose decision to a skill. Coordinate leakage downgrades the
/// entry to no_leaf and appends a note to `notes` when given.
Skill apply_diagnose(Skill skill, std::span<const LeafAssignment> assignments,
                     std::span<const StandaloneLeaf> standalone, std::vector<std::string>* notes = nullptr);

/// Assigns an observation to the leaf it targeted and folds its gain into the
/// running mean. No-op if the observation is not pending or the leaf is unknown.
bool assign_targeted(Skill& skill, std::int64_t obs_id, const std::string& leaf_id);

struct MergeCluster {
  std::string group_label;
  std::vector<std::string> skill_ids;
  std::string reason;
};

SkillLibrary apply_merge(SkillLibrary library, std::span<const MergeCluster> clusters);

/// Transfer copy: L1/L2 kept with statistics frozen as priors, L3 and pool dropped.
SkillLibrary import_for_transfer(const SkillLibrary& source);

bool pool_pressure(const UnassignedPool& pool, std::size_t threshold);

/// Structural invariant audit; returns human-readable violations (empty when sound).
std::vector<std::string> audit(const SkillLibrary& library);

// Persistence. Field names follow the prompt schemas so stored skills can be
// rendered into prompts verbatim.
nlohmann::json to_json(const RuleLeaf& leaf);
nlohmann::json to_json(const Observation& obs);
nlohmann::json to_json(const Skill& skill);
nlohmann::json to_json(const SkillLibrary& library);
RuleLeaf leaf_from_json(const nlohmann::json& j, Polarity polarity);
Observation observation_from_json(const nlohmann::json& j);
Skill skill_from_json(const nlohmann::json& j);
SkillLibrary library_from_json(const nlohmann::json& j);

SkillLibrary load_library(const std::string& path);
void save_library(const SkillLibrary& library, const std::string& path);

}  // namespace morphoskill
