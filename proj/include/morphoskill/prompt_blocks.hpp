#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphoskill/prompts.hpp"
#include "morphoskill/skill_library.hpp"
#include "morphoskill/voxel_body.hpp"

namespace morphoskill {

/// Formatting of library state into template fields. Each block is plain text
/// with one record per line so that both people and the heuristic backend can
/// read it back.

/// Task descriptions keyed by task name prefix ("Walker", "Carrier", ...).
std::string task_description(const std::string& task);

/// Single-line compact JSON matrix, e.g. [[0,1],[3,1]].
std::string body_inline(const Body& body);
/// Parses "r0c0 r0c1 ...\n..." rows or a JSON matrix. Throws MalformedBody.
Body parse_body_text(const std::string& text);

/// "1-3" style range.
std::string range_text(int low, int high);

/// One slot of a skill-conditioned Propose prompt. `skill` may be null.
/// With `with_rules` false the L2 and L3 parts are left out.
std::string slot_block(int slot_index, const Skill* skill, bool with_rules);

struct HistoryEntry {
  Body child;
  double fitness = 0.0;
};

std::string history_block(const Body& parent, std::span<const HistoryEntry> history);
inline constexpr const char* kOmittedBlock = "(omitted)";

/// `Reference designs` addendum followed by the reference bodies; empty when none.
std::string static_reference_block(const TransferContext& ctx, std::span<const Body> references);

/// JSON line per skill: id, L1, and the top two positive leaves by mean gain.
std::string skills_summary_block(std::span<const Skill> skills);

/// JSON line per design: local_index and body (fitness intentionally absent).
std::string designs_block(std::span<const Body> bodies);

/// JSON line per design: obs_id, label, fitness, gain, body.
std::string scored_designs_block(std::span<const Observation> observations);

nlohmann::json leaves_json(const Skill& skill);
nlohmann::json pending_observations_json(std::span<const Observation> observations);
nlohmann::json context_observations_json(std::span<const Observation> observations);

/// JSON line per skill with its complete L1 identity.
std::string merge_skills_block(std::span<const Skill> skills);

/// Substitutions for the skill-conditioned Diagnose prompt.
Substitutions diagnose_substitutions(const Skill& skill, std::span<const Observation> pending,
                                     std::span<const Observation> context, double gen_mean, double gen_p25);

}  // namespace morphoskill
