#include "morphoskill/prompt_blocks.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "morphoskill/errors.hpp"

namespace morphoskill {

using nlohmann::json;

std::string task_description(const std::string& task) {
  static const std::pair<const char*, const char*> kTasks[] = {
      {"BridgeWalker", "move to the right as far as possible across a soft, flexible rope bridge"},
      {"Walker", "walk to the right as far as possible on flat ground"},
      {"Balancer", "stay upright while balancing on a narrow beam"},
      {"Carrier", "carry a box placed on top of the body to the right without dropping it"},
      {"Climber", "climb upward as high as possible between two vertical walls"},
      {"Jumper", "jump as high as possible from flat ground"},
      {"Pusher", "push a box to the right across flat ground as far as possible"},
  };
  for (const auto& [name, desc] : kTasks) {
    if (task.rfind(name, 0) == 0) return task + ": " + desc;
  }
  return task;
}

std::string body_inline(const Body& body) { return to_json(body).dump(); }

Body parse_body_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '[') {
    const auto j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw MalformedBody("body text is not a JSON matrix");
    return body_from_json(j);
  }
  std::vector<std::vector<int>> rows;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream cells(line);
    std::vector<int> row;
    std::string tok;
    while (cells >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stoi(tok, &used));
        if (used != tok.size()) throw MalformedBody("bad cell '" + tok + "'");
      } catch (const std::logic_error&) {
        throw MalformedBody("bad cell '" + tok + "'");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return body_from_json(json(rows));
}

std::string range_text(int low, int high) { return std::to_string(low) + "-" + std::to_string(high); }

namespace {

std::string leaf_line(const RuleLeaf& leaf) {
  std::string s = fmt::format("    leaf_id={} [{}] claim={} support={} avg_gain={:.3f}", leaf.leaf_id,
                              to_string(leaf.polarity), leaf.claim, leaf.support_count, leaf.mean_gain);
  if (leaf.prior_support_count) {
    s += fmt::format(" prior_support={} prior_avg_gain={:.3f}", *leaf.prior_support_count,
                     leaf.prior_mean_gain.value_or(0.0));
  }
  return s + ": " + leaf.description;
}

std::vector<const RuleLeaf*> top_positive(const Skill& skill, std::size_t k) {
  std::vector<const RuleLeaf*> leaves;
  for (const auto& l : skill.l2_positive) leaves.push_back(&l);
  std::stable_sort(leaves.begin(), leaves.end(),
                   [](const RuleLeaf* a, const RuleLeaf* b) { return a->mean_gain > b->mean_gain; });
  if (leaves.size() > k) leaves.resize(k);
  return leaves;
}

}  // namespace

std::string slot_block(int slot_index, const Skill* skill, bool with_rules) {
  std::string out = fmt::format("slot_index={} skill_id={}\n", slot_index, skill ? skill->skill_id : "null");
  if (!skill) return out + "  (no skill assigned: propose a small exploratory edit)\n";
  out += "  L1 structure: " + skill->l1_structure + "\n";
  out += "  L1 condition: " + skill->l1_condition + "\n";
  if (!with_rules) return out;
  out += "  L2 rules:\n";
  if (skill->leaf_count() == 0) out += "    (none yet)\n";
  for (const auto& l : skill->l2_positive) out += leaf_line(l) + "\n";
  for (const auto& l : skill->l2_negative) out += leaf_line(l) + "\n";

  std::vector<const Observation*> obs;
  for (const auto& o : skill->l3_observations) obs.push_back(&o);
  std::stable_sort(obs.begin(), obs.end(), [](const Observation* a, const Observation* b) { return a->gain > b->gain; });
  if (obs.size() > 2) obs.resize(2);
  out += "  L3 examples:\n";
  if (obs.empty()) out += "    (none yet)\n";
  for (const auto* o : obs) {
    out += fmt::format("    obs_id={} gain={:+.3f} child_body={}\n", o->obs_id, o->gain, body_inline(o->child_body));
  }
  return out;
}

std::string history_block(const Body& parent, std::span<const HistoryEntry> history) {
  if (history.empty()) return "(none)";
  std::string out;
  for (const auto& h : history) {
    out += fmt::format("child_fitness={:.3f} voxel_diff={} child_body={}\n", h.fitness,
                       to_json(diff(parent, h.child)).dump(), body_inline(h.child));
  }
  out.pop_back();
  return out;
}

std::string static_reference_block(const TransferContext& ctx, std::span<const Body> references) {
  if (!ctx.with_reference || references.empty()) return "";
  std::string out = elite_addendum(ctx) + "\n";
  for (std::size_t i = 0; i < references.size(); ++i) {
    out += fmt::format("reference_{} ({}):\n{}\n", i, grid_label(references[i].size()), references[i].to_text());
  }
  return out;
}

std::string skills_summary_block(std::span<const Skill> skills) {
  if (skills.empty()) return "(no skills yet)";
  std::string out;
  for (const auto& s : skills) {
    json leaves = json::array();
    for (const auto* l : top_positive(s, 2)) {
      leaves.push_back({{"leaf_id", l->leaf_id}, {"claim", l->claim}, {"description", l->description}});
    }
    json j{{"skill_id", s.skill_id},
           {"l1", {{"structure", s.l1_structure}, {"condition", s.l1_condition}}},
           {"top_positive_leaves", leaves}};
    out += j.dump() + "\n";
  }
  out.pop_back();
  return out;
}

std::string designs_block(std::span<const Body> bodies) {
  std::string out;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    out += json{{"local_index", i}, {"body", to_json(bodies[i])}}.dump() + "\n";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

std::string scored_designs_block(std::span<const Observation> observations) {
  if (observations.empty()) return "(none)";
  std::string out;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& o = observations[i];
    out += json{{"obs_id", o.obs_id},
                {"label", i},
                {"fitness", o.fitness},
                {"gain", o.gain},
                {"body", to_json(o.child_body)}}
               .dump() +
           "\n";
  }
  out.pop_back();
  return out;
}

json leaves_json(const Skill& skill) {
  json out = json::array();
  for (const auto* side : {&skill.l2_positive, &skill.l2_negative}) {
    for (const auto& l : *side) {
      json j{{"leaf_id", l.leaf_id},         {"polarity", to_string(l.polarity)},
             {"claim", l.claim},             {"description", l.description},
             {"support_count", l.support_count}, {"mean_gain", l.mean_gain}};
      if (l.prior_support_count) {
        j["prior_support_count"] = *l.prior_support_count;
        j["prior_mean_gain"] = l.prior_mean_gain.value_or(0.0);
      }
      out.push_back(std::move(j));
    }
  }
  return out;
}

json pending_observations_json(std::span<const Observation> observations) {
  json out = json::array();
  for (const auto& o : observations) {
    out.push_back({{"obs_id", o.obs_id},
                   {"gain", o.gain},
                   {"child_fitness", o.fitness},
                   {"parent_fitness", o.parent_fitness},
                   {"voxel_diff", to_json(diff(o.parent_body, o.child_body))},
                   {"child_body", to_json(o.child_body)},
                   {"intended_leaf_id", o.intended_leaf_id ? json(*o.intended_leaf_id) : json(nullptr)},
                   {"prior_no_leaf_attempts", o.no_leaf_attempts}});
  }
  return out;
}

json context_observations_json(std::span<const Observation> observations) {
  json out = json::array();
  for (const auto& o : observations) {
    out.push_back({{"obs_id", o.obs_id},
                   {"gain", o.gain},
                   {"assigned_leaf_id", o.assigned_leaf_id ? json(*o.assigned_leaf_id) : json(nullptr)}});
  }
  return out;
}

std::string merge_skills_block(std::span<const Skill> skills) {
  std::string out;
  for (const auto& s : skills) {
    out += json{{"skill_id", s.skill_id},
                {"task_family", s.task_family},
                {"l1", {{"structure", s.l1_structure}, {"condition", s.l1_condition}}}}
               .dump() +
           "\n";
  }
  if (!out.empty()) out.pop_back();
  return out;
}

Substitutions diagnose_substitutions(const Skill& skill, std::span<const Observation> pending,
                                     std::span<const Observation> context, double gen_mean, double gen_p25) {
  return {{"l1_condition", skill.l1_condition},
          {"leaves_json", leaves_json(skill).dump(2)},
          {"unassigned_json", pending_observations_json(pending).dump(2)},
          {"context_json", context_observations_json(context).dump(2)},
          {"gen_mean", fmt::format("{:.17g}", gen_mean)},
          {"gen_p25", fmt::format("{:.17g}", gen_p25)},
          {"cold_start_note", skill.leaf_count() == 0
                                  ? "This skill has no L2 leaves yet; create leaves only for clear sub-patterns."
                                  : ""}};
}

}  // namespace morphoskill
