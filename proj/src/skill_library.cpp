#include "morphoskill/skill_library.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>

#include "morphoskill/errors.hpp"
#include "morphoskill/rng.hpp"

namespace morphoskill {

std::string to_string(Polarity p) { return p == Polarity::Positive ? "positive" : "negative"; }
std::string to_string(ProposalPath p) { return p == ProposalPath::A ? "A" : "B"; }

namespace {

std::string leaf_prefix(Polarity p) { return p == Polarity::Positive ? "pos_" : "neg_"; }

std::vector<RuleLeaf>& leaves_for(Skill& s, Polarity p) {
  return p == Polarity::Positive ? s.l2_positive : s.l2_negative;
}

RuleLeaf* find_in(std::vector<RuleLeaf>& leaves, const std::string& id) {
  auto it = std::find_if(leaves.begin(), leaves.end(), [&](const RuleLeaf& l) { return l.leaf_id == id; });
  return it == leaves.end() ? nullptr : &*it;
}

Observation& attach(Skill& skill, Observation obs) {
  obs.obs_id = skill.next_obs_id_counter++;
  obs.attributed_skill = skill.skill_id;
  skill.l3_observations.push_back(std::move(obs));
  return skill.l3_observations.back();
}

void check_decisions(std::size_t n, std::span<const AttributionDecision> decisions) {
  std::vector<char> seen(n, 0);
  for (const auto& d : decisions) {
    if (d.local_index >= n) throw UnknownObsId("attribution index " + std::to_string(d.local_index) + " out of range");
    if (seen[d.local_index]) throw DuplicateDecision("observation " + std::to_string(d.local_index) + " decided twice");
    seen[d.local_index] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw SchemaViolation("no attribution decision for observation " + std::to_string(i));
  }
}

}  // namespace

const RuleLeaf* Skill::find_leaf(const std::string& leaf_id) const {
  return const_cast<Skill*>(this)->find_leaf(leaf_id);
}

RuleLeaf* Skill::find_leaf(const std::string& leaf_id) {
  if (auto* l = find_in(l2_positive, leaf_id)) return l;
  return find_in(l2_negative, leaf_id);
}

Observation* Skill::find_observation(std::int64_t obs_id) {
  auto it = std::find_if(l3_observations.begin(), l3_observations.end(),
                         [&](const Observation& o) { return o.obs_id == obs_id; });
  return it == l3_observations.end() ? nullptr : &*it;
}

const Skill* SkillLibrary::find(const std::string& skill_id) const {
  return const_cast<SkillLibrary*>(this)->find(skill_id);
}

Skill* SkillLibrary::find(const std::string& skill_id) {
  auto it = std::find_if(skills.begin(), skills.end(), [&](const Skill& s) { return s.skill_id == skill_id; });
  return it == skills.end() ? nullptr : &*it;
}

std::size_t SkillLibrary::observation_count() const {
  std::size_t n = 0;
  for (const auto& s : skills) n += s.l3_observations.size();
  return n;
}

std::size_t SkillLibrary::leaf_count() const {
  std::size_t n = 0;
  for (const auto& s : skills) n += s.leaf_count();
  return n;
}

double skill_weight(std::span<const double> gains, double delta_max) {
  if (!(delta_max > 0.0)) throw std::invalid_argument("delta_max must be positive");
  double sum = 0.0;
  for (double g : gains) sum += std::clamp(g / delta_max, 0.0, 1.0);
  return (1.0 + sum) / (2.0 + static_cast<double>(gains.size()));
}

double skill_weight(const Skill& skill, double delta_max) {
  std::vector<double> gains;
  gains.reserve(skill.l3_observations.size());
  for (const auto& o : skill.l3_observations) gains.push_back(o.gain);
  return skill_weight(gains, delta_max);
}

const Skill& sample_skill(std::span<const Skill* const> candidates, double delta_max, std::uint64_t seed) {
  if (candidates.empty()) throw EmptyCandidates("no skills to sample from");
  std::vector<double> weights;
  weights.reserve(candidates.size());
  for (const Skill* s : candidates) weights.push_back(skill_weight(*s, delta_max));
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);

  Rng rng{seed};
  const double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    acc += weights[i];
    if (u < acc) return *candidates[i];
  }
  return *candidates.back();
}

std::vector<const Skill*> retrieve(const SkillLibrary& library, const std::string& task, int /*scale*/,
                                   int generation, int prior_only_horizon) {
  std::vector<const Skill*> matches;
  for (const auto& s : library.skills) {
    if (std::find(s.task_family.begin(), s.task_family.end(), task) != s.task_family.end()) matches.push_back(&s);
  }
  if (generation < prior_only_horizon) {
    std::vector<const Skill*> imported;
    std::copy_if(matches.begin(), matches.end(), std::back_inserter(imported),
                 [](const Skill* s) { return s->imported; });
    if (!imported.empty()) return imported;
  }
  return matches;
}

RuleLeaf update_rule_mean(RuleLeaf leaf, double gain) {
  leaf.support_count += 1;
  leaf.mean_gain += (gain - leaf.mean_gain) / static_cast<double>(leaf.support_count);
  return leaf;
}

SkillLibrary apply_attribution(SkillLibrary library, std::vector<Observation> observations,
                               std::span<const AttributionDecision> decisions) {
  check_decisions(observations.size(), decisions);
  for (const auto& d : decisions) {
    if (d.skill_id && !library.find(*d.skill_id)) throw UnknownSkillId("attribution to unknown skill " + *d.skill_id);
  }
  for (const auto& d : decisions) {
    Observation obs = std::move(observations[d.local_index]);
    if (d.skill_id) {
      attach(*library.find(*d.skill_id), std::move(obs));
    } else {
      obs.attributed_skill.reset();
      obs.obs_id = library.next_pool_obs_id++;
      library.pool.entries.push_back(std::move(obs));
    }
  }
  return library;
}

SkillLibrary apply_reattribution(SkillLibrary library, std::span<const AttributionDecision> decisions) {
  auto& entries = library.pool.entries;
  check_decisions(entries.size(), decisions);
  for (const auto& d : decisions) {
    if (d.skill_id && !library.find(*d.skill_id)) throw UnknownSkillId("attribution to unknown skill " + *d.skill_id);
  }
  std::vector<std::optional<std::string>> target(entries.size());
  for (const auto& d : decisions) target[d.local_index] = d.skill_id;

  std::vector<Observation> kept;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (target[i]) {
      attach(*library.find(*target[i]), std::move(entries[i]));
    } else {
      kept.push_back(std::move(entries[i]));
    }
  }
  entries = std::move(kept);
  return library;
}

bool is_valid_skill_id(const std::string& id) {
  static const std::regex kId(R"(^[a-z][a-z0-9]*(_[a-z0-9]+){0,2}$)");
  static const std::regex kVersion(R"((^|_)v[0-9]+$)");
  return std::regex_match(id, kId) && !std::regex_search(id, kVersion);
}

SkillLibrary apply_add(SkillLibrary library, const AddDecision& decision, int generation) {
  if (!decision.add) return library;
  if (!decision.skill) throw SchemaViolation("add decision without a skill");
  if (library.last_add_generation == generation) {
    throw SchemaViolation("a skill was already added in generation " + std::to_string(generation));
  }
  Skill skill = *decision.skill;
  if (!is_valid_skill_id(skill.skill_id)) throw MalformedSkillId("malformed skill id '" + skill.skill_id + "'");
  if (library.find(skill.skill_id)) throw DuplicateSkillId("skill '" + skill.skill_id + "' already exists");
  if (!skill.l2_positive.empty() || !skill.l2_negative.empty() || !skill.l3_observations.empty()) {
    throw SchemaViolation("new skills must be born with empty L2 and L3");
  }
  skill.next_leaf_id_counter = 0;
  skill.next_obs_id_counter = 0;
  skill.imported = false;
  library.skills.push_back(std::move(skill));
  library.last_add_generation = generation;
  return library;
}

bool contains_coordinates(const std::string& text) {
  static const std::regex kPatterns(
      R"((\b(row|rows|column|columns|col|cols)\s*#?\s*\d+)|(\(\s*\d+\s*,\s*\d+\s*\))|(\[\s*\d+\s*,\s*\d+\s*\])|(\bvoxel\s+at\b)|(\bcell\s+\d))",
      std::regex::icase);
  return std::regex_search(text, kPatterns);
}

bool assign_targeted(Skill& skill, std::int64_t obs_id, const std::string& leaf_id) {
  Observation* obs = skill.find_observation(obs_id);
  RuleLeaf* leaf = skill.find_leaf(leaf_id);
  if (!obs || !leaf || !is_pending(*obs)) return false;
  *leaf = update_rule_mean(std::move(*leaf), obs->gain);
  leaf->supporting_obs_ids.push_back(obs_id);
  obs->assigned_leaf_id = leaf_id;
  return true;
}

Skill apply_diagnose(Skill skill, std::span<const LeafAssignment> assignments,
                     std::span<const StandaloneLeaf> standalone, std::vector<std::string>* notes) {
  auto note = [&](const std::string& msg) {
    if (notes) notes->push_back(msg);
  };

  // Validate references up front so a bad decision leaves the skill untouched.
  std::set<std::int64_t> seen;
  for (const auto& a : assignments) {
    if (!skill.find_observation(a.obs_id)) {
      throw UnknownObsId("skill " + skill.skill_id + " has no observation " + std::to_string(a.obs_id));
    }
    if (!seen.insert(a.obs_id).second) throw DuplicateDecision("observation " + std::to_string(a.obs_id) + " decided twice");
    if (a.kind == LeafAssignment::Kind::MatchExisting && !skill.find_leaf(a.leaf_id)) {
      throw UnknownLeafId("skill " + skill.skill_id + " has no leaf " + a.leaf_id);
    }
  }
  for (const auto& s : standalone) {
    for (auto id : s.supporting_obs_ids) {
      if (!skill.find_observation(id)) throw UnknownObsId("standalone leaf cites unknown observation " + std::to_string(id));
    }
  }

  auto no_leaf = [&](Observation& obs) {
    obs.no_leaf_attempts = std::min(obs.no_leaf_attempts + 1, kMaxNoLeafAttempts);
    if (obs.no_leaf_attempts == kMaxNoLeafAttempts) note("obs " + std::to_string(obs.obs_id) + " frozen after 3 no_leaf attempts");
  };

  for (const auto& a : assignments) {
    Observation& obs = *skill.find_observation(a.obs_id);
    if (!is_pending(obs)) {
      note("obs " + std::to_string(a.obs_id) + " is not pending; decision ignored");
      continue;
    }
    switch (a.kind) {
      case LeafAssignment::Kind::NoLeaf:
        no_leaf(obs);
        break;
      case LeafAssignment::Kind::MatchExisting: {
        if (a.description_update && contains_coordinates(a.description_update->text)) {
          note("CoordinateLeakage: description update for " + a.leaf_id + " rejected");
          no_leaf(obs);
          break;
        }
        RuleLeaf& leaf = *skill.find_leaf(a.leaf_id);
        if (a.description_update) {
          if (a.description_update->mode == DescriptionUpdate::Mode::Overwrite) {
            leaf.description = a.description_update->text;
          } else {
            leaf.description += (leaf.description.empty() ? "" : " ") + a.description_update->text;
          }
        }
        assign_targeted(skill, a.obs_id, a.leaf_id);
        break;
      }
      case LeafAssignment::Kind::NewLeaf: {
        if (contains_coordinates(a.claim) || contains_coordinates(a.description)) {
          note("CoordinateLeakage: new leaf '" + a.claim + "' rejected");
          no_leaf(obs);
          break;
        }
        RuleLeaf leaf;
        leaf.leaf_id = leaf_prefix(a.polarity) + std::to_string(skill.next_leaf_id_counter++);
        leaf.polarity = a.polarity;
        leaf.claim = a.claim;
        leaf.description = a.description;
        const std::string id = leaf.leaf_id;
        leaves_for(skill, a.polarity).push_back(std::move(leaf));
        assign_targeted(skill, a.obs_id, id);
        break;
      }
    }
  }

  for (const auto& s : standalone) {
    std::vector<std::int64_t> ids;
    for (auto id : s.supporting_obs_ids) {
      if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
    }
    if (ids.size() < 2) {
      note("standalone leaf '" + s.claim + "' needs at least 2 supporting observations");
      continue;
    }
    if (contains_coordinates(s.claim) || contains_coordinates(s.description)) {
      note("CoordinateLeakage: standalone leaf '" + s.claim + "' rejected");
      continue;
    }
    RuleLeaf leaf;
    leaf.leaf_id = leaf_prefix(s.polarity) + std::to_string(skill.next_leaf_id_counter++);
    leaf.polarity = s.polarity;
    leaf.claim = s.claim;
    leaf.description = s.description;
    for (auto id : ids) {
      Observation& obs = *skill.find_observation(id);
      leaf = update_rule_mean(std::move(leaf), obs.gain);
      leaf.supporting_obs_ids.push_back(id);
      if (!obs.assigned_leaf_id) obs.assigned_leaf_id = leaf.leaf_id;
    }
    leaves_for(skill, s.polarity).push_back(std::move(leaf));
  }
  return skill;
}

SkillLibrary apply_merge(SkillLibrary library, std::span<const MergeCluster> clusters) {
  std::set<std::string> claimed;
  std::set<std::string> labels;
  for (const auto& c : clusters) {
    std::set<std::string> ids(c.skill_ids.begin(), c.skill_ids.end());
    if (ids.size() < 2) throw SingletonCluster("cluster '" + c.group_label + "' has fewer than two skills");
    for (const auto& id : ids) {
      if (!library.find(id)) throw UnknownSkillId("merge references unknown skill " + id);
      if (!claimed.insert(id).second) throw OverlappingClusters("skill " + id + " appears in two clusters");
    }
    if (!is_valid_skill_id(c.group_label)) throw MalformedSkillId("malformed group label '" + c.group_label + "'");
    if (!labels.insert(c.group_label).second) throw DuplicateSkillId("group label '" + c.group_label + "' used twice");
  }
  for (const auto& c : clusters) {
    if (library.find(c.group_label) && !claimed.count(c.group_label)) {
      throw DuplicateSkillId("group label '" + c.group_label + "' collides with an existing skill");
    }
  }

  for (const auto& c : clusters) {
    std::vector<const Skill*> members;
    for (const auto& id : std::set<std::string>(c.skill_ids.begin(), c.skill_ids.end())) members.push_back(library.find(id));
    // L1 owner: most observations, ties to the smallest id (members are id-sorted).
    auto owner_it = std::max_element(members.begin(), members.end(), [](const Skill* a, const Skill* b) {
      return a->l3_observations.size() < b->l3_observations.size();
    });
    std::rotate(members.begin(), owner_it, owner_it + 1);
    const Skill& owner = *members.front();

    Skill merged;
    merged.skill_id = c.group_label;
    merged.l1_structure = owner.l1_structure;
    merged.l1_condition = owner.l1_condition;
    for (const Skill* m : members) {
      for (const auto& t : m->task_family) {
        if (std::find(merged.task_family.begin(), merged.task_family.end(), t) == merged.task_family.end()) {
          merged.task_family.push_back(t);
        }
      }
      merged.imported = merged.imported || m->imported;
    }

    for (const Skill* m : members) {
      std::map<std::int64_t, std::int64_t> obs_map;
      std::map<std::string, std::string> leaf_map;
      const std::size_t first_obs = merged.l3_observations.size();
      for (const auto& o : m->l3_observations) {
        Observation copy = o;
        copy.obs_id = merged.next_obs_id_counter++;
        copy.attributed_skill = merged.skill_id;
        obs_map[o.obs_id] = copy.obs_id;
        merged.l3_observations.push_back(std::move(copy));
      }
      for (const auto* leaves : {&m->l2_positive, &m->l2_negative}) {
        for (const auto& l : *leaves) {
          RuleLeaf copy = l;
          copy.leaf_id = leaf_prefix(l.polarity) + std::to_string(merged.next_leaf_id_counter++);
          leaf_map[l.leaf_id] = copy.leaf_id;
          for (auto& id : copy.supporting_obs_ids) {
            if (auto it = obs_map.find(id); it != obs_map.end()) id = it->second;
          }
          leaves_for(merged, l.polarity).push_back(std::move(copy));
        }
      }
      for (std::size_t i = first_obs; i < merged.l3_observations.size(); ++i) {
        auto& o = merged.l3_observations[i];
        for (auto* field : {&o.assigned_leaf_id, &o.intended_leaf_id}) {
          if (!*field) continue;
          auto it = leaf_map.find(**field);
          if (it != leaf_map.end()) {
            *field = it->second;
          } else {
            field->reset();
          }
        }
      }
    }

    // The merged skill takes the owner's slot; absorbed members are removed.
    const std::string owner_id = owner.skill_id;
    std::set<std::string> absorbed(c.skill_ids.begin(), c.skill_ids.end());
    std::vector<Skill> next;
    for (auto& s : library.skills) {
      if (s.skill_id == owner_id) {
        next.push_back(merged);
      } else if (!absorbed.count(s.skill_id)) {
        next.push_back(std::move(s));
      }
    }
    library.skills = std::move(next);
  }
  return library;
}

SkillLibrary import_for_transfer(const SkillLibrary& source) {
  SkillLibrary out;
  out.task = source.task;
  out.scale = source.scale;
  for (const auto& s : source.skills) {
    Skill copy = s;
    copy.l3_observations.clear();
    copy.imported = true;
    for (auto* leaves : {&copy.l2_positive, &copy.l2_negative}) {
      for (auto& l : *leaves) {
        if (l.support_count > 0 || !l.prior_support_count) {
          l.prior_support_count = l.support_count;
          l.prior_mean_gain = l.mean_gain;
        }
        l.support_count = 0;
        l.mean_gain = 0.0;
        l.supporting_obs_ids.clear();
      }
    }
    out.skills.push_back(std::move(copy));
  }
  return out;
}

bool pool_pressure(const UnassignedPool& pool, std::size_t threshold) {
  if (threshold == 0) throw std::invalid_argument("pool threshold must be positive");
  return pool.size() >= threshold;
}

std::vector<std::string> audit(const SkillLibrary& library) {
  std::vector<std::string> problems;
  std::set<std::string> ids;
  static const std::regex kLeafId(R"(^(pos|neg)_[0-9]+$)");
  for (const auto& s : library.skills) {
    const std::string where = "skill " + s.skill_id + ": ";
    if (!ids.insert(s.skill_id).second) problems.push_back(where + "duplicate skill id");
    std::set<std::int64_t> obs_ids;
    std::map<std::int64_t, double> gains;
    for (const auto& o : s.l3_observations) {
      if (!obs_ids.insert(o.obs_id).second) problems.push_back(where + "duplicate obs id " + std::to_string(o.obs_id));
      if (o.attributed_skill != s.skill_id) problems.push_back(where + "obs attributed elsewhere");
      if (o.no_leaf_attempts > kMaxNoLeafAttempts) problems.push_back(where + "no_leaf_attempts above cap");
      if (o.assigned_leaf_id && !s.find_leaf(*o.assigned_leaf_id)) problems.push_back(where + "obs assigned to missing leaf");
      gains[o.obs_id] = o.gain;
    }
    std::set<std::string> leaf_ids;
    for (const auto* leaves : {&s.l2_positive, &s.l2_negative}) {
      for (const auto& l : *leaves) {
        if (!leaf_ids.insert(l.leaf_id).second) problems.push_back(where + "duplicate leaf id " + l.leaf_id);
        if (!std::regex_match(l.leaf_id, kLeafId)) problems.push_back(where + "malformed leaf id " + l.leaf_id);
        if (l.leaf_id.rfind(leaf_prefix(l.polarity), 0) != 0) problems.push_back(where + "leaf prefix/polarity mismatch");
        if (l.support_count != static_cast<int>(l.supporting_obs_ids.size())) {
          problems.push_back(where + l.leaf_id + " support_count != supporting ids");
        }
        if (contains_coordinates(l.description)) problems.push_back(where + l.leaf_id + " description names coordinates");
        if (l.supporting_obs_ids.empty()) continue;
        double sum = 0.0;
        bool resolvable = true;
        for (auto id : l.supporting_obs_ids) {
          auto it = gains.find(id);
          if (it == gains.end()) {
            resolvable = false;
            break;
          }
          sum += it->second;
        }
        if (!resolvable) {
          problems.push_back(where + l.leaf_id + " cites missing observation");
        } else if (std::abs(sum / l.supporting_obs_ids.size() - l.mean_gain) > 1e-9) {
          problems.push_back(where + l.leaf_id + " mean_gain drifted from arithmetic mean");
        }
      }
    }
  }
  for (const auto& o : library.pool.entries) {
    if (o.attributed_skill) problems.push_back("pool entry " + std::to_string(o.obs_id) + " carries a skill");
  }
  return problems;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <class T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> opt_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

nlohmann::json to_json(const RuleLeaf& l) {
  nlohmann::json j{{"leaf_id", l.leaf_id},
                   {"polarity", to_string(l.polarity)},
                   {"claim", l.claim},
                   {"description", l.description},
                   {"support_count", l.support_count},
                   {"mean_gain", l.mean_gain},
                   {"supporting_obs_ids", l.supporting_obs_ids}};
  if (l.prior_support_count) j["prior_support_count"] = *l.prior_support_count;
  if (l.prior_mean_gain) j["prior_mean_gain"] = *l.prior_mean_gain;
  return j;
}

nlohmann::json to_json(const Observation& o) {
  return {{"obs_id", o.obs_id},
          {"eval_index", o.eval_index},
          {"generation", o.generation},
          {"child_body", to_json(o.child_body)},
          {"parent_body", to_json(o.parent_body)},
          {"task", o.task},
          {"scale", o.scale},
          {"fitness", o.fitness},
          {"parent_fitness", o.parent_fitness},
          {"gain", o.gain},
          {"valid", o.valid},
          {"proposal_path", to_string(o.proposal_path)},
          {"attributed_skill", opt(o.attributed_skill)},
          {"intended_leaf_id", opt(o.intended_leaf_id)},
          {"assigned_leaf_id", opt(o.assigned_leaf_id)},
          {"no_leaf_attempts", o.no_leaf_attempts}};
}

nlohmann::json to_json(const Skill& s) {
  auto pos = nlohmann::json::array();
  auto neg = nlohmann::json::array();
  auto obs = nlohmann::json::array();
  for (const auto& l : s.l2_positive) pos.push_back(to_json(l));
  for (const auto& l : s.l2_negative) neg.push_back(to_json(l));
  for (const auto& o : s.l3_observations) obs.push_back(to_json(o));
  return {{"skill_id", s.skill_id},
          {"task_family", s.task_family},
          {"condition", s.l1_condition},
          {"l1", {{"structure", s.l1_structure}, {"condition", s.l1_condition}}},
          {"l2", {{"positive", pos}, {"negative", neg}, {"next_leaf_id_counter", s.next_leaf_id_counter}}},
          {"l3", {{"observations", obs}, {"next_obs_id_counter", s.next_obs_id_counter}}},
          {"imported", s.imported}};
}

nlohmann::json to_json(const SkillLibrary& lib) {
  auto skills = nlohmann::json::array();
  auto pool = nlohmann::json::array();
  for (const auto& s : lib.skills) skills.push_back(to_json(s));
  for (const auto& o : lib.pool.entries) pool.push_back(to_json(o));
  return {{"schema_version", SkillLibrary::kSchemaVersion},
          {"task", lib.task},
          {"scale", lib.scale},
          {"skills", skills},
          {"unassigned_pool", pool},
          {"counters",
           {{"next_pool_obs_id", lib.next_pool_obs_id},
            {"last_add_generation", lib.last_add_generation},
            {"generation", lib.generation}}}};
}

RuleLeaf leaf_from_json(const nlohmann::json& j, Polarity polarity) {
  RuleLeaf l;
  l.leaf_id = j.at("leaf_id").get<std::string>();
  l.polarity = polarity;
  l.claim = j.at("claim").get<std::string>();
  l.description = j.value("description", "");
  l.support_count = j.value("support_count", 0);
  l.mean_gain = j.value("mean_gain", 0.0);
  l.supporting_obs_ids = j.value("supporting_obs_ids", std::vector<std::int64_t>{});
  l.prior_support_count = opt_get<int>(j, "prior_support_count");
  l.prior_mean_gain = opt_get<double>(j, "prior_mean_gain");
  return l;
}

Observation observation_from_json(const nlohmann::json& j) {
  Observation o;
  o.obs_id = j.at("obs_id").get<std::int64_t>();
  o.eval_index = j.value("eval_index", std::int64_t{-1});
  o.generation = j.value("generation", 0);
  o.child_body = body_from_json(j.at("child_body"));
  o.parent_body = body_from_json(j.at("parent_body"));
  o.task = j.value("task", "");
  o.scale = j.value("scale", o.child_body.size());
  o.fitness = j.at("fitness").get<double>();
  o.parent_fitness = j.value("parent_fitness", 0.0);
  o.gain = j.at("gain").get<double>();
  o.valid = j.value("valid", true);
  o.proposal_path = j.value("proposal_path", "B") == "A" ? ProposalPath::A : ProposalPath::B;
  o.attributed_skill = opt_get<std::string>(j, "attributed_skill");
  o.intended_leaf_id = opt_get<std::string>(j, "intended_leaf_id");
  o.assigned_leaf_id = opt_get<std::string>(j, "assigned_leaf_id");
  o.no_leaf_attempts = j.value("no_leaf_attempts", 0);
  return o;
}

Skill skill_from_json(const nlohmann::json& j) {
  Skill s;
  s.skill_id = j.at("skill_id").get<std::string>();
  s.task_family = j.at("task_family").get<std::vector<std::string>>();
  const auto& l1 = j.at("l1");
  s.l1_structure = l1.at("structure").get<std::string>();
  s.l1_condition = l1.at("condition").get<std::string>();
  const auto& l2 = j.at("l2");
  for (const auto& l : l2.at("positive")) s.l2_positive.push_back(leaf_from_json(l, Polarity::Positive));
  for (const auto& l : l2.at("negative")) s.l2_negative.push_back(leaf_from_json(l, Polarity::Negative));
  s.next_leaf_id_counter = l2.value("next_leaf_id_counter", std::int64_t{0});
  const auto& l3 = j.at("l3");
  for (const auto& o : l3.at("observations")) s.l3_observations.push_back(observation_from_json(o));
  s.next_obs_id_counter = l3.value("next_obs_id_counter", std::int64_t{0});
  s.imported = j.value("imported", false);
  return s;
}

SkillLibrary library_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw SchemaViolation("library document must be an object");
    const int version = j.at("schema_version").get<int>();
    if (version != SkillLibrary::kSchemaVersion) {
      throw SchemaViolation("unsupported library schema_version " + std::to_string(version));
    }
    SkillLibrary lib;
    lib.task = j.value("task", "");
    lib.scale = j.value("scale", 0);
    for (const auto& s : j.at("skills")) lib.skills.push_back(skill_from_json(s));
    for (const auto& o : j.value("unassigned_pool", nlohmann::json::array())) {
      lib.pool.entries.push_back(observation_from_json(o));
    }
    if (j.contains("counters")) {
      const auto& c = j.at("counters");
      lib.next_pool_obs_id = c.value("next_pool_obs_id", std::int64_t{0});
      lib.last_add_generation = c.value("last_add_generation", -1);
      lib.generation = c.value("generation", -1);
    }
    if (auto problems = audit(lib); !problems.empty()) throw SchemaViolation(problems.front());
    return lib;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaViolation(std::string("library JSON: ") + e.what());
  } catch (const MalformedBody& e) {
    throw SchemaViolation(std::string("library body: ") + e.what());
  }
}

SkillLibrary load_library(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SourceLibraryMissing("cannot open library file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaViolation(std::string("library file is not JSON: ") + e.what());
  }
  return library_from_json(j);
}

void save_library(const SkillLibrary& library, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << to_json(library).dump(2) << '\n';
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot replace " + path);
}

}  // namespace morphoskill
