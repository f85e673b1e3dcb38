#pragma once

#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "morphoskill/voxel_body.hpp"

namespace morphoskill::heuristic {

/// Edit families the heuristic backend reasons with.
enum class Tactic { Brace, Actuate, Pad, Legs, Grow, Trim };
inline constexpr Tactic kAllTactics[] = {Tactic::Brace, Tactic::Actuate, Tactic::Pad,
                                         Tactic::Legs,  Tactic::Grow,    Tactic::Trim};

std::string to_string(Tactic t);
const std::vector<std::string>& keywords(Tactic t);

/// Lowercased alphanumeric tokens; underscores split words.
std::vector<std::string> tokenize(const std::string& text);
/// Whole-word match allowing a suffix on either side ("brace" ~ "braced").
bool word_match(const std::string& a, const std::string& b);
/// Number of `needles` that match some word of `haystack`.
int overlap(const std::vector<std::string>& needles, const std::vector<std::string>& haystack);

/// Structural keywords describing a valid body, drawn from the archetype vocabulary.
std::vector<std::string> body_descriptors(const Body& body);

/// Tactic that best explains the edits from parent to child.
Tactic classify_edit(const Body& parent, const Body& child);

/// Applies one edit of the given family in place. False if no legal edit exists.
bool apply_tactic(Body& body, Tactic t, std::mt19937_64& rng);

struct Archetype {
  std::string skill_id;
  std::string structure;
  std::string condition;
  std::vector<std::string> triggers;  // descriptors that indicate the archetype
};

const std::vector<Archetype>& archetypes();

/// Cold-start design of archetype family `family` (wraps modulo the family count).
Body archetype_body(int family, int size, std::mt19937_64& rng);

}  // namespace morphoskill::heuristic
