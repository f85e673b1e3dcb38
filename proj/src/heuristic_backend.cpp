#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "morphoskill/errors.hpp"
#include "morphoskill/gateway.hpp"
#include "morphoskill/heuristic.hpp"
#include "morphoskill/prompt_blocks.hpp"
#include "morphoskill/rng.hpp"

namespace morphoskill {

using nlohmann::json;

namespace heuristic {

std::string to_string(Tactic t) {
  switch (t) {
    case Tactic::Brace: return "brace";
    case Tactic::Actuate: return "actuate";
    case Tactic::Pad: return "pad";
    case Tactic::Legs: return "legs";
    case Tactic::Grow: return "grow";
    case Tactic::Trim: return "trim";
  }
  return "?";
}

const std::vector<std::string>& keywords(Tactic t) {
  static const std::map<Tactic, std::vector<std::string>> kWords{
      {Tactic::Brace, {"brace", "rigid", "frame", "stiff", "support"}},
      {Tactic::Actuate, {"actuator", "actuate", "column", "stroke", "muscle"}},
      {Tactic::Pad, {"pad", "soft", "contact", "crawl", "compliant", "foot"}},
      {Tactic::Legs, {"leg", "arch", "gap", "separated", "tripod"}},
      {Tactic::Grow, {"grow", "fill", "solid", "block", "shell", "compact", "rail", "width", "mass", "dense"}},
      {Tactic::Trim, {"trim", "remove", "slim", "light", "taper"}},
  };
  return kWords.at(t);
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

bool word_match(const std::string& a, const std::string& b) {
  if (a == b) return true;
  const auto& shorter = a.size() < b.size() ? a : b;
  const auto& longer = a.size() < b.size() ? b : a;
  return shorter.size() >= 3 && longer.size() - shorter.size() <= 3 && longer.compare(0, shorter.size(), shorter) == 0;
}

int overlap(const std::vector<std::string>& needles, const std::vector<std::string>& haystack) {
  int n = 0;
  for (const auto& w : needles) {
    if (std::any_of(haystack.begin(), haystack.end(), [&](const std::string& h) { return word_match(w, h); })) ++n;
  }
  return n;
}

namespace {

int lowest_row(const Body& b) {
  for (int r = b.size() - 1; r >= 0; --r) {
    for (int c = 0; c < b.size(); ++c) {
      if (b.at(r, c)) return r;
    }
  }
  return -1;
}

template <typename F>
void for_neighbours(const Body& b, int r, int c, F&& f) {
  const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
  for (const auto& rc : nbr) {
    if (b.in_bounds(rc[0], rc[1])) f(rc[0], rc[1]);
  }
}

bool touches(const Body& b, int r, int c, bool (*pred)(int)) {
  bool hit = false;
  for_neighbours(b, r, c, [&](int rr, int cc) { hit = hit || pred(b.at(rr, cc)); });
  return hit;
}

bool occupied(int code) { return code != 0; }
bool actuator(int code) { return is_actuator(code); }

}  // namespace

std::vector<std::string> body_descriptors(const Body& body) {
  const int n = body.size();
  int occ = 0, act = 0, rigid = 0, braced = 0;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int code = body.at(r, c);
      if (!code) continue;
      ++occ;
      if (code == 1) ++rigid;
      if (is_actuator(code)) {
        ++act;
        int rigid_nbrs = 0;
        for_neighbours(body, r, c, [&](int rr, int cc) { rigid_nbrs += body.at(rr, cc) == 1; });
        if (rigid_nbrs >= 2) ++braced;
      }
    }
  }
  std::vector<std::string> out;
  auto add = [&](std::initializer_list<const char*> words) { out.insert(out.end(), words.begin(), words.end()); };
  if (occ == 0) return out;
  if (rigid * 10 >= occ * 3 && act > 0 && braced * 2 >= act) add({"frame", "rigid", "brace", "stiff", "support"});
  if (act * 10 >= occ * 3) add({"actuators", "column", "stroke", "core"});

  const int low = lowest_row(body);
  int runs = 0, filled = 0, soft = 0;
  for (int c = 0; c < n; ++c) {
    const int code = body.at(low, c);
    if (code) {
      ++filled;
      if (code == 2) ++soft;
      if (c == 0 || !body.at(low, c - 1)) ++runs;
    }
  }
  if (runs >= 2) add({"legs", "arch", "gap", "separated"});
  if (soft * 2 >= filled) add({"soft", "pad", "contact", "compliant"});
  if (filled == n) add({"rail", "width", "horizontal", "bottom"});
  if (occ * 100 >= 85 * n * n) add({"solid", "block", "shell", "compact"});
  return out;
}

Tactic classify_edit(const Body& parent, const Body& child) {
  std::map<Tactic, int> votes;
  const int low_child = lowest_row(child);
  const int low_parent = lowest_row(parent);
  for (const auto& e : diff(parent, child).edits) {
    Tactic t;
    if (is_actuator(e.new_code)) {
      t = Tactic::Actuate;
    } else if (e.new_code == 1 && touches(child, e.row, e.col, actuator)) {
      t = Tactic::Brace;
    } else if (e.new_code == 2 && e.row == low_child) {
      t = Tactic::Pad;
    } else if (e.new_code == 0 && e.row == low_parent) {
      t = Tactic::Legs;
    } else if (e.new_code == 0) {
      t = Tactic::Trim;
    } else if (e.old_code == 0) {
      t = Tactic::Grow;
    } else {
      t = e.new_code == 1 ? Tactic::Brace : Tactic::Pad;
    }
    ++votes[t];
  }
  Tactic best = Tactic::Grow;
  int best_votes = -1;
  for (auto t : kAllTactics) {
    if (votes[t] > best_votes) {
      best = t;
      best_votes = votes[t];
    }
  }
  return best;
}

bool apply_tactic(Body& body, Tactic t, std::mt19937_64& rng) {
  const int n = body.size();
  struct Edit {
    int r, c, code;
  };
  std::vector<Edit> cands;
  std::uniform_int_distribution<int> coin(0, 1);
  const int low = lowest_row(body);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int code = body.at(r, c);
      const bool near_body = touches(body, r, c, occupied);
      switch (t) {
        case Tactic::Brace:
          if (code != 1 && !is_actuator(code) && touches(body, r, c, actuator)) cands.push_back({r, c, 1});
          break;
        case Tactic::Actuate:
          if (!is_actuator(code) && (code || near_body)) cands.push_back({r, c, 3 + coin(rng)});
          break;
        case Tactic::Pad:
          if (r == low && code != 2 && !is_actuator(code) && (code || near_body)) cands.push_back({r, c, 2});
          break;
        case Tactic::Legs:
          if (r == low && c > 0 && c < n - 1 && code) cands.push_back({r, c, 0});
          break;
        case Tactic::Grow:
          if (!code && near_body) cands.push_back({r, c, 1 + coin(rng)});
          break;
        case Tactic::Trim:
          if (code && !is_actuator(code)) {
            bool edge = r == 0 || c == 0 || r == n - 1 || c == n - 1;
            for_neighbours(body, r, c, [&](int rr, int cc) { edge = edge || !body.at(rr, cc); });
            if (edge) cands.push_back({r, c, 0});
          }
          break;
      }
    }
  }
  std::shuffle(cands.begin(), cands.end(), rng);
  for (const auto& e : cands) {
    const int old = body.at(e.r, e.c);
    body.set(e.r, e.c, e.code);
    if (is_valid(body)) return true;
    body.set(e.r, e.c, old);
  }
  return false;
}

const std::vector<Archetype>& archetypes() {
  static const std::vector<Archetype> kTable{
      {"braced_actuator_frame", "frame",
       "rigid frame voxels surround and brace the actuators so that actuation pushes against stiff support "
       "instead of deforming the body",
       {"frame"}},
      {"legged_arch", "arch",
       "body rests on two or more separated legs with an open gap underneath, forming an arch that lifts the torso",
       {"legs"}},
      {"actuator_column", "column",
       "a vertical column of actuators runs through the body core, flanked by passive material that transmits each "
       "stroke",
       {"column"}},
      {"soft_pad_crawler", "crawler",
       "a low flat body whose bottom layer is mostly soft voxels, giving a wide compliant contact patch for crawling",
       {"pad"}},
      {"horizontal_rail", "rail",
       "a long horizontal rail spans the full body width along the bottom, carrying actuators that push along its "
       "length",
       {"rail"}},
      {"dense_shell", "shell",
       "a nearly solid block of mixed material with few empty voxels, acting as a compact shell around the actuators",
       {"shell"}},
  };
  return kTable;
}

Body archetype_body(int family, int size, std::mt19937_64& rng) {
  const int n = size;
  Body mask(n, 0);
  auto fill_rows = [&](int from, int to) {
    for (int r = from; r < to; ++r) {
      for (int c = 0; c < n; ++c) mask.set(r, c, 1);
    }
  };
  auto leg = [&](int col, int width, int from) {
    for (int r = from; r < n; ++r) {
      for (int c = col; c < std::min(n, col + width); ++c) mask.set(r, c, 1);
    }
  };
  const int top = std::max(2, (n * 3 + 4) / 5);
  const int w = std::max(1, n / 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double p_act = 0.3, p_rigid = 0.35;
  switch (((family % 6) + 6) % 6) {
    case 0:  // legged walker
      fill_rows(0, top);
      leg(0, w, top);
      leg(n - w, w, top);
      break;
    case 1:  // framed actuator columns
      fill_rows(0, n);
      p_rigid = 0.55;
      break;
    case 2:  // crawler
      fill_rows(n - std::max(2, (n * 2 + 4) / 5), n);
      p_rigid = 0.25;
      break;
    case 3:  // block
      fill_rows(0, n);
      break;
    case 4:  // arch
      fill_rows(0, std::max(1, top - 1));
      leg(0, w + (n >= 10 ? 1 : 0), std::max(1, top - 1));
      leg(n - w - (n >= 10 ? 1 : 0), w + (n >= 10 ? 1 : 0), std::max(1, top - 1));
      p_act = 0.35;
      break;
    case 5:  // tripod
      fill_rows(0, top);
      leg(0, w, top);
      leg(n / 2, w, top);
      leg(n - w, w, top);
      break;
  }
  Body body(n, 0);
  const int lowest = n - 1;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      if (!mask.at(r, c)) continue;
      const double x = u(rng);
      int code = x < p_act ? 3 + (u(rng) < 0.5) : x < p_act + p_rigid ? 1 : 2;
      if (family % 6 == 1 && (r == 0 || c == 0 || c == n - 1) && !is_actuator(code)) code = 1;
      if (r == lowest && !is_actuator(code) && u(rng) < 0.5) code = 2;
      body.set(r, c, code);
    }
  }
  if (!check_validity(body).has_actuator) {
    for (int i = 0; i < n * n; ++i) {
      if (body.at(i / n, i % n)) {
        body.set(i / n, i % n, 3);
        break;
      }
    }
  }
  return body;
}

}  // namespace heuristic

// ---------------------------------------------------------------------------

namespace {

using namespace heuristic;

const std::string& field(const PromptRequest& req, const std::string& key) {
  static const std::string kEmpty;
  const auto it = req.metadata.find(key);
  return it == req.metadata.end() ? kEmpty : it->second;
}

int int_field(const PromptRequest& req, const std::string& key, int fallback) {
  try {
    return std::stoi(field(req, key));
  } catch (const std::exception&) {
    return fallback;
  }
}

std::vector<json> json_lines(const std::string& block) {
  std::vector<json> out;
  std::istringstream in(block);
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.is_object()) out.push_back(std::move(j));
  }
  return out;
}

struct LeafView {
  std::string leaf_id;
  bool positive = true;
  std::string claim;
  int support = 0;
  double avg_gain = 0.0;
};

struct SlotView {
  int slot_index = 0;
  std::optional<std::string> skill_id;
  std::string structure;
  std::string condition;
  std::vector<LeafView> leaves;
};

std::vector<SlotView> parse_slots(const std::string& block) {
  static const std::regex slot_re(R"(^slot_index=(\d+) skill_id=(\S+))");
  static const std::regex leaf_re(R"(leaf_id=(\S+) \[(positive|negative)\] claim=(\S+) support=(\d+) avg_gain=([-+0-9.eE]+))");
  std::vector<SlotView> out;
  std::istringstream in(block);
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_search(line, m, slot_re)) {
      SlotView s;
      s.slot_index = std::stoi(m[1]);
      if (m[2] != "null") s.skill_id = m[2];
      out.push_back(std::move(s));
    } else if (out.empty()) {
      continue;
    } else if (line.rfind("  L1 structure: ", 0) == 0) {
      out.back().structure = line.substr(16);
    } else if (line.rfind("  L1 condition: ", 0) == 0) {
      out.back().condition = line.substr(16);
    } else if (std::regex_search(line, m, leaf_re)) {
      out.back().leaves.push_back({m[1], m[2] == "positive", m[3], std::stoi(m[4]), std::stod(m[5])});
    }
  }
  return out;
}

std::vector<Body> history_bodies(const std::string& block) {
  static const std::regex re(R"(child_body=(\[\[.*\]\]))");
  std::vector<Body> out;
  std::istringstream in(block);
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_search(line, m, re)) {
      try {
        out.push_back(parse_body_text(m[1]));
      } catch (const Error&) {
      }
    }
  }
  return out;
}

Tactic sample_tactic(const std::map<Tactic, double>& weights, Rng& rng) {
  std::vector<double> w;
  for (auto t : kAllTactics) w.push_back(weights.at(t));
  std::discrete_distribution<int> d(w.begin(), w.end());
  return kAllTactics[d(rng)];
}

Tactic tactic_for_text(const std::vector<std::string>& words, Rng& rng) {
  int best = 0;
  std::vector<Tactic> ties;
  for (auto t : kAllTactics) {
    const int o = overlap(keywords(t), words);
    if (o > best) {
      best = o;
      ties = {t};
    } else if (o == best && o > 0) {
      ties.push_back(t);
    }
  }
  if (ties.empty()) return kAllTactics[std::uniform_int_distribution<int>(0, 5)(rng)];
  return ties[std::uniform_int_distribution<std::size_t>(0, ties.size() - 1)(rng)];
}

std::string cold_start(const PromptRequest& req, Rng& rng) {
  const int n = int_field(req, "grid_size", 5);
  const int count = int_field(req, "n_designs", 25);
  json designs = json::array();
  std::vector<Body> seen;
  for (int i = 0; i < count; ++i) {
    Body body;
    for (int attempt = 0; attempt < 50; ++attempt) {
      body = archetype_body(i + attempt, n, rng);
      if (std::find(seen.begin(), seen.end(), body) == seen.end()) break;
    }
    seen.push_back(body);
    designs.push_back({{"body", to_json(body)}, {"reasoning", "archetype family " + std::to_string(i % 6)}});
  }
  return json{{"designs", designs}}.dump();
}

std::pair<int, int> parse_range(const std::string& text) {
  const auto dash = text.find('-');
  try {
    if (dash != std::string::npos) return {std::stoi(text.substr(0, dash)), std::stoi(text.substr(dash + 1))};
  } catch (const std::exception&) {
  }
  return {1, 3};
}

std::string mutate(const PromptRequest& req, Rng& rng) {
  const Body parent = parse_body_text(field(req, "parent_body"));
  const auto [lo, hi] = parse_range(field(req, "mutation_range"));
  const auto slots = parse_slots(field(req, "skill_assignments_block"));
  std::vector<Body> seen = history_bodies(field(req, "history_block"));
  seen.push_back(parent);

  json designs = json::array();
  for (const auto& slot : slots) {
    std::optional<std::string> leaf_id;
    Tactic tactic = Tactic::Grow;
    std::vector<const LeafView*> positives;
    for (const auto& l : slot.leaves) {
      if (l.positive) positives.push_back(&l);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (!positives.empty() && u(rng) < 0.75) {
      std::vector<double> w;
      for (const auto* l : positives) w.push_back((l->support + 1) * std::max(l->avg_gain, 0.01));
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const auto* leaf = positives[pick(rng)];
      leaf_id = leaf->leaf_id;
      tactic = tactic_for_text(tokenize(leaf->claim), rng);
    } else {
      std::map<Tactic, double> weights;
      const auto l1 = tokenize(slot.structure + " " + slot.condition);
      for (auto t : kAllTactics) {
        weights[t] = 1.0 + 1.5 * overlap(keywords(t), l1);
        for (const auto& l : slot.leaves) {
          if (!l.positive && overlap(keywords(t), tokenize(l.claim)) > 0) weights[t] *= 0.3;
        }
      }
      tactic = sample_tactic(weights, rng);
    }

    Body child = parent;
    for (int attempt = 0; attempt < 20; ++attempt) {
      child = parent;
      const int edits = std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng);
      for (int e = 0; e < edits; ++e) {
        if (!apply_tactic(child, tactic, rng)) {
          apply_tactic(child, kAllTactics[std::uniform_int_distribution<int>(0, 5)(rng)], rng);
        }
      }
      if (std::find(seen.begin(), seen.end(), child) == seen.end()) break;
    }
    seen.push_back(child);
    designs.push_back({{"slot_index", slot.slot_index},
                       {"body", to_json(child)},
                       {"reasoning", to_string(tactic) + " edits toward " +
                                         (slot.structure.empty() ? std::string("an unexplored variant") : slot.structure)},
                       {"based_on_skill", slot.skill_id ? json(*slot.skill_id) : json(nullptr)},
                       {"intended_leaf_id", leaf_id ? json(*leaf_id) : json(nullptr)}});
  }
  return json{{"designs", designs}}.dump();
}

struct SkillView {
  std::string id;
  std::string structure;
  std::vector<std::string> l1_words;
  std::vector<std::string> words;  // L1 plus top positive claims
};

std::vector<SkillView> parse_skills(const std::string& block) {
  std::vector<SkillView> out;
  for (const auto& j : json_lines(block)) {
    SkillView s;
    s.id = j.value("skill_id", "");
    const auto l1 = j.value("l1", json::object());
    s.structure = l1.value("structure", "");
    std::string text = s.structure + " " + l1.value("condition", "");
    s.l1_words = tokenize(text);
    for (const auto& l : j.value("top_positive_leaves", json::array())) text += " " + l.value("claim", "");
    s.words = tokenize(text);
    out.push_back(std::move(s));
  }
  std::sort(out.begin(), out.end(), [](const SkillView& a, const SkillView& b) { return a.id < b.id; });
  return out;
}

std::string attribute(const PromptRequest& req) {
  const auto skills = parse_skills(field(req, "skills_block"));
  json assignments = json::array();
  for (const auto& d : json_lines(field(req, "designs_block"))) {
    const Body body = body_from_json(d.at("body"));
    const auto desc = is_valid(body) ? body_descriptors(body) : std::vector<std::string>{};
    // On fresh designs, a body showing a structure the library lacks stays
    // unexplained so Add can see it. Pool retries take the best existing skill.
    const Archetype* uncovered = nullptr;
    const bool pool_pass = field(req, "attribution_pass") == "pool";
    for (const auto& a : archetypes()) {
      if (pool_pass) break;
      if (uncovered || overlap(a.triggers, desc) != static_cast<int>(a.triggers.size())) continue;
      const bool covered = std::any_of(skills.begin(), skills.end(), [&](const SkillView& s) {
        return s.id == a.skill_id || s.structure == a.structure;
      });
      if (!covered) uncovered = &a;
    }
    if (uncovered) {
      assignments.push_back({{"local_index", d.at("local_index")},
                             {"skill_id", nullptr},
                             {"reason", "shows a " + uncovered->structure + " no skill covers"}});
      continue;
    }
    const SkillView* best = nullptr;
    int best_score = 1;
    for (const auto& s : skills) {
      // Archetype skills claim bodies showing their trigger cues; others need two L1 cues.
      const auto arch = std::find_if(archetypes().begin(), archetypes().end(), [&](const Archetype& a) {
        return a.skill_id == s.id || a.structure == s.structure;
      });
      int score = overlap(desc, s.l1_words);
      if (arch != archetypes().end()) {
        score = overlap(arch->triggers, desc) == static_cast<int>(arch->triggers.size()) ? score + 2 : 0;
      }
      if (score > best_score) {
        best = &s;
        best_score = score;
      }
    }
    assignments.push_back({{"local_index", d.at("local_index")},
                           {"skill_id", best ? json(best->id) : json(nullptr)},
                           {"reason", best ? "shares " + std::to_string(best_score) + " structural cues" : "no match"}});
  }
  return json{{"assignments", assignments}}.dump();
}

std::string add(const PromptRequest& req) {
  const auto existing = parse_skills(field(req, "existing_skills_block"));
  const auto high = json_lines(field(req, "high_designs"));
  const std::string task = field(req, "task_name");
  // A sparse library lowers the bar to a single supporting design.
  const std::size_t needed = field(req, "low_skill_hint").empty() ? 2 : 1;

  const Archetype* chosen = nullptr;
  std::vector<std::int64_t> inspired;
  std::vector<int> labels;
  for (const auto& a : archetypes()) {
    const bool taken = std::any_of(existing.begin(), existing.end(), [&](const SkillView& s) {
      return s.id == a.skill_id || s.structure == a.structure;
    });
    if (taken) continue;
    std::vector<std::int64_t> ids;
    std::vector<int> ls;
    for (const auto& h : high) {
      const Body body = body_from_json(h.at("body"));
      if (!is_valid(body)) continue;
      const auto desc = body_descriptors(body);
      if (overlap(a.triggers, desc) == static_cast<int>(a.triggers.size())) {
        ids.push_back(h.value("obs_id", std::int64_t{-1}));
        ls.push_back(h.value("label", 0));
      }
    }
    if (ids.size() >= needed && ids.size() > inspired.size()) {
      chosen = &a;
      inspired = std::move(ids);
      labels = std::move(ls);
    }
  }

  json decision;
  if (!chosen) {
    decision = {{"action", "no_add"},
                {"inspired_obs_ids", json::array()},
                {"skill", nullptr},
                {"reasoning",
                 {{"supporting_high_labels", json::array()},
                  {"contrast_signal", "no shared structure among high designs"},
                  {"nearest_existing_skill", nullptr},
                  {"duplicate_risk", "none"},
                  {"why_add_or_no_add", "no archetype is shared by enough high designs"}}}};
  } else {
    decision = {{"action", "add"},
                {"inspired_obs_ids", inspired},
                {"skill",
                 {{"skill_id", chosen->skill_id},
                  {"task_family", {task}},
                  {"condition", chosen->condition},
                  {"l1", {{"structure", chosen->structure}, {"condition", chosen->condition}}},
                  {"l2", {{"positive", json::array()}, {"negative", json::array()}, {"next_leaf_id_counter", 0}}},
                  {"l3", {{"observations", json::array()}, {"next_obs_id_counter", 0}}}}},
                {"reasoning",
                 {{"supporting_high_labels", labels},
                  {"contrast_signal", "high designs share the " + chosen->structure + " arrangement"},
                  {"nearest_existing_skill", nullptr},
                  {"duplicate_risk", "none"},
                  {"why_add_or_no_add", std::to_string(inspired.size()) + " high designs share the structure"}}}};
  }
  return json{{"decision", decision}}.dump();
}

struct ClaimText {
  const char* claim;
  const char* description;
};

ClaimText positive_claim(Tactic t) {
  switch (t) {
    case Tactic::Brace: return {"braced_actuators", "rigid voxels placed beside actuators give each stroke a stiff surface to push against"};
    case Tactic::Actuate: return {"added_actuators", "an extra actuator inside existing material adds driving force without breaking the load path"};
    case Tactic::Pad: return {"soft_foot_pad", "soft voxels along the ground-contact layer improve traction and cushion each step"};
    case Tactic::Legs: return {"open_leg_gap", "opening a gap in the ground-contact layer splits the base into legs that lift and swing"};
    case Tactic::Grow: return {"filled_body_mass", "filling an empty notch next to the body adds material that widens the support base"};
    case Tactic::Trim: return {"trimmed_excess", "removing a passive voxel at the body edge sheds dead weight without cutting the load path"};
  }
  return {"", ""};
}

ClaimText negative_claim(Tactic t) {
  switch (t) {
    case Tactic::Brace: return {"brace_overconstrains", "rigid voxels that box in an actuator on every side leave it no room to deform"};
    case Tactic::Actuate: return {"actuator_crowding", "packing actuators together removes the passive material they need to push against"};
    case Tactic::Pad: return {"pad_loses_grip", "swapping structural voxels in the contact layer for soft ones lets the base sag"};
    case Tactic::Legs: return {"leg_gap_collapse", "cutting the contact layer leaves too little base to stand on"};
    case Tactic::Grow: return {"grow_adds_dead_mass", "extra passive voxels far from the actuators add weight the body must drag"};
    case Tactic::Trim: return {"trim_loses_structure", "trimming edge voxels removes material the actuators were bracing against"};
  }
  return {"", ""};
}

constexpr double kNegativeGainThreshold = -0.3;

std::string diagnose(const PromptRequest& req) {
  auto leaves = json::parse(field(req, "leaves_json"), nullptr, false);
  auto pending = json::parse(field(req, "unassigned_json"), nullptr, false);
  json assignments = json::array();
  if (!pending.is_array()) pending = json::array();
  if (!leaves.is_array()) leaves = json::array();

  std::set<std::string> created;
  for (const auto& o : pending) {
    const auto obs_id = o.value("obs_id", std::int64_t{-1});
    const double gain = o.value("gain", 0.0);
    const Body child = body_from_json(o.at("child_body"));
    Body parent = child;
    for (const auto& e : o.at("voxel_diff")) parent.set(e[0].get<int>(), e[1].get<int>(), e[2].get<int>());

    if (gain > kNegativeGainThreshold && gain <= 0.0) {
      assignments.push_back({{"obs_id", obs_id}, {"decision", "no_leaf"}});
      continue;
    }
    const bool positive = gain > 0.0;
    const auto tactic = classify_edit(parent, child);
    const auto text = positive ? positive_claim(tactic) : negative_claim(tactic);
    const std::string polarity = positive ? "positive" : "negative";

    std::optional<std::string> match;
    for (const auto& l : leaves) {
      if (l.value("claim", "") == text.claim && l.value("polarity", "") == polarity) {
        match = l.value("leaf_id", "");
        break;
      }
    }
    if (match) {
      assignments.push_back({{"obs_id", obs_id},
                             {"decision", "match_existing"},
                             {"leaf_id", *match},
                             {"description_update", {{"mode", nullptr}, {"text", nullptr}}}});
    } else if (created.insert(text.claim).second) {
      assignments.push_back({{"obs_id", obs_id},
                             {"decision", "new_leaf"},
                             {"polarity", polarity},
                             {"claim", text.claim},
                             {"description", text.description}});
    } else {
      assignments.push_back({{"obs_id", obs_id}, {"decision", "no_leaf"}});
    }
  }
  return json{{"leaf_assignments", assignments}, {"standalone_new_leaves", json::array()}}.dump();
}

std::string merge(const PromptRequest& req) {
  struct Entry {
    std::string id, structure;
    std::set<std::string> words;
  };
  std::vector<Entry> skills;
  for (const auto& j : json_lines(field(req, "skills_full_content"))) {
    const auto l1 = j.value("l1", json::object());
    const auto words = tokenize(l1.value("condition", ""));
    skills.push_back({j.value("skill_id", ""), l1.value("structure", ""), {words.begin(), words.end()}});
  }
  std::sort(skills.begin(), skills.end(), [](const Entry& a, const Entry& b) { return a.id < b.id; });
  std::vector<std::size_t> parent(skills.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < skills.size(); ++i) {
    for (std::size_t j = i + 1; j < skills.size(); ++j) {
      if (skills[i].structure != skills[j].structure) continue;
      std::size_t inter = 0;
      for (const auto& w : skills[i].words) inter += skills[j].words.count(w);
      const std::size_t uni = skills[i].words.size() + skills[j].words.size() - inter;
      if (uni > 0 && inter * 2 >= uni) parent[find(j)] = find(i);
    }
  }
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < skills.size(); ++i) groups[find(i)].push_back(skills[i].id);
  json clusters = json::array();
  for (const auto& [root, ids] : groups) {
    if (ids.size() < 2) continue;
    clusters.push_back({{"group_label", ids.front()},
                        {"skill_ids", ids},
                        {"reason", "same " + skills[root].structure + " structure with overlapping conditions"}});
  }
  return json{{"clusters", clusters}}.dump();
}

}  // namespace

std::string HeuristicBackend::complete(const PromptRequest& request) {
  std::uint64_t h = splitmix64(seed_ ^ fnv1a(to_string(request.op_kind)));
  h = splitmix64(h ^ static_cast<std::uint64_t>(request.generation));
  h = splitmix64(h ^ static_cast<std::uint64_t>(request.ordinal));
  h = splitmix64(h ^ fnv1a(request.rendered_text));
  Rng rng(h);
  try {
    switch (template_for_schema(request.expected_schema)) {
      case PromptTemplate::ProposeColdStart: return cold_start(request, rng);
      case PromptTemplate::ProposeMutation: return mutate(request, rng);
      case PromptTemplate::Attribute: return attribute(request);
      case PromptTemplate::Add: return add(request);
      case PromptTemplate::Diagnose: return diagnose(request);
      case PromptTemplate::Merge: return merge(request);
    }
  } catch (const Error& e) {
    return std::string("heuristic backend could not read the prompt: ") + e.what();
  } catch (const std::exception& e) {
    return std::string("heuristic backend could not read the prompt: ") + e.what();
  }
  return "{}";
}

}  // namespace morphoskill
