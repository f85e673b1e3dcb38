// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "../helpers/oracles.hpp"
#include "../helpers/run_helpers.hpp"
#include "morphoskill/errors.hpp"
#include "morphoskill/metrics.hpp"
#include "morphoskill/orchestrator.hpp"
#include "morphoskill/skill_library.hpp"
#include "morphoskill/voxel_body.hpp"

using namespace morphoskill;
using nlohmann::json;
using testutil::TempDir;

namespace {

// Collects failed expectations for one criterion.
struct Probe {
  std::vector<std::string> failures;
  std::vector<std::string> facts;
  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 8) failures.push_back(what);
    if (!ok && failures.size() == 8) failures.push_back("...");
  }
  void note(const std::string& s) { facts.push_back(s); }
};

struct Criterion {
  std::string name;
  double limit_s;
  std::function<void(Probe&)> body;
};

oracle::Grid grid_of(const Body& b) {
  oracle::Grid g(b.size(), std::vector<int>(b.size()));
  for (int r = 0; r < b.size(); ++r)
    for (int c = 0; c < b.size(); ++c) g[r][c] = b.at(r, c);
  return g;
}

FitnessCurve curve(std::vector<CurvePoint> pts, std::int64_t budget) { return {std::move(pts), budget}; }

FitnessCurve dense(const std::vector<double>& v) {
  FitnessCurve c;
  c.budget = static_cast<std::int64_t>(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) c.points.push_back({static_cast<std::int64_t>(i + 1), v[i]});
  return c;
}

RunConfig surrogate(int budget, std::uint64_t seed) { return testutil::surrogate_config(budget, seed); }

// Final library of the scripted maintenance sequence, reused by the transfer check.
SkillLibrary scripted_library;

// ---------------------------------------------------------------------------

void weight_suite(Probe& p) {
  std::mt19937_64 rng(20240611);
  std::uniform_int_distribution<int> len(0, 50);
  std::uniform_real_distribution<double> gain(-5.0, 5.0);
  for (int i = 0; i < 1000; ++i) {
    Skill s;
    s.skill_id = "s" + std::to_string(i);
    std::vector<double> gains(len(rng));
    for (auto& g : gains) {
      g = gain(rng);
      Observation o;
      o.gain = g;
      s.l3_observations.push_back(o);
    }
    const double w = skill_weight(s, 2.0);
    p.expect(w == oracle::weight(gains, 2.0), fmt::format("skill {} weight {} != oracle {}", i, w, oracle::weight(gains, 2.0)));
    p.expect(w > 0.0 && w <= 1.0, fmt::format("skill {} weight {} outside (0,1]", i, w));
  }
  p.expect(skill_weight(Skill{}, 2.0) == 0.5, "empty skill weight is not 0.5");
  p.note("1000 skills");
}

void rule_mean_suite(Probe& p) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> len(1, 200);
  std::uniform_real_distribution<double> gain(-5.0, 5.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> gains(len(rng));
    RuleLeaf leaf;
    for (auto& g : gains) {
      g = gain(rng);
      leaf = update_rule_mean(std::move(leaf), g);
    }
    const double err = std::abs(leaf.mean_gain - oracle::mean(gains));
    worst = std::max(worst, err);
    p.expect(err <= 1e-9, fmt::format("sequence {}: error {}", i, err));
    p.expect(leaf.support_count == static_cast<int>(gains.size()), fmt::format("sequence {}: support count", i));
  }
  p.note(fmt::format("max error {:.3g}", worst));
}

void validity_suite(Probe& p) {
  std::mt19937_64 rng(5);
  int agree = 0;
  int total = 0;
  int valid = 0;
  for (auto [n, count] : {std::pair{5, 10000}, std::pair{10, 2000}}) {
    for (int i = 0; i < count; ++i) {
      const auto g = oracle::random_grid(n, rng);
      const bool want = oracle::valid(g);
      const bool got = check_validity(Body::from_rows(g)).is_valid;
      ++total;
      valid += want;
      agree += got == want;
      p.expect(got == want, fmt::format("{}x{} grid {} disagrees", n, n, i));
    }
  }
  p.note(fmt::format("{}/{} agree, {} valid", agree, total, valid));
}

void upsampling_suite(Probe& p) {
  int checked = 0;
  for (std::uint64_t seed = 0; checked < 1000; ++seed) {
    const Body src = random_valid_body(5, seed);
    const Body big = upsample_tiling(src, 2);
    p.expect(big.size() == 10, "tiled size");
    p.expect(is_valid(big), fmt::format("seed {}: tiled body invalid", seed));
    const auto g = grid_of(src);
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c)
        p.expect(big.at(r, c) == oracle::tiled_cell(g, 2, r, c), fmt::format("seed {}: cell ({}, {})", seed, r, c));
    ++checked;
  }
  p.note("1000 bodies");
}

void metrics_suite(Probe& p) {
  const auto ga = curve({{1, 1.0}, {80, 5.0}}, 100);
  const auto fast = curve({{1, 1.0}, {40, 5.0}, {90, 6.0}}, 100);
  const auto s2 = speedup(fast, ga);
  p.expect(s2.value && *s2.value == 2.0, "S = 2.0");
  const auto s1 = speedup(ga, ga);
  p.expect(s1.value && *s1.value == 1.0, "S = 1.0");
  const auto sn = speedup(curve({{1, 1.0}, {50, 4.99}}, 100), ga);
  p.expect(!sn.value && !sn.reason.empty(), "S = null");

  const auto flat = dense(std::vector<double>(100, 1.0));
  p.expect(lead_fraction(flat, flat) == 0.0, "L = 0");
  std::vector<double> ahead(100, 1.0);
  for (int e = 40; e < 100; ++e) ahead[e] = 2.0;
  p.expect(lead_fraction(dense(ahead), flat) == 0.6, "L = 0.6");
  std::vector<double> last(100, 1.0);
  last[99] = 1.5;
  p.expect(lead_fraction(dense(last), flat) == 1.0 / 100, "L = 1/B");

  const auto row = compare("Pusher", curve({{1, 3.0}, {30, 8.45}, {70, 9.87}}, 100), curve({{1, 2.0}, {60, 8.45}}, 100));
  p.expect(format_signed(row.delta) == "+1.42", "delta " + format_signed(row.delta));
  p.expect(row.delta == 9.87 - 8.45, "delta arithmetic");
  p.note(fmt::format("delta {}", format_signed(row.delta)));
}

// Scripted 50-generation maintenance sequence. Per generation t:
//   add skill k<t> when t % 5 == 0 (a second add in the same generation must fail);
//   four fresh observations: A(+1.0), B(-0.5), C(+0.25) to the newest skill, D(-2.0) to the pool;
//   odd t: the oldest pool entry moves to the newest skill;
//   diagnose every skill: A/B match or open a leaf of their polarity, C no_leaf, moved D either
//   matches the first negative leaf (t % 4 == 3) or proposes a leaf naming a row (t % 4 == 1);
//   t % 10 == 4: standalone positive leaf on the newest skill citing the last two A observations;
//   t % 10 == 7: merge the first two skills.
// Hand-computed totals: 10 adds, 5 merges -> 5 skills; 175 observations in skills, 25 pooled;
// leaves +15 (10 from A, 5 standalone) / -10 (from B); assigned 50 A + 50 B + 12 D = 112;
// frozen 48 C + 12 D = 60; pending 3 (C48, C49, D49); support total 112 + 2 * 5 = 122;
// coordinate notes 12 * 3 + 1 = 37.
void conservation_suite(Probe& p) {
  SkillLibrary lib;
  lib.task = "Walker";
  lib.scale = 5;
  std::map<std::int64_t, bool> leaks;  // moved D observations by eval index
  int adds = 0;
  int rejected_adds = 0;
  int leakage_notes = 0;

  auto find_obs = [](Skill& s, std::int64_t eval_index) -> Observation* {
    for (auto& o : s.l3_observations)
      if (o.eval_index == eval_index) return &o;
    return nullptr;
  };

  for (int t = 0; t < 50; ++t) {
    if (t % 5 == 0) {
      Skill s;
      s.skill_id = "k" + std::to_string(t);
      s.task_family = {"Walker"};
      s.l1_structure = "frame";
      s.l1_condition = "scripted";
      AddDecision d{true, {}, s, {}};
      lib = apply_add(std::move(lib), d, t);
      ++adds;
      const Skill* born = lib.find(s.skill_id);
      p.expect(born && born->leaf_count() == 0 && born->l3_observations.empty(), "added skill born non-empty");
      Skill again = s;
      again.skill_id = "k" + std::to_string(t) + "b";
      try {
        apply_add(lib, AddDecision{true, {}, again, {}}, t);
        p.expect(false, fmt::format("second add accepted in generation {}", t));
      } catch (const Error&) {
        ++rejected_adds;
      }
      if (t == 0) {
        Skill stuffed = s;
        stuffed.skill_id = "stuffed";
        RuleLeaf l;
        l.leaf_id = "pos_0";
        stuffed.l2_positive.push_back(l);
        bool threw = false;
        try {
          apply_add(lib, AddDecision{true, {}, stuffed, {}}, 1000);
        } catch (const Error&) {
          threw = true;
        }
        p.expect(threw, "add with non-empty L2 accepted");
      }
    }
    const std::string newest = lib.skills.back().skill_id;

    const double gains[] = {1.0, -0.5, 0.25, -2.0};
    std::vector<Observation> fresh;
    for (int j = 0; j < 4; ++j) {
      Observation o;
      o.eval_index = 4 * t + j + 1;
      o.generation = t;
      o.gain = gains[j];
      o.fitness = 5.0 + gains[j];
      o.parent_fitness = 5.0;
      fresh.push_back(o);
    }
    const std::vector<AttributionDecision> route{{0, newest, ""}, {1, newest, ""}, {2, newest, ""}, {3, std::nullopt, ""}};
    lib = apply_attribution(std::move(lib), fresh, route);
    if (t % 2 == 1) {
      leaks[lib.pool.entries.front().eval_index] = t % 4 == 1;
      std::vector<AttributionDecision> re{{0, newest, ""}};
      for (std::size_t i = 1; i < lib.pool.size(); ++i) re.push_back({i, std::nullopt, ""});
      lib = apply_reattribution(std::move(lib), re);
    }

    for (auto& skill : lib.skills) {
      std::vector<LeafAssignment> decisions;
      std::vector<std::int64_t> deferred;
      const bool has_pos = !skill.l2_positive.empty();
      const bool has_neg = !skill.l2_negative.empty();
      bool pos_opened = false;
      bool neg_opened = false;
      for (const auto& o : skill.l3_observations) {
        if (!is_pending(o)) continue;
        LeafAssignment a;
        a.obs_id = o.obs_id;
        if (o.gain == 1.0 || o.gain == -0.5) {
          const bool pos = o.gain > 0;
          const bool exists = pos ? has_pos : has_neg;
          bool& opened = pos ? pos_opened : neg_opened;
          if (exists) {
            a.kind = LeafAssignment::Kind::MatchExisting;
            a.leaf_id = (pos ? skill.l2_positive : skill.l2_negative).front().leaf_id;
          } else if (!opened) {
            a.kind = LeafAssignment::Kind::NewLeaf;
            a.polarity = pos ? Polarity::Positive : Polarity::Negative;
            a.claim = pos ? "braced actuator core" : "floating soft tail";
            a.description = "scripted rule";
            opened = true;
          } else {
            a.kind = LeafAssignment::Kind::NoLeaf;
          }
        } else if (o.gain == -2.0) {
          if (leaks.at(o.eval_index)) {
            a.kind = LeafAssignment::Kind::NewLeaf;
            a.polarity = Polarity::Negative;
            a.claim = "hinge in row 3";
            a.description = "scripted rule";
          } else if (has_neg) {
            a.kind = LeafAssignment::Kind::MatchExisting;
            a.leaf_id = skill.l2_negative.front().leaf_id;
          } else {
            // Leaf opens in this pass; match it in a second pass.
            deferred.push_back(o.obs_id);
            continue;
          }
        } else {
          a.kind = LeafAssignment::Kind::NoLeaf;
        }
        decisions.push_back(a);
      }
      std::vector<StandaloneLeaf> standalone;
      if (t % 10 == 4 && skill.skill_id == newest) {
        StandaloneLeaf l;
        l.polarity = Polarity::Positive;
        l.claim = "paired legs";
        l.description = "scripted standalone rule";
        for (int g : {t - 1, t}) {
          const Observation* o = find_obs(skill, 4 * g + 1);
          p.expect(o != nullptr, fmt::format("generation {}: A observation missing for standalone", g));
          if (o) l.supporting_obs_ids.push_back(o->obs_id);
        }
        standalone.push_back(l);
      }
      std::vector<std::string> notes;
      skill = apply_diagnose(std::move(skill), decisions, standalone, &notes);
      if (!deferred.empty()) {
        std::vector<LeafAssignment> second;
        for (auto id : deferred) {
          LeafAssignment a;
          a.obs_id = id;
          a.kind = LeafAssignment::Kind::MatchExisting;
          a.leaf_id = skill.l2_negative.front().leaf_id;
          second.push_back(a);
        }
        skill = apply_diagnose(std::move(skill), second, {}, &notes);
      }
      for (const auto& n : notes) leakage_notes += n.rfind("CoordinateLeakage", 0) == 0;
    }

    if (t % 10 == 7) {
      const std::size_t obs_before = lib.observation_count();
      const std::size_t leaves_before = lib.leaf_count();
      const std::vector<MergeCluster> cluster{
          {"m" + std::to_string(t), {lib.skills[0].skill_id, lib.skills[1].skill_id}, "scripted"}};
      lib = apply_merge(std::move(lib), cluster);
      p.expect(lib.observation_count() == obs_before, fmt::format("merge at {} lost observations", t));
      p.expect(lib.leaf_count() == leaves_before, fmt::format("merge at {} lost leaves", t));
    }

    p.expect(lib.observation_count() + lib.pool.size() == static_cast<std::size_t>(4 * (t + 1)),
             fmt::format("generation {}: observation total", t));
    for (const auto& s : lib.skills)
      for (const auto* leaves : {&s.l2_positive, &s.l2_negative})
        for (const auto& l : *leaves)
          p.expect(l.support_count == static_cast<int>(l.supporting_obs_ids.size()),
                   fmt::format("generation {}: {}/{} support_count", t, s.skill_id, l.leaf_id));
    const auto issues = audit(lib);
    p.expect(issues.empty(), fmt::format("generation {}: audit: {}", t, issues.empty() ? "" : issues.front()));
  }

  std::size_t pos = 0, neg = 0, assigned = 0, frozen = 0, pending = 0;
  long support = 0;
  for (const auto& s : lib.skills) {
    pos += s.l2_positive.size();
    neg += s.l2_negative.size();
    for (const auto* leaves : {&s.l2_positive, &s.l2_negative})
      for (const auto& l : *leaves) support += l.support_count;
    for (const auto& o : s.l3_observations) {
      if (o.assigned_leaf_id) {
        ++assigned;
      } else if (o.no_leaf_attempts >= kMaxNoLeafAttempts) {
        ++frozen;
      } else {
        ++pending;
      }
    }
  }
  auto ledger = [&](const char* what, long got, long want) {
    p.expect(got == want, fmt::format("{}: {} != {}", what, got, want));
  };
  ledger("adds", adds, 10);
  ledger("rejected second adds", rejected_adds, 10);
  ledger("skills", static_cast<long>(lib.skills.size()), 5);
  ledger("observations in skills", static_cast<long>(lib.observation_count()), 175);
  ledger("pool", static_cast<long>(lib.pool.size()), 25);
  ledger("positive leaves", static_cast<long>(pos), 15);
  ledger("negative leaves", static_cast<long>(neg), 10);
  ledger("assigned", static_cast<long>(assigned), 112);
  ledger("frozen", static_cast<long>(frozen), 60);
  ledger("pending", static_cast<long>(pending), 3);
  ledger("support total", support, 122);
  ledger("coordinate notes", leakage_notes, 37);
  scripted_library = lib;
  p.note(fmt::format("skills {} obs {} pool {} leaves +{}/-{}", lib.skills.size(), lib.observation_count(),
                     lib.pool.size(), pos, neg));
}

void check_import(Probe& p, const SkillLibrary& source, const std::string& label) {
  TempDir dir("acc-export");
  const auto path = (dir / "exported.json").string();
  save_library(import_for_transfer(source), path);
  const auto lib = load_library(path);
  p.expect(lib.observation_count() == 0 && lib.pool.size() == 0, label + ": observations survived import");
  p.expect(lib.skills.size() == source.skills.size(), label + ": skill count changed");
  for (std::size_t i = 0; i < lib.skills.size() && i < source.skills.size(); ++i) {
    const auto& a = source.skills[i];
    const auto& b = lib.skills[i];
    p.expect(skill_weight(b, 2.0) == 0.5, label + ": imported weight of " + b.skill_id);
    p.expect(a.skill_id == b.skill_id && a.l1_structure == b.l1_structure && a.l1_condition == b.l1_condition,
             label + ": L1 changed for " + a.skill_id);
    for (auto [la, lb] : {std::pair{&a.l2_positive, &b.l2_positive}, std::pair{&a.l2_negative, &b.l2_negative}}) {
      p.expect(la->size() == lb->size(), label + ": leaf count changed for " + a.skill_id);
      for (std::size_t k = 0; k < la->size() && k < lb->size(); ++k) {
        p.expect((*la)[k].claim == (*lb)[k].claim && (*la)[k].description == (*lb)[k].description,
                 label + ": leaf text changed in " + a.skill_id);
        p.expect((*lb)[k].support_count == 0 && (*lb)[k].supporting_obs_ids.empty(),
                 label + ": leaf evidence survived import in " + a.skill_id);
      }
    }
  }
}

void transfer_suite(Probe& p) {
  TempDir src("acc-src");
  run_to_completion(surrogate(150, 31), src.path());
  const auto source_lib = load_library(RunPaths{src.path()}.library().string());
  p.expect(!source_lib.skills.empty() && source_lib.leaf_count() > 0, "source run built no rules");
  check_import(p, source_lib, "run library");
  if (!scripted_library.skills.empty()) check_import(p, scripted_library, "scripted library");

  std::set<std::string> source_ids;
  for (const auto& s : source_lib.skills) source_ids.insert(s.skill_id);

  std::size_t checked = 0;
  for (auto mode : {RunMode::TransferSkillOnly, RunMode::TransferWithRef}) {
    TempDir dir("acc-transfer");
    auto cfg = surrogate(200, 32);
    cfg.mode = mode;
    cfg.source_run = src.path().string();
    p.expect(cfg.prior_only_k == 5, "K is not 5");
    run_to_completion(cfg, dir.path());
    const auto log = read_run_log(RunPaths{dir.path()}.log());
    p.expect(log.size() > 5, "transfer run shorter than the prior-only horizon");
    for (std::size_t t = 0; t < log.size() && t < static_cast<std::size_t>(cfg.prior_only_k); ++t) {
      // Skills available when generation t proposed are those listed after generation t-1.
      std::set<std::string> imported = source_ids;
      if (t > 0) {
        imported.clear();
        for (const auto& id : log[t - 1]["library_stats"]["imported_ids"]) imported.insert(id.get<std::string>());
      }
      for (const auto& s : log[t]["slots"]) {
        if (s["path"] != "A" || s["skill_id"].is_null()) continue;
        ++checked;
        p.expect(imported.count(s["skill_id"].get<std::string>()) == 1,
                 fmt::format("{} generation {}: slot used non-imported skill {}", to_string(mode), t,
                             s["skill_id"].get<std::string>()));
      }
    }
  }
  p.expect(checked > 0, "no Path A slots checked");
  p.note(fmt::format("{} Path A slots in generations 0-4", checked));
}

void determinism_suite(Probe& p) {
  TempDir a("acc-det-a");
  TempDir b("acc-det-b");
  const auto cfg = surrogate(100, 2718);
  run_to_completion(cfg, a.path());
  run_to_completion(cfg, b.path());
  const auto pa = comparable_log_payload(RunPaths{a.path()}.log());
  const auto pb = comparable_log_payload(RunPaths{b.path()}.log());
  p.expect(!pa.empty(), "empty log");
  p.expect(pa == pb, "log payloads differ");
  p.expect(testutil::slurp(RunPaths{a.path()}.library()) == testutil::slurp(RunPaths{b.path()}.library()),
           "libraries differ");
  p.note(fmt::format("{} bytes", pa.size()));
}

void efficacy_suite(Probe& p) {
  int not_worse = 0;
  int leading = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    TempDir ga_dir("acc-ga");
    TempDir ar_dir("acc-ar");
    auto ga_cfg = surrogate(100, seed);
    ga_cfg.mode = RunMode::GaOnly;
    const auto ga = run_to_completion(ga_cfg, ga_dir.path());
    const auto ar = run_to_completion(surrogate(100, seed), ar_dir.path());
    const auto row = compare("Walker", run_curve(ar.state, 100), run_curve(ga.state, 100));
    not_worse += row.endpoint_agent >= row.endpoint_ga;
    leading += row.lead_fraction > 0.5;
    detail += fmt::format(" {}:{}/{:.2f}", seed, format_signed(row.delta), row.lead_fraction);
  }
  p.expect(not_worse >= 7, fmt::format("endpoint >= ga_only in {}/10 seeds", not_worse));
  p.expect(leading >= 6, fmt::format("lead_fraction > 0.5 in {}/10 seeds", leading));
  p.note(fmt::format("not worse {}/10, leading {}/10;{}", not_worse, leading, detail));
}

void ablation_suite(Probe& p) {
  {
    TempDir dir("acc-nd");
    auto cfg = surrogate(125, 6);
    cfg.ablations.no_diagnose = true;
    run_to_completion(cfg, dir.path());
    const auto lib = load_library(RunPaths{dir.path()}.library().string());
    p.expect(!lib.skills.empty(), "no_diagnose: library empty");
    p.expect(lib.leaf_count() == 0, "no_diagnose: L2 not empty");
    p.note(fmt::format("no_diagnose {} skills / 0 leaves", lib.skills.size()));
  }
  {
    TempDir dir("acc-nm");
    auto cfg = surrogate(250, 6);
    cfg.ablations.no_merge = true;
    run_to_completion(cfg, dir.path());
    std::size_t last = 0;
    for (const auto& r : read_run_log(RunPaths{dir.path()}.log())) {
      const auto n = r["library_stats"]["skills"].get<std::size_t>();
      p.expect(n >= last, "no_merge: skill count shrank");
      last = n;
    }
    p.note(fmt::format("no_merge ends with {} skills", last));
  }
  {
    TempDir dir("acc-pl");
    auto cfg = surrogate(125, 6);
    cfg.ablations.pure_llm = true;
    cfg.path_a_slots = cfg.generation_size;
    cfg.path_b_slots = 0;
    run_to_completion(cfg, dir.path());
    const auto log = read_run_log(RunPaths{dir.path()}.log());
    p.expect(testutil::count_path(log, "B") == 0, "pure_llm: Path B rows present");
    p.expect(testutil::count_path(log, "A") == 100, "pure_llm: expected 100 Path A rows");
    p.note(fmt::format("pure_llm {} B rows", testutil::count_path(log, "B")));
  }
  {
    TempDir dir("acc-nl");
    auto cfg = surrogate(125, 6);
    cfg.ablations.no_l2_l3 = true;
    run_to_completion(cfg, dir.path());
    const auto prompts = testutil::prompts_with_schema(RunPaths{dir.path()}.prompts(), "propose.mutation.v1");
    p.expect(!prompts.empty(), "no_l2_l3: no mutation prompts");
    for (const auto& pr : prompts) {
      p.expect(pr.find("L2 rules:") == std::string::npos, "no_l2_l3: L2 block present");
      p.expect(pr.find("L3 examples:") == std::string::npos, "no_l2_l3: L3 block present");
      p.expect(pr.find("child_fitness=") == std::string::npos, "no_l2_l3: history present");
    }
    p.note(fmt::format("no_l2_l3 {} prompts clean", prompts.size()));
  }
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"skill weight vs direct formula", 1, weight_suite},
      {"rule mean vs arithmetic mean", 1, rule_mean_suite},
      {"validity vs flood-fill oracle", 5, validity_suite},
      {"2x2 tiling control", 2, upsampling_suite},
      {"metrics fixtures", 1, metrics_suite},
      {"library conservation", 5, conservation_suite},
      {"transfer contract", 10, transfer_suite},
      {"determinism", 30, determinism_suite},
      {"efficacy vs ga_only", 300, efficacy_suite},
      {"ablation wiring", 120, ablation_suite},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Probe p;
    const auto start = std::chrono::steady_clock::now();
    try {
      c.body(p);
    } catch (const std::exception& e) {
      p.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.limit_s) p.failures.push_back(fmt::format("took {:.2f}s, limit {}s", secs, c.limit_s));
    const bool ok = p.failures.empty();
    failed += !ok;
    std::string facts;
    for (const auto& f : p.facts) facts += (facts.empty() ? "" : "; ") + f;
    fmt::print("{} {:<32} {:7.2f}s  {}\n", ok ? "PASS" : "FAIL", c.name, secs, facts);
    for (const auto& f : p.failures) fmt::print("     - {}\n", f);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
