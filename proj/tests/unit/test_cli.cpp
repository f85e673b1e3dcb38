#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>

#include "../helpers/oracles.hpp"
#include "../helpers/run_helpers.hpp"
#include "morphoskill/orchestrator.hpp"

using namespace morphoskill;
using nlohmann::json;
using testutil::TempDir;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(MORPHOSKILL_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::array<char, 4096> buf{};
  while (const auto n = std::fread(buf.data(), 1, buf.size(), p)) r.output.append(buf.data(), n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

RuleLeaf leaf(const std::string& id, Polarity p) {
  RuleLeaf l;
  l.leaf_id = id;
  l.polarity = p;
  l.claim = "claim_" + id;
  l.description = "a structural pattern";
  return l;
}

// Five skills holding 12 positive and 17 negative leaves.
SkillLibrary shaped_library() {
  SkillLibrary lib;
  lib.task = "Walker";
  lib.scale = 5;
  lib.generation = 20;
  const int pos[] = {3, 3, 2, 2, 2};
  const int neg[] = {4, 4, 3, 3, 3};
  const char* ids[] = {"portal_frame", "braced_core", "split_legs", "soft_footpad", "rail_base"};
  for (int i = 0; i < 5; ++i) {
    Skill s;
    s.skill_id = ids[i];
    s.task_family = {"Walker"};
    s.l1_structure = "frame";
    s.l1_condition = "load-bearing arrangement";
    int k = 0;
    for (int j = 0; j < pos[i]; ++j) s.l2_positive.push_back(leaf("pos_" + std::to_string(k++), Polarity::Positive));
    for (int j = 0; j < neg[i]; ++j) s.l2_negative.push_back(leaf("neg_" + std::to_string(k++), Polarity::Negative));
    s.next_leaf_id_counter = k;
    lib.skills.push_back(std::move(s));
  }
  return lib;
}

}  // namespace

TEST_CASE("cli run completes with one log row per evaluation") {
  TempDir dir("cli-run");
  const auto out = dir / "walker";
  const auto r = cli("run --task Walker --scale 5 --budget 250 --evaluator surrogate --backend heuristic --seed 3 --out " +
                     q(out));
  REQUIRE(r.code == 0);
  CHECK(r.output.find("gen   9  evals   250") != std::string::npos);
  CHECK(r.output.find("gen  10") == std::string::npos);
  const auto log = read_run_log(RunPaths{out}.log());
  CHECK(testutil::all_slots(log).size() == 250);
  for (const auto* f : {"config.snapshot", "run.log.jsonl", "prompts.log.jsonl", "library.json", "best_body.json",
                        "curve.csv", "summary.csv"}) {
    CHECK(std::filesystem::exists(out / f));
  }
  CHECK(load_config(RunPaths{out}.config()).budget == 250);

  SUBCASE("report reproduces summary files byte for byte") {
    const auto before = testutil::slurp(RunPaths{out}.summary());
    REQUIRE(cli("report " + q(out)).code == 0);
    CHECK(testutil::slurp(RunPaths{out}.summary()) == before);
    REQUIRE(cli("report " + q(out)).code == 0);
    CHECK(testutil::slurp(RunPaths{out}.summary()) == before);
  }
  SUBCASE("resume of a finished run is a no-op") {
    const auto before = comparable_log_payload(RunPaths{out}.log());
    CHECK(cli("resume -q " + q(out)).code == 0);
    CHECK(comparable_log_payload(RunPaths{out}.log()) == before);
  }
  SUBCASE("inspect the produced library") {
    const auto i = cli("library inspect " + q(out));
    CHECK(i.code == 0);
    CHECK(i.output.find("totals (skills / positive / negative)") != std::string::npos);
  }
}

TEST_CASE("cli comparison against a GA baseline") {
  TempDir dir("cli-cmp");
  const auto ga = dir / "ga";
  const auto ar = dir / "ar";
  REQUIRE(cli("run -q --budget 75 --seed 4 --mode ga_only --out " + q(ga)).code == 0);
  REQUIRE(cli("run -q --budget 75 --seed 4 --out " + q(ar) + " --baseline " + q(ga)).code == 0);
  const auto summary = testutil::slurp(RunPaths{ar}.summary());
  CHECK(summary.rfind("task,ga,ar,delta,speedup,lead_fraction\n", 0) == 0);
  const auto row = compare("Walker", load_run_curve(ar), load_run_curve(ga));
  CHECK(summary == summary_csv(std::span<const ComparisonSummary>(&row, 1)));
  const auto rep = cli("report " + q(ar));
  CHECK(rep.code == 0);
  CHECK(rep.output.find("Agent") != std::string::npos);
  CHECK(testutil::slurp(RunPaths{ar}.summary()) == summary);
}

TEST_CASE("cli exit codes") {
  TempDir dir("cli-exit");
  SUBCASE("unknown flag prints usage and exits 2") {
    const auto r = cli("run --warp-drive");
    CHECK(r.code == 2);
    CHECK(r.output.find("--budget") != std::string::npos);
  }
  SUBCASE("missing verb") { CHECK(cli("").code == 2); }
  SUBCASE("invalid configuration exits 2") {
    CHECK(cli("run -q --budget 0 --out " + q(dir / "x")).code == 2);
    CHECK(cli("run -q --mode sideways --out " + q(dir / "x")).code == 2);
    CHECK(cli("run -q --backend oracle --out " + q(dir / "x")).code == 2);
    std::ofstream(dir / "bad.cfg") << "budget = 10\nwarp = 9\n";
    CHECK(cli("run -q --config " + q(dir / "bad.cfg") + " --out " + q(dir / "x")).code == 2);
  }
  SUBCASE("unreachable evaluator exits 3") {
    CHECK(cli("run -q --budget 25 --evaluator external:tcp:127.0.0.1:1 --out " + q(dir / "x")).code == 3);
  }
  SUBCASE("missing scripted fixtures exit 3") {
    std::filesystem::create_directories(dir / "fixtures");
    CHECK(cli("run -q --budget 25 --backend scripted:" + q(dir / "fixtures") + " --out " + q(dir / "x")).code == 3);
  }
  SUBCASE("missing transfer source exits 4") {
    std::filesystem::create_directories(dir / "empty");
    CHECK(cli("transfer -q --skill-only --source " + q(dir / "empty") + " --out " + q(dir / "x")).code == 4);
    CHECK(cli("library inspect " + q(dir / "nothing.json")).code == 4);
  }
  SUBCASE("transfer needs exactly one of --with-ref / --skill-only") {
    CHECK(cli("transfer -q --source " + q(dir.path())).code == 2);
    CHECK(cli("transfer -q --with-ref --skill-only --source " + q(dir.path())).code == 2);
  }
  SUBCASE("schema violations exit 5") {
    std::ofstream(dir / "broken.json") << "{\"schema_version\": 1, \"skills\": 3}";
    CHECK(cli("library inspect " + q(dir / "broken.json")).code == 5);
    std::ofstream(dir / "notjson.json") << "skills: none";
    CHECK(cli("library inspect " + q(dir / "notjson.json")).code == 5);
  }
}

TEST_CASE("cli library actions") {
  TempDir dir("cli-lib");
  const auto path = dir / "library.json";
  save_library(shaped_library(), path.string());

  const auto inspect = cli("library inspect " + q(path));
  REQUIRE(inspect.code == 0);
  CHECK(inspect.output.find("totals (skills / positive / negative): 5 / 12 / 17") != std::string::npos);
  CHECK(inspect.output.find("0.5000") != std::string::npos);

  const auto exported = dir / "exported.json";
  REQUIRE(cli("library export " + q(path) + " --out " + q(exported)).code == 0);
  const auto lib = load_library(exported.string());
  CHECK(lib.observation_count() == 0);
  CHECK(lib.leaf_count() == 29);
  for (const auto& s : lib.skills) CHECK(skill_weight(s, 2.0) == 0.5);
  CHECK(import_for_transfer(lib).observation_count() == 0);

  const auto dry = cli("library merge-dry-run " + q(path));
  CHECK(dry.code == 0);
  CHECK(dry.output.find("--- proposed clusters ---") != std::string::npos);
  // Dry run leaves the file alone.
  CHECK(load_library(path.string()).skills.size() == 5);
}

TEST_CASE("cli transfer and ablation flags") {
  TempDir dir("cli-transfer");
  const auto src = dir / "src";
  REQUIRE(cli("run -q --budget 100 --seed 2 --out " + q(src)).code == 0);

  const auto so = dir / "so";
  REQUIRE(cli("transfer -q --skill-only --source " + q(src) + " --budget 75 --out " + q(so)).code == 0);
  for (const auto& p : testutil::prompts_with_schema(RunPaths{so}.prompts(), "propose.mutation.v1")) {
    CHECK(p.find("Reference designs") == std::string::npos);
    CHECK(p.find("reference_0") == std::string::npos);
  }
  CHECK(load_config(RunPaths{so}.config()).source_run == src.string());

  const auto wr = dir / "wr";
  REQUIRE(cli("transfer -q --with-ref --source " + q(src) + " --budget 75 --out " + q(wr)).code == 0);
  const auto prompts = testutil::prompts_with_schema(RunPaths{wr}.prompts(), "propose.mutation.v1");
  REQUIRE_FALSE(prompts.empty());
  CHECK(prompts[0].find("Reference designs (top-fitness exemplars") != std::string::npos);

  const auto pl = dir / "pl";
  REQUIRE(cli("run -q --budget 75 --pure-llm --out " + q(pl)).code == 0);
  CHECK(testutil::count_path(read_run_log(RunPaths{pl}.log()), "B") == 0);
}

TEST_CASE("cli upsample and evaluate") {
  TempDir dir("cli-body");
  const Body b = random_valid_body(5, 77);
  std::ofstream(dir / "body.json") << to_json(b).dump();
  std::ofstream(dir / "bad.txt") << "1 2 3\n4 x\n";

  const auto r2 = cli("upsample " + q(dir / "body.json") + " --factor 2 --out " + q(dir / "tiled.json"));
  REQUIRE(r2.code == 0);
  CHECK(r2.output.find("tiled (10x10): valid=true") != std::string::npos);
  const Body tiled = body_from_json(json::parse(testutil::slurp(dir / "tiled.json")));
  CHECK(tiled.size() == 10);
  CHECK(is_valid(tiled));
  CHECK(tiled == upsample_tiling(b, 2));

  REQUIRE(cli("upsample " + q(dir / "body.json") + " --factor 1 --out " + q(dir / "same.json")).code == 0);
  CHECK(body_from_json(json::parse(testutil::slurp(dir / "same.json"))) == b);

  CHECK(cli("upsample " + q(dir / "bad.txt") + " --factor 2").code == 2);
  CHECK(cli("upsample " + q(dir / "missing.txt") + " --factor 2").code == 2);

  const auto ev = cli("evaluate " + q(dir / "body.json"));
  REQUIRE(ev.code == 0);
  CHECK(ev.output.find("fitness: ") != std::string::npos);
  const auto ext = cli("evaluate " + q(dir / "body.json") + " --evaluator 'external:cmd:" + ECHO_EVALUATOR_PATH + "'");
  REQUIRE(ext.code == 0);
  int act = 0;
  for (int r = 0; r < b.size(); ++r)
    for (int c = 0; c < b.size(); ++c) act += is_actuator(b.at(r, c));
  CHECK(ext.output.find("fitness: " + std::to_string(act)) != std::string::npos);
}
