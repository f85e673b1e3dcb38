#include <doctest.h>

#include <atomic>
#include <fstream>
#include <regex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "../helpers/oracles.hpp"
#include "morphoskill/errors.hpp"
#include "morphoskill/gateway.hpp"
#include "morphoskill/heuristic.hpp"
#include "morphoskill/prompt_blocks.hpp"
#include "morphoskill/prompts.hpp"

using namespace morphoskill;
using nlohmann::json;

namespace {

constexpr PromptTemplate kAll[] = {PromptTemplate::ProposeColdStart, PromptTemplate::ProposeMutation,
                                   PromptTemplate::Attribute,        PromptTemplate::Add,
                                   PromptTemplate::Diagnose,         PromptTemplate::Merge};

Substitutions fill_all(PromptTemplate t, const std::string& value = "7") {
  Substitutions s;
  for (const auto& p : placeholders(t)) s[p] = value;
  return s;
}

BackendResponse respond(const std::string& text, PromptTemplate t) {
  BackendResponse r;
  r.raw_text = text;
  r.parsed = extract_first_json_object(text);
  if (!r.parsed) {
    r.error = "ParseFailure";
    return r;
  }
  std::string why;
  r.valid_schema = conforms(*r.parsed, t, &why);
  if (!r.valid_schema) r.error = "SchemaViolation: " + why;
  return r;
}

Body rows(std::vector<std::vector<int>> r) { return Body::from_rows(r); }

const Body kParent = rows({{0, 0, 0, 0, 0}, {0, 1, 1, 1, 0}, {0, 1, 3, 1, 0}, {0, 1, 1, 1, 0}, {0, 1, 0, 1, 0}});

ProposeContext one_slot_context(std::vector<std::string> leaf_ids = {"pos_0"}) {
  ProposeContext ctx;
  ctx.grid_size = 5;
  ctx.parent = kParent;
  ctx.range_low = 1;
  ctx.range_high = 3;
  ctx.slots.push_back({0, std::string("frame_core"), std::move(leaf_ids), {"braced_actuators"}});
  return ctx;
}

std::string design_json(int slot, const Body& b, const json& leaf = nullptr) {
  return json{{"designs", json::array({{{"slot_index", slot}, {"body", to_json(b)}, {"reasoning", "r"},
                                        {"intended_leaf_id", leaf}}})}}
      .dump();
}

class CountingBackend : public ProposalBackend {
 public:
  std::string name() const override { return "counting"; }
  std::string complete(const PromptRequest&) override {
    if (++calls <= failures) throw BackendUnavailable("down");
    return reply;
  }
  int calls = 0;
  int failures = 0;
  std::string reply = R"({"clusters": []})";
};

}  // namespace

TEST_CASE("templates render deterministically with every field substituted") {
  for (auto t : kAll) {
    const auto subs = fill_all(t);
    const auto a = render_prompt(t, subs, 3, 1);
    const auto b = render_prompt(t, subs, 3, 1);
    CHECK(a.rendered_text == b.rendered_text);
    CHECK(a.rendered_text.find("<BODY_REQUIREMENTS>") == std::string::npos);
    CHECK(a.expected_schema == schema_id(t));
    CHECK(a.op_kind == op_kind_of(t));
    CHECK(a.generation == 3);
    CHECK(a.ordinal == 1);
    CHECK(template_for_schema(a.expected_schema) == t);
    for (const auto& p : placeholders(t)) {
      CHECK(a.rendered_text.find("{" + p + "}") == std::string::npos);
      CHECK(a.rendered_text.find("{" + p + ":.3f}") == std::string::npos);
    }
  }
}

TEST_CASE("cold-start prompt for a 5x5 grid") {
  auto subs = fill_all(PromptTemplate::ProposeColdStart);
  subs["n_designs"] = "25";
  subs["grid_size"] = "5";
  subs["voxel_legend"] = std::string(voxel_legend());
  subs["task_desc"] = task_description("Walker");
  const auto req = render_prompt(PromptTemplate::ProposeColdStart, subs);
  CHECK(req.rendered_text.find("Generate exactly 25 diverse robot designs") != std::string::npos);
  CHECK(req.rendered_text.find("body is a 5 x 5 integer grid") != std::string::npos);
  CHECK(req.rendered_text.find(std::string(voxel_legend())) != std::string::npos);
  CHECK(req.metadata == subs);

  const std::string legend(voxel_legend());
  CHECK(std::count(legend.begin(), legend.end(), '=') == 6);
  CHECK(legend.find("0 = EMPTY") != std::string::npos);
}

TEST_CASE("numeric fields use three decimals and substituted text is not rescanned") {
  auto subs = fill_all(PromptTemplate::Diagnose);
  subs["gen_mean"] = "1.23456";
  subs["gen_p25"] = "-0.5";
  subs["l1_condition"] = "literal {gen_mean} stays";
  const auto text = render_prompt(PromptTemplate::Diagnose, subs).rendered_text;
  CHECK(text.find("gen_mean=1.235, p25=-0.500") != std::string::npos);
  CHECK(text.find("literal {gen_mean} stays") != std::string::npos);
  subs["gen_mean"] = "abc";
  CHECK_THROWS_AS(render_prompt(PromptTemplate::Diagnose, subs), MissingPlaceholder);
}

TEST_CASE("missing fields are all reported") {
  auto subs = fill_all(PromptTemplate::ProposeMutation);
  subs.erase("history_block");
  subs.erase("parent_body");
  try {
    render_prompt(PromptTemplate::ProposeMutation, subs);
    FAIL("expected MissingPlaceholder");
  } catch (const MissingPlaceholder& e) {
    const std::string what = e.what();
    CHECK(what.find("history_block") != std::string::npos);
    CHECK(what.find("parent_body") != std::string::npos);
  }
  // JSON braces in the schema examples are not placeholders.
  const auto ps = placeholders(PromptTemplate::ProposeColdStart);
  CHECK(std::find(ps.begin(), ps.end(), "n_designs") != ps.end());
  for (const auto& p : ps) CHECK(std::regex_match(p, std::regex("[a-z_][a-z0-9_]*")));
}

TEST_CASE("transfer blocks") {
  TransferContext same{"Walker-v0", 5, 5, "walker-src", false};
  TransferContext cross{"Walker-v0-10x10", 10, 5, "walker-src", true};
  const auto s = transfer_context_block(same);
  const auto c = transfer_context_block(cross);
  CHECK(s != c);
  CHECK(c.find("describe abstract structural principles") != std::string::npos);
  CHECK(c.find("walker-src") != std::string::npos);
  CHECK(c.find("10x10") != std::string::npos);
  CHECK(s.find("{") == std::string::npos);
  CHECK(elite_addendum(cross).find("do NOT copy voxel-level arrangements directly") != std::string::npos);
  CHECK(grid_label(10) == "10x10");

  const std::vector<Body> refs{kParent};
  CHECK(static_reference_block(cross, {}).empty());
  const auto block = static_reference_block(cross, refs);
  CHECK(block.find("do NOT copy voxel-level arrangements directly") != std::string::npos);
}

TEST_CASE("first JSON object extraction") {
  CHECK(extract_first_json_object("Sure! {\"a\": 1} and {\"b\": 2}")->at("a") == 1);
  CHECK(extract_first_json_object("text { not json } then {\"ok\": true}")->at("ok") == true);
  CHECK(extract_first_json_object("{\"s\": \"brace } inside\", \"n\": {\"x\": 2}}")->at("n").at("x") == 2);
  CHECK_FALSE(extract_first_json_object("no object here"));
  CHECK_FALSE(extract_first_json_object("[1, 2, 3]"));
  CHECK_FALSE(extract_first_json_object("{\"unterminated\": 1"));
}

TEST_CASE("schema conformance") {
  std::string why;
  CHECK(conforms(json::parse(R"({"designs":[{"body":[[3]]}]})"), PromptTemplate::ProposeColdStart));
  CHECK_FALSE(conforms(json::parse(R"({"designs":[{"body":[[3]]}]})"), PromptTemplate::ProposeMutation, &why));
  CHECK(why.find("slot_index") != std::string::npos);
  CHECK(conforms(json::parse(R"({"assignments":[{"local_index":0,"skill_id":null}]})"), PromptTemplate::Attribute));
  CHECK(conforms(json::parse(R"({"decision":{"action":"no_add"}})"), PromptTemplate::Add));
  const auto add = json::parse(R"({"decision":{"action":"add","inspired_obs_ids":[1,2],
      "skill":{"skill_id":"portal_frame","l1":{"structure":"s","condition":"c"},
               "l2":{"positive":[],"negative":[]},"l3":{"observations":[]}}}})");
  CHECK(conforms(add, PromptTemplate::Add));
  auto loaded = add;
  loaded["decision"]["skill"]["l2"]["positive"] = json::array({{{"claim", "x"}}});
  CHECK_FALSE(conforms(loaded, PromptTemplate::Add));
  CHECK(conforms(json::parse(R"({"leaf_assignments":[{"obs_id":0,"decision":"no_leaf"}]})"), PromptTemplate::Diagnose));
  CHECK_FALSE(conforms(json::parse(R"({"leaf_assignments":[{"obs_id":0,"decision":"new_leaf"}]})"),
                       PromptTemplate::Diagnose));
  CHECK(conforms(json::parse(R"({"clusters":[{"group_label":"g","skill_ids":["a","b"]}]})"), PromptTemplate::Merge));
  CHECK_FALSE(conforms(json::parse("[]"), PromptTemplate::Merge));
}

TEST_CASE("propose parsing gates validity and leaf ids") {
  SUBCASE("valid child within range") {
    Body child = kParent;
    child.set(4, 2, 1);
    const auto out = parse_propose(respond(design_json(0, child, "pos_0"), PromptTemplate::ProposeMutation),
                                   one_slot_context());
    REQUIRE(out.size() == 1);
    REQUIRE(out[0].child);
    CHECK(*out[0].child == child);
    CHECK_FALSE(out[0].repaired);
    CHECK_FALSE(out[0].out_of_range);
    CHECK(out[0].intended_leaf_id == "pos_0");
    CHECK(out[0].based_on_skill == "frame_core");
  }
  SUBCASE("claim string instead of leaf id is nulled, slot kept") {
    Body child = kParent;
    child.set(4, 2, 1);
    const auto out = parse_propose(
        respond(design_json(0, child, "braced_actuators"), PromptTemplate::ProposeMutation), one_slot_context());
    REQUIRE(out[0].child);
    CHECK_FALSE(out[0].intended_leaf_id);
    CHECK(out[0].leaf_id_nulled);
  }
  SUBCASE("small stray component is repaired") {
    // 12 cells in the main component, one stray cell: 12/13 > 80%.
    Body child = kParent;
    child.set(4, 2, 1);
    Body expected = child;
    child.set(0, 4, 2);
    REQUIRE_FALSE(is_valid(child));
    const auto out = parse_propose(respond(design_json(0, child), PromptTemplate::ProposeMutation), one_slot_context());
    REQUIRE(out[0].child);
    CHECK(out[0].repaired);
    CHECK(*out[0].child == expected);
    // Repair that lands back on the parent is a duplicate and falls back.
    Body stray = kParent;
    stray.set(0, 4, 2);
    const auto dup = parse_propose(respond(design_json(0, stray), PromptTemplate::ProposeMutation), one_slot_context());
    CHECK_FALSE(dup[0].child);
  }
  SUBCASE("duplicate of the parent falls back") {
    const auto out = parse_propose(respond(design_json(0, kParent), PromptTemplate::ProposeMutation), one_slot_context());
    CHECK_FALSE(out[0].child);
    CHECK_FALSE(out[0].fallback_reason.empty());
  }
  SUBCASE("unrepairable and wrong-size bodies fall back") {
    const Body split = rows({{3, 0, 0, 0, 1}, {1, 0, 0, 0, 1}, {0, 0, 0, 0, 1}, {0, 0, 0, 0, 0}, {0, 0, 0, 0, 0}});
    auto out = parse_propose(respond(design_json(0, split), PromptTemplate::ProposeMutation), one_slot_context());
    CHECK_FALSE(out[0].child);
    out = parse_propose(respond(design_json(0, Body(3, 3)), PromptTemplate::ProposeMutation), one_slot_context());
    CHECK_FALSE(out[0].child);
  }
  SUBCASE("unparsable response sends every slot to fallback") {
    auto ctx = one_slot_context();
    ctx.slots.push_back({1, std::nullopt, {}, {}});
    const auto out = parse_propose(respond("I cannot help with that.", PromptTemplate::ProposeMutation), ctx);
    REQUIRE(out.size() == 2);
    CHECK_FALSE(out[0].child);
    CHECK_FALSE(out[1].child);
  }
  SUBCASE("out-of-range edits are kept with a flag") {
    Body child = kParent;
    child.set(0, 1, 1);
    child.set(0, 2, 1);
    child.set(0, 3, 1);
    child.set(4, 2, 1);
    const auto out = parse_propose(respond(design_json(0, child), PromptTemplate::ProposeMutation), one_slot_context());
    REQUIRE(out[0].child);
    CHECK(out[0].out_of_range);
  }
}

TEST_CASE("mutation range check") {
  Body two = kParent;
  two.set(4, 2, 1);
  two.set(0, 2, 1);
  CHECK(mutation_range_check(kParent, two, 1, 3) == RangeCheck::Within);
  CHECK(mutation_range_check(kParent, kParent, 1, 3) == RangeCheck::Outside);
  Body big(10, 1);
  Body twelve = big;
  for (int i = 0; i < 12; ++i) twelve.set(i / 10, i % 10, 2);
  CHECK(mutation_range_check(big, twelve, 1, 10) == RangeCheck::Outside);
  CHECK_THROWS_AS(mutation_range_check(kParent, big, 1, 3), SizeMismatch);
}

TEST_CASE("cold-start parsing") {
  const Body a = kParent;
  Body b = kParent;
  b.set(4, 2, 1);
  const json designs{{"designs", json::array({{{"body", to_json(a)}}, {{"body", to_json(a)}}, {{"body", to_json(b)}}})}};
  const auto out = parse_cold_start(respond(designs.dump(), PromptTemplate::ProposeColdStart), 4, 5);
  REQUIRE(out.size() == 4);
  CHECK(out[0].body);
  CHECK_FALSE(out[1].body);  // duplicate
  CHECK(out[2].body);
  CHECK_FALSE(out[3].body);  // missing
  CHECK(parse_cold_start(respond("nope", PromptTemplate::ProposeColdStart), 3, 5).size() == 3);
}

TEST_CASE("maintenance decisions degrade to no-ops") {
  const auto attr = parse_attribute(
      respond(R"({"assignments":[{"local_index":0,"skill_id":"frame_core"},{"local_index":0,"skill_id":null},
                                  {"local_index":5,"skill_id":"frame_core"},{"local_index":1,"skill_id":"ghost"}]})",
              PromptTemplate::Attribute),
      3, {"frame_core"});
  REQUIRE(attr.decisions.size() == 3);
  CHECK(attr.decisions[0].skill_id == "frame_core");
  CHECK_FALSE(attr.decisions[1].skill_id);
  CHECK_FALSE(attr.decisions[2].skill_id);
  CHECK(attr.notes.size() == 3);
  const auto dropped_attr = parse_attribute(respond("garbage", PromptTemplate::Attribute), 2, {});
  CHECK(dropped_attr.decisions.size() == 2);
  CHECK_FALSE(dropped_attr.decisions[0].skill_id);

  auto add_text = std::string(R"({"decision":{"action":"add","inspired_obs_ids":[3],
      "skill":{"skill_id":"portal_frame","task_family":["Walker"],
               "l1":{"structure":"portal frame","condition":"two legs joined by a rigid lintel"},
               "l2":{"positive":[],"negative":[]},"l3":{"observations":[]}}}})");
  const auto add = parse_add(respond(add_text, PromptTemplate::Add), "Walker");
  CHECK(add.decision.add);
  CHECK(add.decision.skill->skill_id == "portal_frame");
  CHECK(add.decision.inspired_obs_ids == std::vector<std::int64_t>{3});
  const auto filled = std::regex_replace(add_text, std::regex(R"("positive":\[\])"), R"("positive":[{"claim":"x"}])");
  const auto bad = parse_add(respond(filled, PromptTemplate::Add), "Walker");
  CHECK(bad.dropped);
  CHECK_FALSE(bad.decision.add);
  const auto coords = std::regex_replace(add_text, std::regex("two legs joined"), "row 4 joined");
  CHECK(parse_add(respond(coords, PromptTemplate::Add), "Walker").dropped);

  const auto diag = parse_diagnose(respond(
      R"({"leaf_assignments":[{"obs_id":0,"decision":"match_existing","leaf_id":"pos_0",
                                "description_update":{"mode":"append","text":"more"}},
                               {"obs_id":1,"decision":"new_leaf","polarity":"negative","claim":"c","description":"d"},
                               {"obs_id":2,"decision":"no_leaf"}],
          "standalone_new_leaves":[{"polarity":"positive","claim":"s","description":"d","supporting_obs_ids":[0,1]}]})",
      PromptTemplate::Diagnose));
  REQUIRE(diag.assignments.size() == 3);
  CHECK(diag.assignments[0].description_update->mode == DescriptionUpdate::Mode::Append);
  CHECK(diag.assignments[1].polarity == Polarity::Negative);
  CHECK(diag.assignments[2].kind == LeafAssignment::Kind::NoLeaf);
  CHECK(diag.standalone.size() == 1);
  CHECK(parse_diagnose(respond("{}", PromptTemplate::Diagnose)).dropped);

  const auto merge =
      parse_merge(respond(R"({"clusters":[{"group_label":"g","skill_ids":["a","b"],"reason":"same"}]})",
                          PromptTemplate::Merge));
  REQUIRE(merge.clusters.size() == 1);
  CHECK(merge.clusters[0].skill_ids.size() == 2);
  CHECK(parse_merge(respond("{\"clusters\": 3}", PromptTemplate::Merge)).dropped);
}

TEST_CASE("scripted backend") {
  testutil::TempDir dir("scripted");
  {
    std::ofstream(dir / "attribute_4_1.txt") << "prose {\"assignments\": []} tail";
  }
  ScriptedBackend backend(dir.path());
  PromptRequest req;
  req.op_kind = OpKind::Attribute;
  req.generation = 4;
  req.ordinal = 1;
  req.expected_schema = schema_id(PromptTemplate::Attribute);
  CHECK(ScriptedBackend::fixture_name(req) == "attribute_4_1.txt");
  CHECK(backend.complete(req) == "prose {\"assignments\": []} tail");
  const auto resp = dispatch(req, backend);
  CHECK(resp.valid_schema);
  req.ordinal = 2;
  CHECK_THROWS_AS(backend.complete(req), BackendUnavailable);
  CHECK_THROWS_AS(dispatch(req, backend), BackendUnavailable);
  CHECK_THROWS_AS(ScriptedBackend((dir / "nope").string()), BackendUnavailable);
  CHECK(make_backend("scripted:" + dir.path().string(), {}, 0)->name() == "scripted");
  CHECK_THROWS_AS(make_backend("oracle", {}, 0), ConfigInvalid);
}

TEST_CASE("dispatch retries once on transport failure") {
  PromptRequest req;
  req.op_kind = OpKind::Merge;
  req.expected_schema = schema_id(PromptTemplate::Merge);
  CountingBackend once;
  once.failures = 1;
  CHECK(dispatch(req, once).valid_schema);
  CHECK(once.calls == 2);
  CountingBackend twice;
  twice.failures = 2;
  CHECK_THROWS_AS(dispatch(req, twice), BackendUnavailable);
  CHECK(twice.calls == 2);
  CountingBackend prose;
  prose.reply = "no json";
  const auto r = dispatch(req, prose);
  CHECK_FALSE(r.parsed);
  CHECK_FALSE(r.valid_schema);
  CHECK(r.error.find("ParseFailure") != std::string::npos);
}

TEST_CASE("heuristic attribute picks the skill sharing the most structural cues") {
  Skill frame;
  frame.skill_id = "rigid_frame";
  frame.l1_structure = "rigid frame";
  frame.l1_condition = "stiff brace around each actuator for support";
  Skill pad;
  pad.skill_id = "soft_pad";
  pad.l1_structure = "soft pad";
  pad.l1_condition = "compliant contact along the bottom";
  // Mostly rigid with both actuators fully braced, standing on two legs.
  const Body framed = rows({{1, 1, 1, 1, 1}, {1, 3, 1, 3, 1}, {1, 1, 1, 1, 1}, {1, 0, 0, 0, 1}, {1, 0, 0, 0, 1}});
  // Soft bottom rows, little rigid material: a pad.
  const Body padded = rows({{0, 0, 0, 0, 0}, {0, 0, 3, 0, 0}, {0, 2, 2, 2, 0}, {2, 2, 2, 2, 2}, {2, 2, 2, 2, 2}});
  const std::vector<Body> designs{framed, padded};

  auto attribute = [&](const std::vector<Skill>& skills, bool pool_pass) {
    auto subs = fill_all(PromptTemplate::Attribute, "");
    subs["skills_block"] = skills_summary_block(skills);
    subs["designs_block"] = designs_block(designs);
    if (pool_pass) subs["attribution_pass"] = "pool";
    const auto req = render_prompt(PromptTemplate::Attribute, subs, 2, 0);
    HeuristicBackend backend(11);
    const auto resp = dispatch(req, backend);
    REQUIRE(resp.valid_schema);
    CHECK(backend.complete(req) == HeuristicBackend(11).complete(req));
    std::vector<std::string> known;
    for (const auto& k : skills) known.push_back(k.skill_id);
    return parse_attribute(resp, 2, known);
  };

  SUBCASE("pool retries route by shared cues") {
    const auto out = attribute({frame, pad}, true);
    CHECK(out.decisions[0].skill_id == "rigid_frame");
    CHECK(out.decisions[1].skill_id == "soft_pad");
  }
  SUBCASE("fresh designs showing an uncovered archetype stay unexplained") {
    const auto out = attribute({frame, pad}, false);
    CHECK_FALSE(out.decisions[0].skill_id);
    CHECK(out.decisions[0].reason.find("no skill covers") != std::string::npos);
  }
  SUBCASE("archetype skills claim bodies with their trigger cues") {
    std::vector<Skill> lib;
    for (const auto& a : heuristic::archetypes()) {
      Skill k;
      k.skill_id = a.skill_id;
      k.l1_structure = a.structure;
      k.l1_condition = a.condition;
      lib.push_back(k);
    }
    const auto out = attribute(lib, false);
    REQUIRE(out.decisions[0].skill_id);
    REQUIRE(out.decisions[1].skill_id);
    CHECK((*out.decisions[0].skill_id == "braced_actuator_frame" || *out.decisions[0].skill_id == "legged_arch"));
    CHECK((*out.decisions[1].skill_id == "soft_pad_crawler" || *out.decisions[1].skill_id == "horizontal_rail"));
  }
}

TEST_CASE("prompt audit log records every call") {
  testutil::TempDir dir("audit");
  const auto path = dir / "prompts.log.jsonl";
  {
    PromptAuditLog log(path);
    PromptRequest req;
    req.rendered_text = "hello";
    req.expected_schema = schema_id(PromptTemplate::Merge);
    log.append(req, "{}");
    log.append(req, "", "Timeout: slow");
    CHECK(log.entries() == 2);
  }
  std::ifstream in(path);
  std::string line;
  std::vector<json> lines;
  while (std::getline(in, line)) lines.push_back(json::parse(line));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["prompt"] == "hello");
  CHECK(lines[1]["error"] == "Timeout: slow");
}

TEST_CASE("remote chat-completion backend") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::atomic<int> fail_first{0};
  json last_body;
  std::mutex m;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    {
      std::lock_guard lock(m);
      last_body = json::parse(req.body);
    }
    if (fail_first > 0) {
      --fail_first;
      res.status = 500;
      return;
    }
    json reply{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", "{\"clusters\": []}"}}}}})}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/slow/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(800));
    res.set_content("{}", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.model_name = "test-model";
  cfg.system_prompt = "be terse";
  cfg.max_tokens = 64;
  PromptRequest req;
  req.rendered_text = "hi";
  req.expected_schema = schema_id(PromptTemplate::Merge);

  SUBCASE("success") {
    RemoteBackend backend(cfg);
    CHECK(backend.complete(req) == "{\"clusters\": []}");
    std::lock_guard lock(m);
    CHECK(last_body["model"] == "test-model");
    CHECK(last_body["temperature"] == 1.0);
    CHECK(last_body["max_tokens"] == 64);
    CHECK(last_body["messages"].size() == 2);
    CHECK(last_body["messages"][1]["content"] == "hi");
  }
  SUBCASE("HTTP 500 once then success through dispatch") {
    fail_first = 1;
    RemoteBackend backend(cfg);
    CHECK(dispatch(req, backend).valid_schema);
    CHECK(hits == 2);
  }
  SUBCASE("persistent 500 is unavailable") {
    fail_first = 10;
    RemoteBackend backend(cfg);
    CHECK_THROWS_AS(dispatch(req, backend), BackendUnavailable);
    CHECK(hits == 2);
  }
  SUBCASE("slow endpoint times out") {
    auto slow = cfg;
    slow.base_url = "http://127.0.0.1:" + std::to_string(port) + "/slow";
    slow.request_timeout = std::chrono::milliseconds(200);
    slow.max_retries = 0;
    RemoteBackend backend(slow);
    CHECK_THROWS_AS(backend.complete(req), Timeout);
  }
  SUBCASE("configuration errors") {
    auto bad = cfg;
    bad.model_name.clear();
    CHECK_THROWS_AS(RemoteBackend{bad}, ConfigInvalid);
    auto closed = cfg;
    closed.base_url = "http://127.0.0.1:1/v1";
    closed.max_retries = 0;
    CHECK_THROWS_AS(RemoteBackend(closed).complete(req), BackendUnavailable);
  }
  server.stop();
  th.join();
}
