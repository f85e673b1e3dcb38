#include "morphoskill/gateway.hpp"

#include <cstdlib>
#include <map>
#include <set>
#include <sstream>

#include <httplib.h>

#include "morphoskill/errors.hpp"

namespace morphoskill {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Remote backend

RemoteBackend::RemoteBackend(RemoteBackendConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) throw ConfigInvalid("remote backend needs a base_url");
  if (config_.model_name.empty()) throw ConfigInvalid("remote backend needs a model_name");
}

namespace {

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto path_start = url.find('/', host_start);
  SplitUrl out;
  out.origin = path_start == std::string::npos ? url : url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!out.path.empty() && out.path.back() == '/') out.path.pop_back();
  return out;
}

}  // namespace

std::string RemoteBackend::complete(const PromptRequest& request) {
  const auto url = split_url(config_.base_url);
  httplib::Client client(url.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.request_timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.request_timeout).count() % 1000000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  json messages = json::array();
  if (config_.system_prompt) messages.push_back({{"role", "system"}, {"content", *config_.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", request.rendered_text}});
  json body{{"model", config_.model_name}, {"messages", messages}, {"temperature", config_.temperature}};
  if (config_.max_tokens) body["max_tokens"] = *config_.max_tokens;

  auto res = client.Post(url.path + "/chat/completions", headers, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    const std::string what = httplib::to_string(err);
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
      throw Timeout("chat completion: " + what);
    }
    throw BackendUnavailable("chat completion: " + what);
  }
  if (res->status != 200) {
    throw BackendUnavailable("chat completion returned HTTP " + std::to_string(res->status));
  }
  try {
    const auto reply = json::parse(res->body);
    return reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw BackendUnavailable(std::string("unexpected chat completion payload: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scripted backend

ScriptedBackend::ScriptedBackend(std::filesystem::path directory) : directory_(std::move(directory)) {
  if (!std::filesystem::is_directory(directory_)) {
    throw BackendUnavailable("scripted backend directory not found: " + directory_.string());
  }
}

std::string ScriptedBackend::fixture_name(const PromptRequest& request) {
  return to_string(request.op_kind) + "_" + std::to_string(request.generation) + "_" +
         std::to_string(request.ordinal) + ".txt";
}

std::string ScriptedBackend::complete(const PromptRequest& request) {
  const auto path = directory_ / fixture_name(request);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BackendUnavailable("no scripted fixture " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::unique_ptr<ProposalBackend> make_backend(const std::string& selector, const RemoteBackendConfig& remote,
                                              std::uint64_t seed) {
  if (selector == "heuristic") return std::make_unique<HeuristicBackend>(seed);
  if (selector.rfind("scripted:", 0) == 0) return std::make_unique<ScriptedBackend>(selector.substr(9));
  if (selector == "remote") return std::make_unique<RemoteBackend>(remote);
  throw ConfigInvalid("unknown backend '" + selector + "' (use heuristic, scripted:<dir> or remote)");
}

// ---------------------------------------------------------------------------
// Extraction and schema checks

std::optional<json> extract_first_json_object(const std::string& text) {
  for (auto start = text.find('{'); start != std::string::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        auto parsed = json::parse(text.begin() + static_cast<std::ptrdiff_t>(start),
                                  text.begin() + static_cast<std::ptrdiff_t>(i) + 1, nullptr, false);
        if (!parsed.is_discarded() && parsed.is_object()) return parsed;
        break;
      }
    }
  }
  return std::nullopt;
}

namespace {

bool fail(std::string* why, const std::string& msg) {
  if (why) *why = msg;
  return false;
}

bool is_int(const json& j) { return j.is_number_integer() || j.is_number_unsigned(); }

bool int_array(const json& j) {
  if (!j.is_array()) return false;
  for (const auto& e : j) {
    if (!is_int(e)) return false;
  }
  return true;
}

bool string_or_null(const json& j, const char* key) {
  return !j.contains(key) || j[key].is_null() || j[key].is_string();
}

bool conforms_designs(const json& v, bool slotted, std::string* why) {
  if (!v.contains("designs") || !v["designs"].is_array()) return fail(why, "designs must be an array");
  for (const auto& d : v["designs"]) {
    if (!d.is_object()) return fail(why, "design entries must be objects");
    if (!d.contains("body") || !d["body"].is_array()) return fail(why, "design without body matrix");
    if (slotted && (!d.contains("slot_index") || !is_int(d["slot_index"]))) {
      return fail(why, "design without integer slot_index");
    }
    if (slotted && (!string_or_null(d, "based_on_skill") || !string_or_null(d, "intended_leaf_id"))) {
      return fail(why, "based_on_skill and intended_leaf_id must be strings or null");
    }
  }
  return true;
}

bool conforms_attribute(const json& v, std::string* why) {
  if (!v.contains("assignments") || !v["assignments"].is_array()) return fail(why, "assignments must be an array");
  for (const auto& a : v["assignments"]) {
    if (!a.is_object() || !a.contains("local_index") || !is_int(a["local_index"])) {
      return fail(why, "assignment without integer local_index");
    }
    if (!string_or_null(a, "skill_id")) return fail(why, "skill_id must be a string or null");
  }
  return true;
}

bool conforms_add(const json& v, std::string* why) {
  if (!v.contains("decision") || !v["decision"].is_object()) return fail(why, "decision object missing");
  const auto& d = v["decision"];
  if (!d.contains("action") || !d["action"].is_string()) return fail(why, "decision.action missing");
  const auto action = d["action"].get<std::string>();
  if (action == "no_add") return true;
  if (action != "add") return fail(why, "decision.action must be add or no_add");
  if (!d.contains("inspired_obs_ids") || !int_array(d["inspired_obs_ids"])) {
    return fail(why, "inspired_obs_ids must be an integer list");
  }
  if (!d.contains("skill") || !d["skill"].is_object()) return fail(why, "add without skill object");
  const auto& s = d["skill"];
  if (!s.contains("skill_id") || !s["skill_id"].is_string()) return fail(why, "skill.skill_id missing");
  if (!s.contains("l1") || !s["l1"].is_object()) return fail(why, "skill.l1 missing");
  for (const char* k : {"structure", "condition"}) {
    if (!s["l1"].contains(k) || !s["l1"][k].is_string()) return fail(why, std::string("skill.l1.") + k + " missing");
  }
  if (s.contains("task_family") && !s["task_family"].is_array()) return fail(why, "task_family must be a list");
  if (s.contains("l2")) {
    for (const char* k : {"positive", "negative"}) {
      if (s["l2"].contains(k) && !(s["l2"][k].is_array() && s["l2"][k].empty())) {
        return fail(why, std::string("skill.l2.") + k + " must be empty at birth");
      }
    }
  }
  if (s.contains("l3") && s["l3"].contains("observations") &&
      !(s["l3"]["observations"].is_array() && s["l3"]["observations"].empty())) {
    return fail(why, "skill.l3.observations must be empty at birth");
  }
  return true;
}

bool conforms_diagnose(const json& v, std::string* why) {
  if (!v.contains("leaf_assignments") || !v["leaf_assignments"].is_array()) {
    return fail(why, "leaf_assignments must be an array");
  }
  for (const auto& a : v["leaf_assignments"]) {
    if (!a.is_object() || !a.contains("obs_id") || !is_int(a["obs_id"])) return fail(why, "entry without obs_id");
    if (!a.contains("decision") || !a["decision"].is_string()) return fail(why, "entry without decision");
    const auto d = a["decision"].get<std::string>();
    if (d == "match_existing") {
      if (!a.contains("leaf_id") || !a["leaf_id"].is_string()) return fail(why, "match_existing without leaf_id");
      if (a.contains("description_update") && !a["description_update"].is_null()) {
        const auto& u = a["description_update"];
        if (!u.is_object()) return fail(why, "description_update must be an object");
        if (u.contains("mode") && !u["mode"].is_null() &&
            !(u["mode"].is_string() && (u["mode"] == "overwrite" || u["mode"] == "append"))) {
          return fail(why, "description_update.mode must be overwrite, append or null");
        }
      }
    } else if (d == "new_leaf") {
      if (!a.contains("polarity") || !(a["polarity"] == "positive" || a["polarity"] == "negative")) {
        return fail(why, "new_leaf needs polarity positive or negative");
      }
      for (const char* k : {"claim", "description"}) {
        if (!a.contains(k) || !a[k].is_string()) return fail(why, std::string("new_leaf without ") + k);
      }
    } else if (d != "no_leaf") {
      return fail(why, "unknown decision '" + d + "'");
    }
  }
  if (v.contains("standalone_new_leaves")) {
    if (!v["standalone_new_leaves"].is_array()) return fail(why, "standalone_new_leaves must be an array");
    for (const auto& s : v["standalone_new_leaves"]) {
      if (!s.is_object() || !(s.value("polarity", "") == "positive" || s.value("polarity", "") == "negative")) {
        return fail(why, "standalone leaf needs a polarity");
      }
      if (!s.contains("claim") || !s["claim"].is_string() || !s.contains("description") ||
          !s["description"].is_string()) {
        return fail(why, "standalone leaf needs claim and description");
      }
      if (!s.contains("supporting_obs_ids") || !int_array(s["supporting_obs_ids"])) {
        return fail(why, "standalone leaf needs supporting_obs_ids");
      }
    }
  }
  return true;
}

bool conforms_merge(const json& v, std::string* why) {
  if (!v.contains("clusters") || !v["clusters"].is_array()) return fail(why, "clusters must be an array");
  for (const auto& c : v["clusters"]) {
    if (!c.is_object() || !c.contains("group_label") || !c["group_label"].is_string()) {
      return fail(why, "cluster without group_label");
    }
    if (!c.contains("skill_ids") || !c["skill_ids"].is_array()) return fail(why, "cluster without skill_ids");
    for (const auto& id : c["skill_ids"]) {
      if (!id.is_string()) return fail(why, "skill_ids must be strings");
    }
  }
  return true;
}

}  // namespace

bool conforms(const json& value, PromptTemplate t, std::string* why) {
  if (!value.is_object()) return fail(why, "response is not a JSON object");
  switch (t) {
    case PromptTemplate::ProposeColdStart: return conforms_designs(value, false, why);
    case PromptTemplate::ProposeMutation: return conforms_designs(value, true, why);
    case PromptTemplate::Attribute: return conforms_attribute(value, why);
    case PromptTemplate::Add: return conforms_add(value, why);
    case PromptTemplate::Diagnose: return conforms_diagnose(value, why);
    case PromptTemplate::Merge: return conforms_merge(value, why);
  }
  return false;
}

BackendResponse dispatch(const PromptRequest& request, ProposalBackend& backend) {
  BackendResponse response;
  const int attempts = 1 + std::max(0, backend.max_retries());
  for (int attempt = 1;; ++attempt) {
    try {
      response.raw_text = backend.complete(request);
      break;
    } catch (const Timeout&) {
      if (attempt >= attempts) throw;
    } catch (const BackendUnavailable&) {
      if (attempt >= attempts) throw;
    }
  }

  response.parsed = extract_first_json_object(response.raw_text);
  if (!response.parsed) {
    response.error = "ParseFailure: no JSON object in response";
    return response;
  }
  try {
    std::string why;
    response.valid_schema = conforms(*response.parsed, template_for_schema(request.expected_schema), &why);
    if (!response.valid_schema) response.error = "SchemaViolation: " + why;
  } catch (const std::invalid_argument& e) {
    response.error = e.what();
  }
  return response;
}

PromptAuditLog::PromptAuditLog(const std::filesystem::path& path) : out_(path, std::ios::app) {
  if (!out_) throw IoError("cannot open prompt log " + path.string());
}

void PromptAuditLog::append(const PromptRequest& request, const std::string& response, const std::string& error) {
  json j{{"op_kind", to_string(request.op_kind)},
         {"schema", request.expected_schema},
         {"generation", request.generation},
         {"ordinal", request.ordinal},
         {"prompt", request.rendered_text},
         {"response", response}};
  if (!error.empty()) j["error"] = error;
  std::lock_guard lock(mutex_);
  ++entries_;
  if (out_.is_open()) {
    out_ << j.dump() << '\n';
    out_.flush();
  }
}

// ---------------------------------------------------------------------------
// Decisions

RangeCheck mutation_range_check(const Body& parent, const Body& child, int range_low, int range_high) {
  const auto n = static_cast<int>(diff(parent, child).count());
  return n >= range_low && n <= range_high && n > 0 ? RangeCheck::Within : RangeCheck::Outside;
}

namespace {

struct BodyCheck {
  std::optional<Body> body;
  bool repaired = false;
  std::string reason;
};

BodyCheck gate_body(const json& raw, int grid_size) {
  BodyCheck out;
  Body body;
  try {
    body = body_from_json(raw);
  } catch (const std::exception& e) {
    out.reason = std::string("malformed body: ") + e.what();
    return out;
  }
  if (body.size() != grid_size) {
    out.reason = "body is " + grid_label(body.size()) + ", expected " + grid_label(grid_size);
    return out;
  }
  if (is_valid(body)) {
    out.body = std::move(body);
    return out;
  }
  if (auto fixed = repair(body)) {
    out.body = std::move(*fixed);
    out.repaired = true;
    return out;
  }
  out.reason = "invalid body, not repairable";
  return out;
}

std::string text_or_empty(const json& j, const char* key) {
  return j.contains(key) && j[key].is_string() ? j[key].get<std::string>() : std::string{};
}

}  // namespace

std::vector<SlotOutcome> parse_propose(const BackendResponse& response, const ProposeContext& context) {
  std::vector<SlotOutcome> out;
  out.reserve(context.slots.size());

  std::map<int, const json*> by_slot;
  if (response.parsed && response.valid_schema) {
    for (const auto& d : (*response.parsed)["designs"]) {
      by_slot.emplace(d["slot_index"].get<int>(), &d);  // first design per slot wins
    }
  }

  std::vector<Body> seen = context.history;
  seen.push_back(context.parent);
  for (const auto& slot : context.slots) {
    SlotOutcome o;
    o.slot_index = slot.slot_index;
    o.based_on_skill = slot.skill_id;
    if (!response.valid_schema) {
      o.fallback_reason = response.error.empty() ? "unusable response" : response.error;
      out.push_back(std::move(o));
      continue;
    }
    const auto it = by_slot.find(slot.slot_index);
    if (it == by_slot.end()) {
      o.fallback_reason = "no design for slot";
      out.push_back(std::move(o));
      continue;
    }
    const json& d = *it->second;
    o.reasoning = text_or_empty(d, "reasoning");
    auto gate = gate_body(d["body"], context.grid_size);
    if (!gate.body) {
      o.fallback_reason = gate.reason;
      out.push_back(std::move(o));
      continue;
    }
    if (std::find(seen.begin(), seen.end(), *gate.body) != seen.end()) {
      o.fallback_reason = "child duplicates parent, history or another slot";
      out.push_back(std::move(o));
      continue;
    }
    o.repaired = gate.repaired;
    o.out_of_range =
        mutation_range_check(context.parent, *gate.body, context.range_low, context.range_high) == RangeCheck::Outside;
    if (d.contains("intended_leaf_id") && d["intended_leaf_id"].is_string()) {
      const auto leaf = d["intended_leaf_id"].get<std::string>();
      if (std::find(slot.leaf_ids.begin(), slot.leaf_ids.end(), leaf) != slot.leaf_ids.end()) {
        o.intended_leaf_id = leaf;
      } else {
        o.leaf_id_nulled = true;
      }
    }
    seen.push_back(*gate.body);
    o.child = std::move(gate.body);
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<ColdStartOutcome> parse_cold_start(const BackendResponse& response, int n_designs, int grid_size) {
  std::vector<ColdStartOutcome> out(static_cast<std::size_t>(std::max(0, n_designs)));
  const json* designs = response.valid_schema ? &(*response.parsed)["designs"] : nullptr;
  std::vector<Body> seen;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& o = out[i];
    if (!designs) {
      o.fallback_reason = response.error.empty() ? "unusable response" : response.error;
      continue;
    }
    if (i >= designs->size()) {
      o.fallback_reason = "fewer designs than requested";
      continue;
    }
    auto gate = gate_body((*designs)[i]["body"], grid_size);
    if (!gate.body) {
      o.fallback_reason = gate.reason;
      continue;
    }
    if (std::find(seen.begin(), seen.end(), *gate.body) != seen.end()) {
      o.fallback_reason = "duplicate design";
      continue;
    }
    seen.push_back(*gate.body);
    o.repaired = gate.repaired;
    o.body = std::move(gate.body);
  }
  return out;
}

AttributeOutcome parse_attribute(const BackendResponse& response, std::size_t n_designs,
                                 const std::vector<std::string>& known_skills) {
  AttributeOutcome out;
  out.decisions.resize(n_designs);
  for (std::size_t i = 0; i < n_designs; ++i) out.decisions[i].local_index = i;
  if (!response.valid_schema) {
    out.notes.push_back("attribute dropped: " + response.error);
    return out;
  }
  std::set<std::size_t> decided;
  for (const auto& a : (*response.parsed)["assignments"]) {
    const auto idx = a["local_index"].get<std::int64_t>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= n_designs) {
      out.notes.push_back("ignored assignment for unknown local_index " + std::to_string(idx));
      continue;
    }
    if (!decided.insert(static_cast<std::size_t>(idx)).second) {
      out.notes.push_back("ignored duplicate assignment for local_index " + std::to_string(idx));
      continue;
    }
    auto& d = out.decisions[static_cast<std::size_t>(idx)];
    d.reason = text_or_empty(a, "reason");
    if (a.contains("skill_id") && a["skill_id"].is_string()) {
      const auto id = a["skill_id"].get<std::string>();
      if (std::find(known_skills.begin(), known_skills.end(), id) != known_skills.end()) {
        d.skill_id = id;
      } else {
        out.notes.push_back("local_index " + std::to_string(idx) + " named unknown skill '" + id + "'");
      }
    }
  }
  return out;
}

AddOutcome parse_add(const BackendResponse& response, const std::string& task_name) {
  AddOutcome out;
  if (!response.valid_schema) {
    out.dropped = true;
    out.note = "add dropped: " + response.error;
    return out;
  }
  const auto& d = (*response.parsed)["decision"];
  out.decision.reasoning = d.value("reasoning", json::object());
  if (d["action"] == "no_add") return out;

  const auto& s = d["skill"];
  Skill skill;
  skill.skill_id = s["skill_id"].get<std::string>();
  skill.l1_structure = s["l1"]["structure"].get<std::string>();
  skill.l1_condition = s["l1"]["condition"].get<std::string>();
  if (s.contains("task_family")) {
    for (const auto& t : s["task_family"]) {
      if (t.is_string()) skill.task_family.push_back(t.get<std::string>());
    }
  }
  if (std::find(skill.task_family.begin(), skill.task_family.end(), task_name) == skill.task_family.end()) {
    skill.task_family.push_back(task_name);
  }
  if (contains_coordinates(skill.l1_condition)) {
    out.dropped = true;
    out.note = "add dropped: L1 condition names absolute voxel coordinates";
    return out;
  }
  out.decision.add = true;
  out.decision.inspired_obs_ids = d["inspired_obs_ids"].get<std::vector<std::int64_t>>();
  out.decision.skill = std::move(skill);
  return out;
}

DiagnoseOutcome parse_diagnose(const BackendResponse& response) {
  DiagnoseOutcome out;
  if (!response.valid_schema) {
    out.dropped = true;
    out.note = "diagnose dropped: " + response.error;
    return out;
  }
  const auto& v = *response.parsed;
  for (const auto& a : v["leaf_assignments"]) {
    LeafAssignment la;
    la.obs_id = a["obs_id"].get<std::int64_t>();
    const auto d = a["decision"].get<std::string>();
    if (d == "match_existing") {
      la.kind = LeafAssignment::Kind::MatchExisting;
      la.leaf_id = a["leaf_id"].get<std::string>();
      if (a.contains("description_update") && a["description_update"].is_object()) {
        const auto& u = a["description_update"];
        if (u.contains("mode") && u["mode"].is_string() && u.contains("text") && u["text"].is_string()) {
          DescriptionUpdate du;
          du.mode = u["mode"] == "append" ? DescriptionUpdate::Mode::Append : DescriptionUpdate::Mode::Overwrite;
          du.text = u["text"].get<std::string>();
          la.description_update = std::move(du);
        }
      }
    } else if (d == "new_leaf") {
      la.kind = LeafAssignment::Kind::NewLeaf;
      la.polarity = a["polarity"] == "negative" ? Polarity::Negative : Polarity::Positive;
      la.claim = a["claim"].get<std::string>();
      la.description = a["description"].get<std::string>();
    }
    out.assignments.push_back(std::move(la));
  }
  if (v.contains("standalone_new_leaves")) {
    for (const auto& s : v["standalone_new_leaves"]) {
      StandaloneLeaf sl;
      sl.polarity = s["polarity"] == "negative" ? Polarity::Negative : Polarity::Positive;
      sl.claim = s["claim"].get<std::string>();
      sl.description = s["description"].get<std::string>();
      sl.supporting_obs_ids = s["supporting_obs_ids"].get<std::vector<std::int64_t>>();
      out.standalone.push_back(std::move(sl));
    }
  }
  return out;
}

MergeOutcome parse_merge(const BackendResponse& response) {
  MergeOutcome out;
  if (!response.valid_schema) {
    out.dropped = true;
    out.note = "merge dropped: " + response.error;
    return out;
  }
  for (const auto& c : (*response.parsed)["clusters"]) {
    MergeCluster mc;
    mc.group_label = c["group_label"].get<std::string>();
    mc.skill_ids = c["skill_ids"].get<std::vector<std::string>>();
    mc.reason = text_or_empty(c, "reason");
    out.clusters.push_back(std::move(mc));
  }
  return out;
}

}  // namespace morphoskill
