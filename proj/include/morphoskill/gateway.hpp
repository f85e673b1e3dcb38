#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "morphoskill/prompts.hpp"
#include "morphoskill/skill_library.hpp"
#include "morphoskill/voxel_body.hpp"

namespace morphoskill {

// ---------------------------------------------------------------------------
// Backends

class ProposalBackend {
 public:
  virtual ~ProposalBackend() = default;
  virtual std::string name() const = 0;
  /// Raw completion text. Throws BackendUnavailable or Timeout. Must be safe
  /// to call concurrently for Propose requests.
  virtual std::string complete(const PromptRequest& request) = 0;
  /// Extra attempts after a transport failure.
  virtual int max_retries() const { return 1; }
};

struct RemoteBackendConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model_name;
  double temperature = 1.0;
  std::chrono::milliseconds request_timeout{std::chrono::seconds(120)};
  int max_retries = 1;
  std::optional<int> max_tokens;
  std::optional<std::string> system_prompt;
  std::string api_key_env = "MORPHOSKILL_API_KEY";
};

/// OpenAI-style chat-completion endpoint (POST {base_url}/chat/completions).
class RemoteBackend final : public ProposalBackend {
 public:
  explicit RemoteBackend(RemoteBackendConfig config);
  std::string name() const override { return "remote"; }
  std::string complete(const PromptRequest& request) override;
  int max_retries() const override { return config_.max_retries; }

 private:
  RemoteBackendConfig config_;
};

/// Replays `{op_kind}_{generation}_{ordinal}.txt` fixture files.
class ScriptedBackend final : public ProposalBackend {
 public:
  explicit ScriptedBackend(std::filesystem::path directory);
  std::string name() const override { return "scripted"; }
  std::string complete(const PromptRequest& request) override;

  static std::string fixture_name(const PromptRequest& request);

 private:
  std::filesystem::path directory_;
};

/// Offline backend that synthesizes schema-valid answers from the prompt text
/// alone. Deterministic in (seed, op kind, generation, ordinal, prompt text).
class HeuristicBackend final : public ProposalBackend {
 public:
  explicit HeuristicBackend(std::uint64_t seed = 0) : seed_(seed) {}
  std::string name() const override { return "heuristic"; }
  std::string complete(const PromptRequest& request) override;

 private:
  std::uint64_t seed_;
};

/// "heuristic", "scripted:<dir>", or "remote" (configured by `remote`).
std::unique_ptr<ProposalBackend> make_backend(const std::string& selector, const RemoteBackendConfig& remote,
                                              std::uint64_t seed);

struct BackendResponse {
  std::string raw_text;
  std::optional<nlohmann::json> parsed;  // first JSON object in raw_text
  bool valid_schema = false;
  std::string error;
};

/// Calls the backend with one retry on transport failure, then extracts and
/// schema-checks the first JSON object. Throws BackendUnavailable after the retry.
BackendResponse dispatch(const PromptRequest& request, ProposalBackend& backend);

/// First balanced `{...}` that parses as JSON; surrounding prose is ignored.
std::optional<nlohmann::json> extract_first_json_object(const std::string& text);

/// Structural check of a parsed response against the op kind's schema.
bool conforms(const nlohmann::json& value, PromptTemplate t, std::string* why = nullptr);

/// Append-only JSONL record of every prompt and raw response.
class PromptAuditLog {
 public:
  PromptAuditLog() = default;
  explicit PromptAuditLog(const std::filesystem::path& path);
  void append(const PromptRequest& request, const std::string& response, const std::string& error = {});
  std::size_t entries() const { return entries_; }

 private:
  std::mutex mutex_;
  std::ofstream out_;
  std::size_t entries_ = 0;
};

// ---------------------------------------------------------------------------
// Decisions

enum class RangeCheck { Within, Outside };
RangeCheck mutation_range_check(const Body& parent, const Body& child, int range_low, int range_high);

struct SlotContext {
  int slot_index = 0;
  std::optional<std::string> skill_id;
  std::vector<std::string> leaf_ids;
  std::vector<std::string> leaf_claims;
};

struct ProposeContext {
  int grid_size = 5;
  Body parent;
  std::vector<Body> history;  // earlier children of this parent
  std::vector<SlotContext> slots;
  int range_low = 1;
  int range_high = 3;
};

struct SlotOutcome {
  int slot_index = 0;
  std::optional<Body> child;  // valid body, or nullopt -> GA fallback
  bool repaired = false;
  bool out_of_range = false;
  std::string fallback_reason;
  std::optional<std::string> based_on_skill;
  std::optional<std::string> intended_leaf_id;
  bool leaf_id_nulled = false;
  std::string reasoning;
};

/// Per-slot outcomes for a skill-conditioned Propose response. Every slot in
/// the context yields exactly one outcome; unusable slots carry a fallback reason.
std::vector<SlotOutcome> parse_propose(const BackendResponse& response, const ProposeContext& context);

struct ColdStartOutcome {
  std::optional<Body> body;
  bool repaired = false;
  std::string fallback_reason;
};

/// Exactly `n_designs` outcomes; missing, invalid or duplicate designs carry a fallback reason.
std::vector<ColdStartOutcome> parse_cold_start(const BackendResponse& response, int n_designs, int grid_size);

struct AttributeOutcome {
  std::vector<AttributionDecision> decisions;  // one per design
  std::vector<std::string> notes;
};

AttributeOutcome parse_attribute(const BackendResponse& response, std::size_t n_designs,
                                 const std::vector<std::string>& known_skills);

struct AddOutcome {
  AddDecision decision;  // add=false when dropped
  bool dropped = false;
  std::string note;
};

AddOutcome parse_add(const BackendResponse& response, const std::string& task_name);

struct DiagnoseOutcome {
  std::vector<LeafAssignment> assignments;
  std::vector<StandaloneLeaf> standalone;
  bool dropped = false;
  std::string note;
};

DiagnoseOutcome parse_diagnose(const BackendResponse& response);

struct MergeOutcome {
  std::vector<MergeCluster> clusters;
  bool dropped = false;
  std::string note;
};

MergeOutcome parse_merge(const BackendResponse& response);

}  // namespace morphoskill
