#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace morphoskill {

enum class OpKind { Propose, Attribute, Add, Diagnose, Merge };

std::string to_string(OpKind k);    // "propose", "attribute", ...
OpKind op_kind_from_string(std::string_view s);

enum class PromptTemplate { ProposeColdStart, ProposeMutation, Attribute, Add, Diagnose, Merge };

OpKind op_kind_of(PromptTemplate t);
std::string schema_id(PromptTemplate t);
/// Inverse of schema_id. Throws std::invalid_argument.
PromptTemplate template_for_schema(std::string_view schema);

using Substitutions = std::map<std::string, std::string>;

struct PromptRequest {
  OpKind op_kind = OpKind::Propose;
  std::string rendered_text;
  std::string expected_schema;
  int generation = 0;
  int ordinal = 0;  // call index within (op_kind, generation); keys scripted fixtures
  Substitutions metadata;
};

/// Shared blocks.
std::string_view voxel_legend();
std::string_view body_requirements_template();

/// Raw template text with `<BODY_REQUIREMENTS>` still unexpanded.
std::string_view template_text(PromptTemplate t);

/// Expands `<BODY_REQUIREMENTS>`, then substitutes `{name}` and `{name:.3f}`
/// fields in one pass (substituted text is not rescanned). Throws
/// MissingPlaceholder listing every field absent from `subs`.
PromptRequest render_prompt(PromptTemplate t, const Substitutions& subs, int generation = 0, int ordinal = 0);

/// Field names referenced by a template, in first-appearance order.
std::vector<std::string> placeholders(PromptTemplate t);

// Transfer-context blocks. Each returns the fully substituted block text.
struct TransferContext {
  std::string current_env;
  int current_grid = 0;
  int source_grid = 0;
  std::string source_exp;
  bool with_reference = false;
};

std::string transfer_context_block(const TransferContext& ctx);
std::string elite_addendum(const TransferContext& ctx);

/// "5x5" style grid label.
std::string grid_label(int n);

}  // namespace morphoskill
