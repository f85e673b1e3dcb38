#pragma once

#include <stdexcept>
#include <string>

namespace morphoskill {

/// Base for every error raised by the library. `kind()` is a stable tag used in logs.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define MORPHOSKILL_ERROR(Name)                                      \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  }

// voxel body
MORPHOSKILL_ERROR(SizeMismatch);
MORPHOSKILL_ERROR(MutationExhausted);
MORPHOSKILL_ERROR(MalformedBody);

// skill library
MORPHOSKILL_ERROR(EmptyCandidates);
MORPHOSKILL_ERROR(UnknownSkillId);
MORPHOSKILL_ERROR(DuplicateDecision);
MORPHOSKILL_ERROR(DuplicateSkillId);
MORPHOSKILL_ERROR(MalformedSkillId);
MORPHOSKILL_ERROR(UnknownLeafId);
MORPHOSKILL_ERROR(UnknownObsId);
MORPHOSKILL_ERROR(SingletonCluster);
MORPHOSKILL_ERROR(OverlappingClusters);
MORPHOSKILL_ERROR(SchemaViolation);

// llm gateway
MORPHOSKILL_ERROR(MissingPlaceholder);
MORPHOSKILL_ERROR(BackendUnavailable);
MORPHOSKILL_ERROR(Timeout);
MORPHOSKILL_ERROR(ParseFailure);

// evaluation
MORPHOSKILL_ERROR(EvaluatorUnavailable);
MORPHOSKILL_ERROR(ProtocolViolation);
MORPHOSKILL_ERROR(InvalidBody);

// orchestration / metrics
MORPHOSKILL_ERROR(ConfigInvalid);
MORPHOSKILL_ERROR(SourceLibraryMissing);
MORPHOSKILL_ERROR(BudgetExhausted);
MORPHOSKILL_ERROR(EmptyCurve);
MORPHOSKILL_ERROR(IoError);

#undef MORPHOSKILL_ERROR

}  // namespace morphoskill
