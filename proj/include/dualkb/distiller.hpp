#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dualkb/chat.hpp"
#include "dualkb/error.hpp"
#include "dualkb/kb_store.hpp"
#include "dualkb/trajectory.hpp"

namespace dualkb {

/// Deterministic templates; output is a pure function of the inputs.
struct RuleBased {
  friend bool operator==(const RuleBased&, const RuleBased&) = default;
};

/// Asks a chat model and parses its reply with the line grammars below.
struct DecisionModelBacked {
  ChatTransport* transport = nullptr;
};

using DistillerBackend = std::variant<RuleBased, DecisionModelBacked>;

/// A model reply that does not follow the expected grammar. The reply text is
/// kept for inspection.
class MalformedResponse : public Error {
 public:
  MalformedResponse(const std::string& message, std::string response)
      : Error(ErrorKind::MalformedModelResponse, message), response_(std::move(response)) {}

  const std::string& response() const noexcept { return response_; }

 private:
  std::string response_;
};

/// Splits a step sequence into contiguous sub-goals.
///
/// RuleBased ends a segment after every step that completes a milestone and
/// keeps each run of consecutive "go" actions in a segment of its own. Names
/// are the segment's final action. Transport failures surface as
/// BackendError; there is no silent fallback to the rules.
std::vector<SubGoal> decompose(std::span<const StepRecord> raw, const DistillerBackend& backend);

/// Builds the experiential unit for one sub-goal against the environmental
/// triples known before it started.
SubGoalUnit extract_unit(const SubGoal& sg, std::span<const Triple> env_context, const DistillerBackend& backend,
                         Provenance provenance = Provenance::Expert, const std::string& source_task_id = {});

/// The prompts sent by the model-backed path. They are hand-written
/// placeholders, not tuned prompts.
std::vector<ChatMessage> segmentation_prompt(std::span<const StepRecord> raw);
std::vector<ChatMessage> extraction_prompt(const SubGoal& sg, std::span<const Triple> env_context);

/// Reply grammar for segmentation, 1-based inclusive step ranges:
///   SEGMENTS:
///   - 1-3 | go to the kitchen
///   - 4-4 | take the pot
std::vector<SubGoal> parse_segmentation(const std::string& response, std::span<const StepRecord> raw);

/// Reply grammar for extraction; each block may be empty:
///   ENTITIES:
///   - pot
///   KNOWLEDGE:
///   - pot | located in | table
///   REFLECTIONS:
///   - The pot had to be picked up before it could be heated.
/// Knowledge lines must equal the rendering of a context triple.
SubGoalUnit parse_extraction(const std::string& response, const SubGoal& sg, std::span<const Triple> env_context);

}  // namespace dualkb
