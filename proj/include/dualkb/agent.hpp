#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dualkb/chat.hpp"
#include "dualkb/distiller.hpp"
#include "dualkb/kb_store.hpp"
#include "dualkb/microworld.hpp"
#include "dualkb/retrieval.hpp"
#include "dualkb/trajectory.hpp"

namespace dualkb {

struct Plan {
  std::vector<std::string> steps;
  std::size_t current_index = 0;

  bool finished() const noexcept { return current_index >= steps.size(); }
  /// The current step, or `fallback` once every step is done.
  const std::string& current_or(const std::string& fallback) const {
    return finished() ? fallback : steps[current_index];
  }

  friend bool operator==(const Plan&, const Plan&) = default;
};

enum class VerdictStatus { OnTrack, StepDone, Deviated, TaskDone };

std::string_view to_string(VerdictStatus s);
VerdictStatus verdict_from_string(std::string_view text);

struct EvalVerdict {
  VerdictStatus status = VerdictStatus::OnTrack;
  std::string rationale;

  friend bool operator==(const EvalVerdict&, const EvalVerdict&) = default;
};

enum class RetrievalKind { Env, Exp };

struct EpisodeStarted {
  std::string goal;
  std::string observation;
  std::vector<Triple> facts;
  friend bool operator==(const EpisodeStarted&, const EpisodeStarted&) = default;
};
struct PlanSet {
  Plan plan;
  friend bool operator==(const PlanSet&, const PlanSet&) = default;
};
struct ActionTaken {
  std::string action;
  std::string observation;
  std::vector<Triple> facts;
  std::vector<std::size_t> milestone_hits;
  bool refused = false;
  friend bool operator==(const ActionTaken&, const ActionTaken&) = default;
};
struct RetrievalMade {
  RetrievalKind kind = RetrievalKind::Env;
  std::string query;
  std::vector<std::int64_t> doc_ids;
  bool reranker_fallback = false;
  friend bool operator==(const RetrievalMade&, const RetrievalMade&) = default;
};
struct VerdictMade {
  EvalVerdict verdict;
  friend bool operator==(const VerdictMade&, const VerdictMade&) = default;
};

using MemoryPayload = std::variant<EpisodeStarted, PlanSet, ActionTaken, RetrievalMade, VerdictMade>;

struct MemoryEvent {
  /// Environment step counter when the event was recorded.
  std::uint64_t step = 0;
  MemoryPayload payload;
  friend bool operator==(const MemoryEvent&, const MemoryEvent&) = default;
};

/// Append-only event log. Steps never decrease.
class MemoryLog {
 public:
  void append(std::uint64_t step, MemoryPayload payload);

  const std::vector<MemoryEvent>& events() const noexcept { return events_; }
  std::size_t size() const noexcept { return events_.size(); }

  template <class T>
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : events_) n += std::holds_alternative<T>(e.payload) ? 1 : 0;
    return n;
  }

  friend bool operator==(const MemoryLog&, const MemoryLog&) = default;

 private:
  std::vector<MemoryEvent> events_;
};

std::string render_event(const MemoryEvent& e);

/// What a decision model sees: the latest events, the plan, and what the
/// environment reports about the episode.
struct MemoryView {
  std::string goal;
  Plan plan;
  std::vector<MemoryEvent> recent;
  std::vector<std::string> admissible_actions;
  double score = 0;
  bool complete = false;
};

class DecisionModel {
 public:
  virtual ~DecisionModel() = default;
  virtual Plan propose_plan(const MemoryView& view, std::span<const ScoredDoc> retrieved) = 0;
  virtual std::string propose_action(const std::string& plan_step, const MemoryView& view,
                                     std::span<const ScoredDoc> retrieved) = 0;
  virtual EvalVerdict evaluate(const MemoryView& view, const ActionResult& last) = 0;
};

/// Replays a fixed action script. The cursor moves only when the scripted
/// action was the one performed and the world accepted it.
class ScriptedOracle : public DecisionModel {
 public:
  ScriptedOracle(std::vector<std::string> script, std::vector<std::string> plan_steps);
  /// Script and plan from the task's expert trajectory.
  static ScriptedOracle for_task(const TaskCatalog& catalog, std::string_view task_id, int variation);

  Plan propose_plan(const MemoryView& view, std::span<const ScoredDoc> retrieved) override;
  std::string propose_action(const std::string& plan_step, const MemoryView& view,
                             std::span<const ScoredDoc> retrieved) override;
  EvalVerdict evaluate(const MemoryView& view, const ActionResult& last) override;

  std::size_t cursor() const noexcept { return cursor_; }
  const std::vector<std::string>& script() const noexcept { return script_; }
  const std::vector<std::string>& plan_steps() const noexcept { return plan_steps_; }

 protected:
  /// Next scripted action, or "look around" once the script is exhausted.
  std::string scripted_action() const;

  std::vector<std::string> script_;
  std::vector<std::string> plan_steps_;
  std::size_t cursor_ = 0;
  std::string last_proposed_;
};

/// The oracle, confused with probability p at each step. A confused model
/// still acts correctly when a retrieved document shows the scripted action
/// on a line of its own; otherwise it picks a random look/examine/read/wait
/// action from the admissible set.
class NoisyScripted final : public ScriptedOracle {
 public:
  NoisyScripted(std::vector<std::string> script, std::vector<std::string> plan_steps, double p, std::uint64_t seed);
  static NoisyScripted for_task(const TaskCatalog& catalog, std::string_view task_id, int variation, double p,
                                std::uint64_t seed);

  std::string propose_action(const std::string& plan_step, const MemoryView& view,
                             std::span<const ScoredDoc> retrieved) override;

  std::size_t confusions() const noexcept { return confusions_; }
  std::size_t rescues() const noexcept { return rescues_; }

 private:
  double p_;
  std::mt19937_64 rng_;
  std::size_t confusions_ = 0;
  std::size_t rescues_ = 0;
};

/// True if `action` appears as a whole line of the document text.
bool document_supports(const Document& doc, std::string_view action);

/// Decision model behind a chat transport. Replies follow line grammars:
///   PLAN:\n- step\n- step
///   ACTION: <action>
///   VERDICT: on_track|step_done|deviated|task_done\nRATIONALE: <text>
class RemoteChat final : public DecisionModel {
 public:
  explicit RemoteChat(ChatTransport& transport) : transport_(&transport) {}

  Plan propose_plan(const MemoryView& view, std::span<const ScoredDoc> retrieved) override;
  std::string propose_action(const std::string& plan_step, const MemoryView& view,
                             std::span<const ScoredDoc> retrieved) override;
  EvalVerdict evaluate(const MemoryView& view, const ActionResult& last) override;

 private:
  std::string ask(std::vector<ChatMessage> messages);
  ChatTransport* transport_;
};

Plan parse_plan_reply(const std::string& text);
std::string parse_action_reply(const std::string& text);
EvalVerdict parse_verdict_reply(const std::string& text);

struct AgentConfig {
  bool use_kb = true;
  /// Feed environmental results into the experiential query.
  bool joint_knowledge = true;
  RetrievalConfig retrieval;
  std::size_t memory_window = 20;
};

struct KbDeltas {
  std::size_t inserted = 0;
  std::size_t superseded = 0;
  std::size_t unchanged = 0;
  friend bool operator==(const KbDeltas&, const KbDeltas&) = default;
};

struct EpisodeResult {
  double score = 0;
  std::size_t steps_used = 0;
  bool complete = false;
  MemoryLog memory;
  Trajectory trajectory;
  KbDeltas kb_deltas;
  /// Set when the decision model or environment aborted the episode.
  std::optional<ErrorKind> error;
  std::string error_message;

  friend bool operator==(const EpisodeResult&, const EpisodeResult&) = default;
};

/// The planner/actuator/evaluator loop. `env` must be freshly reset and
/// `reset_result` must be what that reset returned; its facts are ingested
/// first. `model` may be null when cfg.use_kb is false.
EpisodeResult run_episode(Simulator& env, const ActionResult& reset_result, EnvKnowledgeBase& env_kb,
                          const ExpKnowledgeBase& exp_kb, DecisionModel& dm, const TextEncoder* model,
                          const AgentConfig& cfg, std::size_t budget);

/// Environmental KB obtained by replaying every fact recorded in the log.
EnvKnowledgeBase replay_memory(const MemoryLog& log, const RelationRegistry& registry);

/// Decomposes and distills the episode into self-generated units appended to
/// `exp_kb`. Episodes with score 0 are skipped with a warning. Returns the
/// number of units added.
std::size_t ingest_self_experience(const EpisodeResult& result, ExpKnowledgeBase& exp_kb,
                                   const DistillerBackend& backend);

}  // namespace dualkb
