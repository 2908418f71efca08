#include "dualkb/agent.hpp"

#include <algorithm>
#include <sstream>

#include "dualkb/dataset_builder.hpp"
#include "dualkb/document.hpp"
#include "dualkb/error.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> nonempty_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

bool non_mutating(const std::string& action) {
  const std::string verb = parse_action(action).verb;
  return verb == "look around" || verb == "wait" || verb == "examine" || verb == "read";
}

MemoryView make_view(const std::string& goal, const Plan& plan, const MemoryLog& log, const Simulator& env,
                     std::size_t window) {
  MemoryView v;
  v.goal = goal;
  v.plan = plan;
  const auto& events = log.events();
  const std::size_t from = events.size() > window ? events.size() - window : 0;
  v.recent.assign(events.begin() + static_cast<std::ptrdiff_t>(from), events.end());
  v.admissible_actions = admissible_actions(env.state());
  v.score = env.score();
  v.complete = env.complete();
  return v;
}

std::string render_view(const MemoryView& view) {
  std::string out = "Task: " + view.goal + "\nPlan:\n";
  for (std::size_t i = 0; i < view.plan.steps.size(); ++i) {
    out += (i == view.plan.current_index ? "> " : "- ") + view.plan.steps[i] + "\n";
  }
  out += "Recent events:\n";
  for (const auto& e : view.recent) out += render_event(e) + "\n";
  out += "Admissible actions: " + join(view.admissible_actions, "; ") + "\n";
  return out;
}

std::string render_docs(std::span<const ScoredDoc> docs) {
  std::string out = "Retrieved knowledge:\n";
  for (const auto& d : docs) out += "---\n" + d.doc.text + "\n";
  return out;
}

void ingest_counted(EnvKnowledgeBase& kb, const std::vector<Triple>& facts, std::uint64_t step, KbDeltas& deltas) {
  const IngestReport r = kb.ingest(facts, step);
  deltas.inserted += r.inserted;
  deltas.superseded += r.superseded;
  deltas.unchanged += r.unchanged;
}

}  // namespace

// ------------------------------------------------------------------- types

std::string_view to_string(VerdictStatus s) {
  switch (s) {
    case VerdictStatus::OnTrack: return "on_track";
    case VerdictStatus::StepDone: return "step_done";
    case VerdictStatus::Deviated: return "deviated";
    case VerdictStatus::TaskDone: return "task_done";
  }
  return "on_track";
}

VerdictStatus verdict_from_string(std::string_view text) {
  for (auto s : {VerdictStatus::OnTrack, VerdictStatus::StepDone, VerdictStatus::Deviated, VerdictStatus::TaskDone}) {
    if (to_string(s) == text) return s;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown verdict '" + std::string(text) + "'");
}

void MemoryLog::append(std::uint64_t step, MemoryPayload payload) {
  if (!events_.empty() && step < events_.back().step) {
    throw Error(ErrorKind::InvalidArgument, "memory events must not go back in time");
  }
  events_.push_back(MemoryEvent{step, std::move(payload)});
}

std::string render_event(const MemoryEvent& e) {
  const std::string prefix = "[" + std::to_string(e.step) + "] ";
  return std::visit(
      [&](const auto& p) -> std::string {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, EpisodeStarted>) {
          return prefix + "start: " + p.observation;
        } else if constexpr (std::is_same_v<T, PlanSet>) {
          return prefix + "plan: " + join(p.plan.steps, "; ");
        } else if constexpr (std::is_same_v<T, ActionTaken>) {
          return prefix + "action: " + p.action + " -> " + p.observation;
        } else if constexpr (std::is_same_v<T, RetrievalMade>) {
          std::vector<std::string> ids;
          for (auto id : p.doc_ids) ids.push_back(std::to_string(id));
          return prefix + (p.kind == RetrievalKind::Env ? "env" : "exp") + " retrieval: " + join(ids, ",");
        } else {
          return prefix + "verdict: " + std::string(to_string(p.verdict.status)) + " " + p.verdict.rationale;
        }
      },
      e.payload);
}

bool document_supports(const Document& doc, std::string_view action) {
  const std::string wanted = normalize_name(action);
  for (const auto& line : nonempty_lines(doc.text)) {
    if (normalize_name(line) == wanted) return true;
  }
  return false;
}

// ------------------------------------------------------------------ oracle

ScriptedOracle::ScriptedOracle(std::vector<std::string> script, std::vector<std::string> plan_steps)
    : script_(std::move(script)), plan_steps_(std::move(plan_steps)) {}

ScriptedOracle ScriptedOracle::for_task(const TaskCatalog& catalog, std::string_view task_id, int variation) {
  const Trajectory t = expert_trajectory(catalog, task_id, variation);
  std::vector<std::string> names;
  for (const auto& sg : t.subgoals) names.push_back(sg.name);
  return ScriptedOracle(catalog.instantiate(task_id, variation).expert_script, std::move(names));
}

std::string ScriptedOracle::scripted_action() const {
  return cursor_ < script_.size() ? script_[cursor_] : std::string("look around");
}

Plan ScriptedOracle::propose_plan(const MemoryView& view, std::span<const ScoredDoc>) {
  Plan p{plan_steps_, 0};
  // Resume after the sub-goals already achieved.
  std::size_t done = 0;
  for (const auto& e : view.recent) {
    if (const auto* v = std::get_if<VerdictMade>(&e.payload); v && v->verdict.status == VerdictStatus::StepDone) ++done;
  }
  p.current_index = std::max(view.plan.current_index, std::min(done, p.steps.size()));
  p.current_index = std::min(p.current_index, p.steps.size());
  return p;
}

std::string ScriptedOracle::propose_action(const std::string&, const MemoryView&, std::span<const ScoredDoc>) {
  last_proposed_ = scripted_action();
  return last_proposed_;
}

EvalVerdict ScriptedOracle::evaluate(const MemoryView& view, const ActionResult& last) {
  if (!last.refused && cursor_ < script_.size() && normalize_name(last_proposed_) == normalize_name(script_[cursor_])) {
    ++cursor_;
  }
  if (view.complete) return {VerdictStatus::TaskDone, "all milestones reached"};
  if (last.refused) return {VerdictStatus::Deviated, "the last action was refused"};
  if (!last.milestone_hits.empty()) return {VerdictStatus::StepDone, "a milestone was reached"};
  return {VerdictStatus::OnTrack, ""};
}

NoisyScripted::NoisyScripted(std::vector<std::string> script, std::vector<std::string> plan_steps, double p,
                             std::uint64_t seed)
    : ScriptedOracle(std::move(script), std::move(plan_steps)), p_(p), rng_(seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::InvalidArgument, "noise probability must lie in [0, 1]");
}

NoisyScripted NoisyScripted::for_task(const TaskCatalog& catalog, std::string_view task_id, int variation, double p,
                                      std::uint64_t seed) {
  ScriptedOracle o = ScriptedOracle::for_task(catalog, task_id, variation);
  return NoisyScripted(o.script(), o.plan_steps(), p, seed);
}

std::string NoisyScripted::propose_action(const std::string&, const MemoryView& view,
                                          std::span<const ScoredDoc> retrieved) {
  const std::string wanted = scripted_action();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  last_proposed_ = wanted;
  if (coin(rng_) >= p_) return last_proposed_;
  ++confusions_;
  const bool supported = std::any_of(retrieved.begin(), retrieved.end(),
                                     [&](const ScoredDoc& d) { return document_supports(d.doc, wanted); });
  if (supported) {
    ++rescues_;
    return last_proposed_;
  }
  std::vector<std::string> idle;
  for (const auto& a : view.admissible_actions) {
    if (non_mutating(a)) idle.push_back(a);
  }
  if (idle.empty()) return last_proposed_;
  std::uniform_int_distribution<std::size_t> pick(0, idle.size() - 1);
  last_proposed_ = idle[pick(rng_)];
  return last_proposed_;
}

// ------------------------------------------------------------------ remote

Plan parse_plan_reply(const std::string& text) {
  const auto lines = nonempty_lines(text);
  if (lines.empty() || lines[0] != "PLAN:") throw Error(ErrorKind::MalformedModelResponse, "expected 'PLAN:'");
  Plan p;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].rfind("- ", 0) != 0) throw Error(ErrorKind::MalformedModelResponse, "bad plan line '" + lines[i] + "'");
    p.steps.push_back(trim(std::string_view(lines[i]).substr(2)));
  }
  if (p.steps.empty()) throw Error(ErrorKind::MalformedModelResponse, "empty plan");
  return p;
}

std::string parse_action_reply(const std::string& text) {
  for (const auto& line : nonempty_lines(text)) {
    if (line.rfind("ACTION:", 0) == 0) {
      std::string action = trim(std::string_view(line).substr(7));
      if (action.empty()) break;
      return action;
    }
  }
  throw Error(ErrorKind::MalformedModelResponse, "expected 'ACTION: <action>'");
}

EvalVerdict parse_verdict_reply(const std::string& text) {
  EvalVerdict v;
  bool found = false;
  for (const auto& line : nonempty_lines(text)) {
    if (line.rfind("VERDICT:", 0) == 0) {
      try {
        v.status = verdict_from_string(trim(std::string_view(line).substr(8)));
      } catch (const Error& e) {
        throw Error(ErrorKind::MalformedModelResponse, e.what());
      }
      found = true;
    } else if (line.rfind("RATIONALE:", 0) == 0) {
      v.rationale = trim(std::string_view(line).substr(10));
    }
  }
  if (!found) throw Error(ErrorKind::MalformedModelResponse, "expected 'VERDICT: <status>'");
  return v;
}

std::string RemoteChat::ask(std::vector<ChatMessage> messages) { return transport_->complete(messages); }

Plan RemoteChat::propose_plan(const MemoryView& view, std::span<const ScoredDoc> retrieved) {
  return parse_plan_reply(ask({
      {"system",
       "You plan tasks in a text world. Reply with 'PLAN:' and then one '- <sub-goal>' line per step. Write "
       "nothing else."},
      {"user", render_view(view) + render_docs(retrieved)},
  }));
}

std::string RemoteChat::propose_action(const std::string& plan_step, const MemoryView& view,
                                       std::span<const ScoredDoc> retrieved) {
  return parse_action_reply(ask({
      {"system",
       "You act in a text world. Choose one of the admissible actions for the current plan step. Reply with the "
       "single line 'ACTION: <action>'."},
      {"user", "Current step: " + plan_step + "\n" + render_view(view) + render_docs(retrieved)},
  }));
}

EvalVerdict RemoteChat::evaluate(const MemoryView& view, const ActionResult& last) {
  return parse_verdict_reply(ask({
      {"system",
       "You judge progress in a text world. Reply with 'VERDICT: on_track', 'VERDICT: step_done', 'VERDICT: "
       "deviated' or 'VERDICT: task_done', then 'RATIONALE: <one sentence>'."},
      {"user", render_view(view) + "Last observation: " + last.observation + "\nScore: " +
                   std::to_string(static_cast<int>(view.score)) + "\n"},
  }));
}

// ------------------------------------------------------------------- loop

EpisodeResult run_episode(Simulator& env, const ActionResult& reset_result, EnvKnowledgeBase& env_kb,
                          const ExpKnowledgeBase& exp_kb, DecisionModel& dm, const TextEncoder* model,
                          const AgentConfig& cfg, std::size_t budget) {
  if (budget < 1) throw Error(ErrorKind::InvalidArgument, "budget must be >= 1");
  if (cfg.use_kb && !model) throw Error(ErrorKind::InvalidArgument, "retrieval needs an embedding model");
  cfg.retrieval.validate();

  EpisodeResult result;
  const TaskSpec& task = env.task();
  result.trajectory.task_id = task.id;
  result.trajectory.variation = env.state().variation;
  result.trajectory.goal = task.goal;

  MemoryLog& memory = result.memory;
  memory.append(env.state().step, EpisodeStarted{task.goal, reset_result.observation, reset_result.facts});
  ingest_counted(env_kb, reset_result.facts, env.state().step, result.kb_deltas);

  const TokenF1Scorer reranker;
  std::optional<RetrievalIndex> exp_index;
  if (cfg.use_kb && !exp_kb.empty()) exp_index.emplace(exp_corpus(exp_kb), *model);

  auto record = [&](RetrievalKind kind, const QueryBundle& bundle, const RetrievalResult& r) {
    RetrievalMade ev{kind, query_text(bundle), {}, r.reranker_fallback};
    for (const auto& d : r.docs) ev.doc_ids.push_back(d.doc.id);
    memory.append(env.state().step, std::move(ev));
  };

  auto fail = [&](ErrorKind kind, const std::string& message) {
    result.error = kind;
    result.error_message = message;
  };

  Plan plan;
  std::vector<StepRecord> segment;
  auto finish = [&] {
    if (!segment.empty()) result.trajectory.subgoals.push_back(SubGoal{subgoal_name(segment), segment, std::nullopt});
    segment.clear();
    result.score = env.score();
    result.complete = env.complete();
    return result;
  };

  try {
    std::vector<ScoredDoc> plan_docs;
    if (exp_index) {
      const QueryBundle bundle{task.goal, "", {}};
      const RetrievalResult r = retrieve(*exp_index, bundle, cfg.retrieval, reranker);
      record(RetrievalKind::Exp, bundle, r);
      plan_docs = r.docs;
    }
    plan = dm.propose_plan(make_view(task.goal, plan, memory, env, cfg.memory_window), plan_docs);
  } catch (const Error& e) {
    fail(ErrorKind::DecisionModelError, e.what());
    return finish();
  }
  memory.append(env.state().step, PlanSet{plan});

  while (result.steps_used < budget) {
    const std::string& step_text = plan.current_or(task.goal);
    std::vector<ScoredDoc> docs;
    if (cfg.use_kb) {
      QueryBundle env_bundle{task.goal, step_text, {}};
      std::vector<Document> env_docs;
      if (!env_kb.empty()) {
        const RetrievalIndex env_index(env_corpus(env_kb), *model);
        const RetrievalResult r = retrieve(env_index, env_bundle, cfg.retrieval, reranker);
        record(RetrievalKind::Env, env_bundle, r);
        for (const auto& d : r.docs) {
          docs.push_back(d);
          env_docs.push_back(d.doc);
        }
      }
      if (exp_index) {
        QueryBundle exp_bundle{task.goal, step_text, cfg.joint_knowledge ? env_docs : std::vector<Document>{}};
        const RetrievalResult r = retrieve(*exp_index, exp_bundle, cfg.retrieval, reranker);
        record(RetrievalKind::Exp, exp_bundle, r);
        docs.insert(docs.end(), r.docs.begin(), r.docs.end());
      }
    }

    std::string action;
    try {
      action = dm.propose_action(step_text, make_view(task.goal, plan, memory, env, cfg.memory_window), docs);
    } catch (const Error& e) {
      fail(ErrorKind::DecisionModelError, e.what());
      return finish();
    }

    ActionResult r;
    try {
      r = env.step(action);
    } catch (const Error& e) {
      fail(ErrorKind::EnvError, e.what());
      return finish();
    }
    ++result.steps_used;
    memory.append(env.state().step, ActionTaken{normalize_name(action), r.observation, r.facts, r.milestone_hits,
                                                r.refused});
    ingest_counted(env_kb, r.facts, env.state().step, result.kb_deltas);
    if (!r.refused) {
      segment.push_back(StepRecord{normalize_name(action), r.observation, r.milestone_hits});
      if (!r.milestone_hits.empty()) {
        result.trajectory.subgoals.push_back(SubGoal{subgoal_name(segment), segment, std::nullopt});
        segment.clear();
      }
    }

    EvalVerdict verdict;
    try {
      verdict = dm.evaluate(make_view(task.goal, plan, memory, env, cfg.memory_window), r);
    } catch (const Error& e) {
      fail(ErrorKind::DecisionModelError, e.what());
      return finish();
    }
    if (verdict.status == VerdictStatus::TaskDone && !env.complete()) {
      verdict = {VerdictStatus::OnTrack, "task_done rejected: the environment does not report completion"};
    }
    memory.append(env.state().step, VerdictMade{verdict});

    if (verdict.status == VerdictStatus::TaskDone) break;
    if (verdict.status == VerdictStatus::StepDone && !plan.finished()) ++plan.current_index;
    if (verdict.status == VerdictStatus::Deviated) {
      try {
        plan = dm.propose_plan(make_view(task.goal, plan, memory, env, cfg.memory_window), {});
      } catch (const Error& e) {
        fail(ErrorKind::DecisionModelError, e.what());
        return finish();
      }
      memory.append(env.state().step, PlanSet{plan});
    }
    if (env.state().terminal) break;
  }
  return finish();
}

EnvKnowledgeBase replay_memory(const MemoryLog& log, const RelationRegistry& registry) {
  EnvKnowledgeBase kb(registry);
  for (const auto& e : log.events()) {
    if (const auto* s = std::get_if<EpisodeStarted>(&e.payload)) kb.ingest(s->facts, e.step);
    if (const auto* a = std::get_if<ActionTaken>(&e.payload)) kb.ingest(a->facts, e.step);
  }
  return kb;
}

std::size_t ingest_self_experience(const EpisodeResult& result, ExpKnowledgeBase& exp_kb,
                                   const DistillerBackend& backend) {
  if (result.score <= 0.0) {
    log_warning("episode " + result.trajectory.task_id + ":" + std::to_string(result.trajectory.variation) +
                " scored 0; no self-experience stored");
    return 0;
  }
  const std::vector<StepRecord> steps = flatten(result.trajectory);
  if (steps.empty()) return 0;

  // Environmental knowledge before each accepted action, rebuilt from the log.
  std::vector<std::vector<Triple>> before;
  EnvKnowledgeBase kb(microworld_relations());
  for (const auto& e : result.memory.events()) {
    if (const auto* s = std::get_if<EpisodeStarted>(&e.payload)) kb.ingest(s->facts, e.step);
    if (const auto* a = std::get_if<ActionTaken>(&e.payload)) {
      if (!a->refused) before.push_back(kb.triples());
      kb.ingest(a->facts, e.step);
    }
  }
  if (before.size() != steps.size()) {
    throw Error(ErrorKind::InvalidArgument, "episode trajectory does not match its memory log");
  }

  std::vector<SubGoalUnit> units;
  std::size_t offset = 0;
  for (const auto& sg : decompose(steps, backend)) {
    units.push_back(extract_unit(sg, before[offset], backend, Provenance::SelfGenerated, result.trajectory.task_id));
    offset += sg.steps.size();
  }
  for (auto& u : units) exp_kb.store(std::move(u));
  return units.size();
}

}  // namespace dualkb
