#pragma once

#include <set>
#include <string>
#include <variant>
#include <vector>

#include "dualkb/kb_store.hpp"
#include "dualkb/microworld.hpp"
#include "dualkb/trajectory.hpp"

namespace dualkb::testing {

inline StepRecord step_of(std::string action, std::vector<std::size_t> hits = {}) {
  return StepRecord{std::move(action), "", std::move(hits)};
}

/// find-focus variation 0 written out by hand: walk to the workshop, open
/// the drawer, then inspect and focus on the seed.
inline Trajectory hand_built_find_focus() {
  Trajectory t;
  t.task_id = "find-focus";
  t.variation = 0;
  t.goal = "Find the seed and focus on it.";
  t.subgoals.push_back(SubGoal{"go workshop", {step_of("go workshop", {0})}, std::nullopt});
  t.subgoals.push_back(SubGoal{"open drawer", {step_of("open drawer", {1})}, std::nullopt});
  t.subgoals.push_back(SubGoal{"focus on seed", {step_of("examine seed"), step_of("focus on seed", {2})}, std::nullopt});
  return t;
}

/// Independent replay: feed every step's facts straight into a store and
/// copy it out before each sub-goal.
inline std::vector<std::vector<Triple>> replay_oracle(const TaskCatalog& catalog, const Trajectory& t) {
  std::vector<std::vector<Triple>> out;
  auto [state, first] = reset(catalog, t.task_id, t.variation);
  const auto spec = catalog.instantiate(t.task_id, t.variation).spec;
  EnvKnowledgeBase kb(microworld_relations());
  kb.ingest(first.facts, state.step);
  for (const auto& sg : t.subgoals) {
    std::vector<Triple> snap;
    for (const auto& [key, triple] : kb.entries()) snap.push_back(triple);
    out.push_back(std::move(snap));
    for (const auto& s : sg.steps) {
      auto [next, r] = step(spec, state, s.action);
      state = next;
      kb.ingest(r.facts, state.step);
    }
  }
  return out;
}

/// Brute-force "related": the object is the subject or the entity value.
inline bool related_oracle(const Triple& t, const std::set<EntityId>& objects) {
  for (const auto& o : objects) {
    if (t.subject.name() == o.name()) return true;
    if (const auto* e = std::get_if<EntityId>(&t.value); e && e->name() == o.name()) return true;
  }
  return false;
}

}  // namespace dualkb::testing
