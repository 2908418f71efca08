#pragma once

#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dualkb/kb_store.hpp"

namespace dualkb {

/// A parsed action from the closed grammar:
///   look around | wait | go L | open O | close O | take O | activate O |
///   deactivate O | examine O | read O | focus on O | put O in C |
///   pour O into C
struct Action {
  std::string verb;
  std::vector<std::string> args;

  friend bool operator==(const Action&, const Action&) = default;
};

/// Throws UnparseableAction for anything outside the grammar.
Action parse_action(std::string_view text);
std::string to_text(const Action& action);

struct StepRecord {
  std::string action;
  std::string observation;
  /// Milestones first satisfied by this step.
  std::vector<std::size_t> milestone_hits;

  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct SubGoal {
  std::string name;
  std::vector<StepRecord> steps;
  std::optional<SubGoalUnit> exp_unit;

  friend bool operator==(const SubGoal&, const SubGoal&) = default;
};

struct Trajectory {
  std::string task_id;
  int variation = 0;
  std::string goal;
  std::vector<SubGoal> subgoals;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

std::vector<StepRecord> flatten(const Trajectory& t);
std::vector<std::string> actions_of(const SubGoal& sg);

/// The sub-goal's actions, one per line.
std::string render_actions(const SubGoal& sg);

/// Normalized arguments of every parseable action in the sub-goal.
std::set<EntityId> interacted_objects(const SubGoal& sg);

/// Sub-goal names are the text of the segment's final action.
std::string subgoal_name(const std::vector<StepRecord>& steps);

}  // namespace dualkb
