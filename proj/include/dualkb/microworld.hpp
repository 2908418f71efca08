#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dualkb/kb_store.hpp"
#include "dualkb/trajectory.hpp"

namespace dualkb {

inline constexpr std::string_view kAgent = "agent";

struct Location {
  std::string name;
  std::vector<std::string> exits;

  friend bool operator==(const Location&, const Location&) = default;
};

struct WorldObject {
  std::string name;
  /// A location name, a container object name, or "agent" when held.
  std::string parent;
  bool portable = false;
  bool container = false;
  bool openable = false;
  bool open = true;
  bool device = false;
  bool active = false;
  bool heat_source = false;
  bool liquid = false;
  bool thermometer = false;
  double temperature = 20.0;
  std::string state_of_matter;  // liquids only: "liquid" or "gas"
  std::string description;
  std::string readable_text;
  /// Devices that need another object inside before they switch on.
  std::string requires_inside;

  friend bool operator==(const WorldObject&, const WorldObject&) = default;
};

enum class Predicate { Holds, Inside, Active, AgentAt, IsOpen, Focused, StateOfMatter };

std::string_view to_string(Predicate p);
Predicate predicate_from_string(std::string_view text);

struct Milestone {
  Predicate predicate = Predicate::Holds;
  std::vector<std::string> args;
  double weight = 0;

  friend bool operator==(const Milestone&, const Milestone&) = default;
};

struct TaskSpec {
  std::string id;
  std::string goal;
  std::vector<Milestone> milestones;
  /// Focusing on anything else ends the episode as a failure.
  std::optional<std::string> focus_target;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct WorldState {
  std::string task_id;
  int variation = 0;
  std::vector<Location> locations;
  std::vector<WorldObject> objects;  // sorted by name
  std::string agent_location;
  std::uint64_t step = 0;
  std::optional<std::string> focused;
  std::vector<bool> milestones_hit;
  bool terminal = false;
  bool failed = false;

  const WorldObject* object(std::string_view name) const;
  WorldObject* object(std::string_view name);
  const Location* location(std::string_view name) const;

  friend bool operator==(const WorldState&, const WorldState&) = default;
};

struct ActionResult {
  std::string observation;
  std::vector<Triple> facts;
  std::vector<std::size_t> milestone_hits;
  bool terminal = false;
  bool refused = false;

  friend bool operator==(const ActionResult&, const ActionResult&) = default;
};

/// A task at one variation: its spec, starting world and expert script.
struct TaskInstance {
  TaskSpec spec;
  WorldState initial;
  /// Empty means: derive the script with the built-in milestone planner.
  std::vector<std::string> expert_script;
};

/// Built-in task families plus any tasks loaded from declarative files.
class TaskCatalog {
 public:
  /// boil-water, power-device, find-focus and pour-liquid; every variation
  /// index is valid and the first dozen are pairwise distinct.
  static TaskCatalog builtin();

  /// Adds the tasks of a JSON task file (see data/tasks/README.md).
  void load_file(const std::string& path);
  void load_json(const std::string& text);

  TaskInstance instantiate(std::string_view task_id, int variation) const;
  std::vector<std::string> task_ids() const;
  bool contains(std::string_view task_id) const;

 private:
  struct FileTask {
    TaskSpec spec;
    std::vector<Location> locations;
    std::string agent_start;
    std::vector<WorldObject> objects;
    std::vector<std::map<std::string, std::string>> placements;
    std::vector<std::vector<std::string>> experts;
  };

  bool with_builtins_ = false;
  std::map<std::string, FileTask, std::less<>> file_tasks_;
};

const std::vector<std::string>& builtin_task_ids();

/// The relation registry every microworld fact uses.
const RelationRegistry& microworld_relations();

std::pair<WorldState, ActionResult> reset(const TaskCatalog& catalog, std::string_view task_id, int variation);

/// Pure transition. Parseable actions the world cannot perform are refused
/// with no change except the step counter.
std::pair<WorldState, ActionResult> step(const TaskSpec& task, const WorldState& state, std::string_view action);

/// Sum of weights of milestones hit so far.
double score(const WorldState& state, const TaskSpec& task);

/// Every action the world would currently accept, sorted.
std::vector<std::string> admissible_actions(const WorldState& state);

/// Scripted demonstration reaching score 100, one sub-goal per milestone.
Trajectory expert_trajectory(const TaskCatalog& catalog, std::string_view task_id, int variation);

/// Stateful convenience wrapper used by replay and the agent loop.
class Simulator {
 public:
  explicit Simulator(const TaskCatalog& catalog) : catalog_(&catalog) {}

  ActionResult reset(std::string_view task_id, int variation);
  ActionResult step(std::string_view action);

  const WorldState& state() const { return state_; }
  const TaskSpec& task() const { return task_; }
  double score() const { return dualkb::score(state_, task_); }
  bool complete() const { return score() >= 100.0 - 1e-9; }

 private:
  const TaskCatalog* catalog_;
  TaskSpec task_;
  WorldState state_;
};

}  // namespace dualkb
