#include "dualkb/trajectory.hpp"

#include "dualkb/error.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

const std::set<std::string>& unary_verbs() {
  static const std::set<std::string> verbs{"go", "open", "close", "take", "activate", "deactivate", "examine", "read"};
  return verbs;
}

Action binary(const std::string& verb, std::string_view rest, std::string_view separator, std::string_view original) {
  const auto pos = rest.find(separator);
  if (pos == std::string_view::npos) {
    throw Error(ErrorKind::UnparseableAction, "'" + std::string(original) + "' needs '" + std::string(separator) + "'");
  }
  std::string first = normalize_name(rest.substr(0, pos));
  std::string second = normalize_name(rest.substr(pos + separator.size()));
  if (first.empty() || second.empty()) {
    throw Error(ErrorKind::UnparseableAction, "'" + std::string(original) + "' is missing an argument");
  }
  return Action{verb, {std::move(first), std::move(second)}};
}

}  // namespace

Action parse_action(std::string_view text) {
  const std::string norm = normalize_name(text);
  if (norm == "look around") return Action{"look around", {}};
  if (norm == "wait") return Action{"wait", {}};
  const auto space = norm.find(' ');
  if (space == std::string::npos) throw Error(ErrorKind::UnparseableAction, "'" + std::string(text) + "'");
  const std::string verb = norm.substr(0, space);
  const std::string_view rest = std::string_view(norm).substr(space + 1);
  if (unary_verbs().count(verb)) return Action{verb, {std::string(rest)}};
  if (verb == "focus") {
    if (rest.rfind("on ", 0) != 0 || rest.size() <= 3) {
      throw Error(ErrorKind::UnparseableAction, "'" + std::string(text) + "' should read 'focus on <object>'");
    }
    return Action{"focus on", {std::string(rest.substr(3))}};
  }
  if (verb == "put") return binary(verb, rest, " in ", text);
  if (verb == "pour") return binary(verb, rest, " into ", text);
  throw Error(ErrorKind::UnparseableAction, "unknown verb in '" + std::string(text) + "'");
}

std::string to_text(const Action& action) {
  if (action.verb == "put") return "put " + action.args.at(0) + " in " + action.args.at(1);
  if (action.verb == "pour") return "pour " + action.args.at(0) + " into " + action.args.at(1);
  if (action.args.empty()) return action.verb;
  return action.verb + " " + action.args.at(0);
}

std::vector<StepRecord> flatten(const Trajectory& t) {
  std::vector<StepRecord> out;
  for (const auto& sg : t.subgoals) out.insert(out.end(), sg.steps.begin(), sg.steps.end());
  return out;
}

std::vector<std::string> actions_of(const SubGoal& sg) {
  std::vector<std::string> out;
  for (const auto& s : sg.steps) out.push_back(s.action);
  return out;
}

std::string render_actions(const SubGoal& sg) { return join(actions_of(sg), "\n"); }

std::set<EntityId> interacted_objects(const SubGoal& sg) {
  std::set<EntityId> out;
  for (const auto& step : sg.steps) {
    try {
      for (const auto& arg : parse_action(step.action).args) out.emplace(arg);
    } catch (const Error&) {
      // Unparseable actions carry no structured arguments.
    }
  }
  return out;
}

std::string subgoal_name(const std::vector<StepRecord>& steps) {
  if (steps.empty()) throw Error(ErrorKind::InvalidArgument, "cannot name an empty segment");
  return normalize_name(steps.back().action);
}

}  // namespace dualkb
