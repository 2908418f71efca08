#include "dualkb/distiller.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "dualkb/text.hpp"

namespace dualkb {

namespace {

bool is_move(const StepRecord& s) {
  try {
    return parse_action(s.action).verb == "go";
  } catch (const Error&) {
    return false;
  }
}

std::vector<SubGoal> rule_segments(std::span<const StepRecord> raw) {
  std::vector<SubGoal> out;
  std::vector<StepRecord> current;
  auto close = [&] {
    if (current.empty()) return;
    out.push_back(SubGoal{subgoal_name(current), current, std::nullopt});
    current.clear();
  };
  for (const auto& s : raw) {
    if (!current.empty() && is_move(current.back()) != is_move(s)) close();
    current.push_back(s);
    if (!s.milestone_hits.empty()) close();
  }
  close();
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

std::string ask(const DecisionModelBacked& backend, const std::vector<ChatMessage>& prompt) {
  if (!backend.transport) throw Error(ErrorKind::BackendError, "decision model backend has no transport");
  try {
    return backend.transport->complete(prompt);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::MalformedModelResponse) throw;
    throw Error(ErrorKind::BackendError, e.what());
  }
}

const Triple* decisive_triple(const std::string& action, std::span<const Triple> context) {
  std::vector<std::string> args;
  try {
    args = parse_action(action).args;
  } catch (const Error&) {
    return nullptr;
  }
  for (const auto& arg : args) {
    for (const auto& t : context) {
      if (t.subject.name() == arg) return &t;
    }
  }
  for (const auto& arg : args) {
    for (const auto& t : context) {
      const EntityId* v = value_entity(t);
      if (v && v->name() == arg) return &t;
    }
  }
  return nullptr;
}

SubGoalUnit rule_unit(const SubGoal& sg, std::span<const Triple> context) {
  SubGoalUnit u;
  u.name = sg.name;
  const std::set<EntityId> objects = interacted_objects(sg);
  u.associated_entities.assign(objects.begin(), objects.end());
  for (const auto& t : context) {
    if (is_related(t, objects)) u.relevant_env_knowledge.push_back(t);
  }
  for (const auto& s : sg.steps) {
    if (s.milestone_hits.empty()) continue;
    const Triple* t = decisive_triple(s.action, context);
    u.reflections.push_back("'" + s.action + "' completed a milestone; deciding fact: " +
                            (t ? render_triple(*t) : std::string("none known beforehand")) + ".");
  }
  if (u.reflections.empty()) {
    u.reflections.push_back("'" + (sg.steps.empty() ? std::string() : sg.steps.back().action) +
                            "' ended the sub-goal without completing a milestone.");
  }
  u.action_trajectory = actions_of(sg);
  return u;
}

/// Items of the block headed `label` in the fixed block order.
std::vector<std::string> block(const std::vector<std::string>& lines, std::size_t& pos, const std::string& label,
                               const std::string& response) {
  if (pos >= lines.size() || lines[pos] != label) {
    throw MalformedResponse("expected '" + label + "'" + (pos < lines.size() ? " at '" + lines[pos] + "'" : ""),
                            response);
  }
  ++pos;
  std::vector<std::string> items;
  while (pos < lines.size() && lines[pos].rfind("- ", 0) == 0) {
    std::string item = trim(std::string_view(lines[pos]).substr(2));
    if (item.empty()) throw MalformedResponse("empty item under " + label, response);
    items.push_back(std::move(item));
    ++pos;
  }
  return items;
}

}  // namespace

std::vector<ChatMessage> segmentation_prompt(std::span<const StepRecord> raw) {
  std::string steps;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    steps += std::to_string(i + 1) + ". " + raw[i].action + (raw[i].milestone_hits.empty() ? "" : "  [milestone]") +
             "\n   " + raw[i].observation + "\n";
  }
  return {
      {"system",
       "You split agent action logs into sub-goals. Reply with the line 'SEGMENTS:' followed by one line per "
       "sub-goal of the form '- <first>-<last> | <short name>'. Ranges are 1-based, inclusive, contiguous and "
       "cover every step. Write nothing else."},
      {"user", steps},
  };
}

std::vector<ChatMessage> extraction_prompt(const SubGoal& sg, std::span<const Triple> env_context) {
  std::string context;
  for (const auto& t : env_context) context += "- " + render_triple(t) + "\n";
  std::string steps;
  for (const auto& s : sg.steps) steps += "- " + s.action + "\n  " + s.observation + "\n";
  return {
      {"system",
       "You summarize one sub-goal of an agent's work. Reply with exactly three blocks in this order: "
       "'ENTITIES:', 'KNOWLEDGE:' and 'REFLECTIONS:'. Under each, write one '- ' item per line. Entities are "
       "the objects the sub-goal involved. Knowledge items must be copied verbatim from the known facts. "
       "Reflections are short lessons for a future attempt."},
      {"user", "Sub-goal: " + sg.name + "\nKnown facts:\n" + context + "Steps:\n" + steps},
  };
}

std::vector<SubGoal> parse_segmentation(const std::string& response, std::span<const StepRecord> raw) {
  const auto lines = lines_of(response);
  if (lines.empty() || lines[0] != "SEGMENTS:") throw MalformedResponse("expected 'SEGMENTS:'", response);
  std::vector<SubGoal> out;
  std::size_t next = 1;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    const auto bar = line.find('|');
    const auto dash = line.find('-', 2);
    if (line.rfind("- ", 0) != 0 || bar == std::string::npos || dash == std::string::npos || dash > bar) {
      throw MalformedResponse("bad segment line '" + line + "'", response);
    }
    char* end = nullptr;
    const std::string first_text = trim(std::string_view(line).substr(2, dash - 2));
    const std::string last_text = trim(std::string_view(line).substr(dash + 1, bar - dash - 1));
    const long first = std::strtol(first_text.c_str(), &end, 10);
    const bool first_ok = !first_text.empty() && *end == '\0';
    const long last = std::strtol(last_text.c_str(), &end, 10);
    const bool last_ok = !last_text.empty() && *end == '\0';
    if (!first_ok || !last_ok || first != static_cast<long>(next) || last < first ||
        last > static_cast<long>(raw.size())) {
      throw MalformedResponse("segment '" + line + "' does not continue the partition at step " + std::to_string(next),
                              response);
    }
    std::string name = trim(std::string_view(line).substr(bar + 1));
    if (name.empty()) throw MalformedResponse("segment without a name: '" + line + "'", response);
    SubGoal sg{std::move(name), {raw.begin() + (first - 1), raw.begin() + last}, std::nullopt};
    out.push_back(std::move(sg));
    next = static_cast<std::size_t>(last) + 1;
  }
  if (next != raw.size() + 1) throw MalformedResponse("segments do not cover every step", response);
  return out;
}

SubGoalUnit parse_extraction(const std::string& response, const SubGoal& sg, std::span<const Triple> env_context) {
  const auto lines = lines_of(response);
  std::size_t pos = 0;
  const auto entities = block(lines, pos, "ENTITIES:", response);
  const auto knowledge = block(lines, pos, "KNOWLEDGE:", response);
  const auto reflections = block(lines, pos, "REFLECTIONS:", response);
  if (pos != lines.size()) throw MalformedResponse("unexpected line '" + lines[pos] + "'", response);

  SubGoalUnit u;
  u.name = sg.name;
  u.action_trajectory = actions_of(sg);
  u.reflections = reflections;
  try {
    for (const auto& e : entities) u.associated_entities.emplace_back(e);
  } catch (const Error& e) {
    throw MalformedResponse(e.what(), response);
  }
  for (const auto& k : knowledge) {
    auto it = std::find_if(env_context.begin(), env_context.end(),
                           [&](const Triple& t) { return render_triple(t) == k; });
    if (it == env_context.end()) throw MalformedResponse("knowledge '" + k + "' is not a known fact", response);
    u.relevant_env_knowledge.push_back(*it);
  }
  try {
    validate_unit(u);
  } catch (const Error& e) {
    throw MalformedResponse(e.what(), response);
  }
  return u;
}

std::vector<SubGoal> decompose(std::span<const StepRecord> raw, const DistillerBackend& backend) {
  if (raw.empty()) throw Error(ErrorKind::InvalidArgument, "cannot decompose an empty trajectory");
  if (std::holds_alternative<RuleBased>(backend)) return rule_segments(raw);
  const auto& dm = std::get<DecisionModelBacked>(backend);
  return parse_segmentation(ask(dm, segmentation_prompt(raw)), raw);
}

SubGoalUnit extract_unit(const SubGoal& sg, std::span<const Triple> env_context, const DistillerBackend& backend,
                         Provenance provenance, const std::string& source_task_id) {
  if (sg.name.empty() || sg.steps.empty()) throw Error(ErrorKind::InvalidArgument, "sub-goal needs a name and steps");
  SubGoalUnit u;
  if (std::holds_alternative<RuleBased>(backend)) {
    u = rule_unit(sg, env_context);
  } else {
    u = parse_extraction(ask(std::get<DecisionModelBacked>(backend), extraction_prompt(sg, env_context)), sg,
                         env_context);
  }
  u.provenance = provenance;
  u.source_task_id = source_task_id;
  validate_unit(u);
  return u;
}

}  // namespace dualkb
