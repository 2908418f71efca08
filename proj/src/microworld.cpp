#include "dualkb/microworld.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <set>
#include <sstream>

#include "json.hpp"
#include "dualkb/error.hpp"
#include "dualkb/kb_io.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

constexpr double kHeatPerTick = 20.0;
constexpr double kBoilingPoint = 100.0;

// ---------------------------------------------------------------- topology

bool is_location(const WorldState& s, std::string_view name) { return s.location(name) != nullptr; }

/// Location that physically contains `name` (the agent's room when held).
std::string room_of(const WorldState& s, std::string_view name) {
  std::string current(name);
  for (int guard = 0; guard < 64; ++guard) {
    if (current == kAgent) return s.agent_location;
    if (is_location(s, current)) return current;
    const WorldObject* o = s.object(current);
    if (!o) return {};
    current = o->parent;
  }
  return {};
}

bool is_visible(const WorldState& s, std::string_view name) {
  const WorldObject* o = s.object(name);
  if (!o) return false;
  for (int guard = 0; guard < 64; ++guard) {
    if (o->parent == kAgent) return true;
    if (is_location(s, o->parent)) return o->parent == s.agent_location;
    const WorldObject* holder = s.object(o->parent);
    if (!holder || !holder->open) return false;
    o = holder;
  }
  return false;
}

/// True if `ancestor` contains `name`, directly or transitively.
bool contains(const WorldState& s, std::string_view ancestor, std::string_view name) {
  const WorldObject* o = s.object(name);
  for (int guard = 0; o && guard < 64; ++guard) {
    if (o->parent == ancestor) return true;
    o = s.object(o->parent);
  }
  return false;
}

bool heated(const WorldState& s, const WorldObject& o) {
  const WorldObject* holder = s.object(o.parent);
  for (int guard = 0; holder && guard < 64; ++guard) {
    if (holder->heat_source && holder->active) return true;
    holder = s.object(holder->parent);
  }
  return false;
}

std::vector<std::string> shortest_path(const WorldState& s, const std::string& from, const std::string& to) {
  if (from == to) return {};
  std::map<std::string, std::string> previous;
  std::deque<std::string> frontier{from};
  previous[from] = from;
  while (!frontier.empty()) {
    const std::string here = frontier.front();
    frontier.pop_front();
    const Location* loc = s.location(here);
    if (!loc) continue;
    std::vector<std::string> exits = loc->exits;
    std::sort(exits.begin(), exits.end());
    for (const auto& next : exits) {
      if (previous.count(next)) continue;
      previous[next] = here;
      if (next == to) {
        std::vector<std::string> path{to};
        for (std::string at = here; at != from; at = previous[at]) path.push_back(at);
        std::reverse(path.begin(), path.end());
        return path;
      }
      frontier.push_back(next);
    }
  }
  return {};
}

// -------------------------------------------------------------- facts/text

Triple fact(const WorldState& s, std::string_view subject, std::string_view relation, TripleValue value) {
  return Triple{EntityId(subject), microworld_relations().relation(relation), std::move(value), s.step, s.task_id};
}

Attribute attr(std::string text, std::optional<std::string> unit = std::nullopt) {
  return Attribute{std::move(text), std::move(unit)};
}

std::string format_temperature(double t) {
  std::ostringstream out;
  out << static_cast<long long>(std::lround(t));
  return out.str();
}

/// Everything the agent currently perceives, in a fixed order.
std::vector<Triple> visible_facts(const WorldState& s) {
  std::vector<Triple> out;
  out.push_back(fact(s, kAgent, "located in", EntityId(s.agent_location)));
  if (const Location* loc = s.location(s.agent_location)) {
    std::vector<std::string> exits = loc->exits;
    std::sort(exits.begin(), exits.end());
    out.push_back(fact(s, s.agent_location, "exits", attr(join(exits, ", "))));
  }
  for (const auto& o : s.objects) {
    if (!is_visible(s, o.name)) continue;
    out.push_back(fact(s, o.name, "located in", EntityId(o.parent)));
    if (o.openable) out.push_back(fact(s, o.name, "openness", attr(o.open ? "open" : "closed")));
    if (o.device) out.push_back(fact(s, o.name, "power", attr(o.active ? "on" : "off")));
    if (o.liquid) out.push_back(fact(s, o.name, "state of matter", attr(o.state_of_matter)));
  }
  return out;
}

std::string sentence(const Triple& t) {
  const std::string& subject = t.subject.name();
  const std::string& relation = t.relation.name;
  if (relation == "located in") {
    const std::string& where = std::get<EntityId>(t.value).name();
    if (subject == kAgent) return "The agent is in the " + where + ".";
    if (where == kAgent) return "The " + subject + " is held by the agent.";
    return "The " + subject + " is in the " + where + ".";
  }
  const auto& a = std::get<Attribute>(t.value);
  if (relation == "exits") return "From the " + subject + " you can go to: " + a.text + ".";
  if (relation == "openness" || relation == "power") return "The " + subject + " is " + a.text + ".";
  if (relation == "state of matter") return "The " + subject + " is a " + a.text + ".";
  if (relation == "act:examine") {
    return "Examining the " + subject + ": " + a.text + (a.unit ? " " + *a.unit : std::string()) + ".";
  }
  if (relation == "act:read") return "The " + subject + " reads: " + a.text + ".";
  if (relation == "act:focus") return "You focus on the " + subject + ".";
  return render_triple(t) + ".";
}

std::string compose_observation(std::string_view lead, const std::vector<Triple>& facts) {
  std::string out(lead);
  for (const auto& f : facts) out += " " + sentence(f);
  return out;
}

/// Facts of `after` that are new or changed relative to `before`.
std::vector<Triple> delta(const std::vector<Triple>& before, const std::vector<Triple>& after) {
  std::map<std::pair<std::string, std::string>, const TripleValue*> old;
  for (const auto& t : before) old[{t.subject.name(), t.relation.name}] = &t.value;
  std::vector<Triple> out;
  for (const auto& t : after) {
    auto it = old.find({t.subject.name(), t.relation.name});
    if (it == old.end() || !(*it->second == t.value)) out.push_back(t);
  }
  return out;
}

void append_unique(std::vector<Triple>& into, const std::vector<Triple>& extra) {
  for (const auto& t : extra) {
    const bool dup = std::any_of(into.begin(), into.end(), [&](const Triple& x) {
      return x.subject == t.subject && x.relation.name == t.relation.name;
    });
    if (!dup) into.push_back(t);
  }
}

// ---------------------------------------------------------------- dynamics

bool holds(const WorldState& s, const Milestone& m) {
  auto obj = [&](std::size_t i) { return s.object(m.args.at(i)); };
  switch (m.predicate) {
    case Predicate::Holds: return obj(0) && obj(0)->parent == kAgent;
    case Predicate::Inside: return obj(0) && obj(0)->parent == m.args.at(1);
    case Predicate::Active: return obj(0) && obj(0)->active;
    case Predicate::AgentAt: return s.agent_location == m.args.at(0);
    case Predicate::IsOpen: return obj(0) && obj(0)->open;
    case Predicate::Focused: return s.focused && *s.focused == m.args.at(0);
    case Predicate::StateOfMatter: return obj(0) && obj(0)->state_of_matter == m.args.at(1);
  }
  return false;
}

void tick(WorldState& s) {
  std::vector<bool> heat(s.objects.size());
  for (std::size_t i = 0; i < s.objects.size(); ++i) heat[i] = heated(s, s.objects[i]);
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    auto& o = s.objects[i];
    if (!heat[i]) continue;
    o.temperature += kHeatPerTick;
    if (o.liquid && o.temperature >= kBoilingPoint) o.state_of_matter = "gas";
  }
}

struct Outcome {
  bool refused = false;
  std::string lead;
  std::vector<Triple> feedback;  // action-feedback facts and examine extras
  bool look = false;
};

Outcome refuse() { return Outcome{true, "You can't do that.", {}, false}; }

Outcome apply(const TaskSpec& task, WorldState& s, const Action& a) {
  auto visible_object = [&](const std::string& name) -> WorldObject* {
    return is_visible(s, name) ? s.object(name) : nullptr;
  };
  const std::string& v = a.verb;
  if (v == "look around") return Outcome{false, "You look around.", {}, true};
  if (v == "wait") return Outcome{false, "Time passes.", {}, false};
  if (v == "go") {
    const Location* here = s.location(s.agent_location);
    if (!here || std::find(here->exits.begin(), here->exits.end(), a.args[0]) == here->exits.end()) return refuse();
    s.agent_location = a.args[0];
    return Outcome{false, "You move.", {}, false};
  }
  if (v == "open" || v == "close") {
    WorldObject* o = visible_object(a.args[0]);
    const bool want_open = v == "open";
    if (!o || !o->openable || o->open == want_open) return refuse();
    o->open = want_open;
    return Outcome{false, "Done.", {}, false};
  }
  if (v == "take") {
    WorldObject* o = visible_object(a.args[0]);
    if (!o || !o->portable || o->parent == kAgent) return refuse();
    o->parent = std::string(kAgent);
    return Outcome{false, "Done.", {}, false};
  }
  if (v == "put") {
    WorldObject* o = s.object(a.args[0]);
    WorldObject* c = visible_object(a.args[1]);
    if (!o || o->parent != kAgent || !c || !c->container || !c->open || c == o || contains(s, o->name, c->name)) {
      return refuse();
    }
    o->parent = c->name;
    return Outcome{false, "Done.", {}, false};
  }
  if (v == "pour") {
    WorldObject* from = s.object(a.args[0]);
    WorldObject* to = visible_object(a.args[1]);
    if (!from || from->parent != kAgent || !from->container || !to || !to->container || !to->open || to == from) {
      return refuse();
    }
    bool moved = false;
    for (auto& o : s.objects) {
      if (o.parent == from->name && o.liquid) {
        o.parent = to->name;
        moved = true;
      }
    }
    if (!moved) return refuse();
    return Outcome{false, "Done.", {}, false};
  }
  if (v == "activate" || v == "deactivate") {
    WorldObject* d = visible_object(a.args[0]);
    const bool want_on = v == "activate";
    if (!d || !d->device || d->active == want_on) return refuse();
    if (want_on && !d->requires_inside.empty()) {
      const WorldObject* part = s.object(d->requires_inside);
      if (!part || part->parent != d->name) return refuse();
    }
    d->active = want_on;
    return Outcome{false, "Done.", {}, false};
  }
  if (v == "examine") {
    WorldObject* o = visible_object(a.args[0]);
    if (!o) return refuse();
    Outcome out{false, "You examine it.", {}, false};
    if (o->thermometer) {
      out.feedback.push_back(fact(s, o->name, "act:examine", attr(format_temperature(o->temperature), "°C")));
    } else {
      out.feedback.push_back(fact(s, o->name, "act:examine", attr(o->description)));
    }
    if (o->container && o->open) {
      for (const auto& c : s.objects) {
        if (c.parent == o->name) out.feedback.push_back(fact(s, c.name, "located in", EntityId(o->name)));
      }
    }
    return out;
  }
  if (v == "read") {
    WorldObject* o = visible_object(a.args[0]);
    if (!o || o->readable_text.empty()) return refuse();
    return Outcome{false, "You read it.", {fact(s, o->name, "act:read", attr(o->readable_text))}, false};
  }
  if (v == "focus on") {
    WorldObject* o = visible_object(a.args[0]);
    if (!o) return refuse();
    s.focused = o->name;
    if (task.focus_target && *task.focus_target != o->name) {
      s.failed = true;
      s.terminal = true;
    }
    return Outcome{false, "You concentrate.", {fact(s, o->name, "act:focus", attr("focused"))}, false};
  }
  return refuse();
}

// --------------------------------------------------------- builtin worlds

void sort_objects(WorldState& s) {
  std::sort(s.objects.begin(), s.objects.end(), [](const WorldObject& a, const WorldObject& b) { return a.name < b.name; });
}

WorldObject furniture(std::string name, std::string parent, std::string description) {
  WorldObject o;
  o.name = std::move(name);
  o.parent = std::move(parent);
  o.container = true;
  o.description = std::move(description);
  return o;
}

WorldObject item(std::string name, std::string parent, std::string description) {
  WorldObject o;
  o.name = std::move(name);
  o.parent = std::move(parent);
  o.portable = true;
  o.description = std::move(description);
  return o;
}

WorldObject liquid(std::string name, std::string parent, std::string description, double temperature = 20.0) {
  WorldObject o;
  o.name = std::move(name);
  o.parent = std::move(parent);
  o.liquid = true;
  o.state_of_matter = "liquid";
  o.temperature = temperature;
  o.description = std::move(description);
  return o;
}

WorldObject closed_bin(std::string name, std::string parent, std::string description) {
  WorldObject o = furniture(std::move(name), std::move(parent), std::move(description));
  o.openable = true;
  o.open = false;
  return o;
}

WorldState base_world(std::string task_id, int variation) {
  WorldState s;
  s.task_id = std::move(task_id);
  s.variation = variation;
  s.locations = {
      {"bedroom", {"hallway"}},
      {"greenhouse", {"hallway", "kitchen"}},
      {"hallway", {"bedroom", "greenhouse", "kitchen", "workshop"}},
      {"kitchen", {"greenhouse", "hallway"}},
      {"workshop", {"hallway"}},
  };
  s.agent_location = "hallway";
  WorldObject stove = furniture("stove", "kitchen", "a cooking appliance with a single burner");
  stove.device = true;
  stove.heat_source = true;
  WorldObject book = item("book", "desk", "a thin volume with a cracked spine");
  book.readable_text = "heat changes matter from one state to another";
  s.objects = {
      furniture("table", "kitchen", "a sturdy wooden surface"),
      stove,
      furniture("workbench", "workshop", "a scarred work surface"),
      closed_bin("drawer", "workshop", "a shallow sliding compartment"),
      furniture("shelf", "greenhouse", "a slatted plank on brackets"),
      closed_bin("box", "greenhouse", "a cardboard crate with a lid"),
      furniture("desk", "bedroom", "a small writing surface"),
      closed_bin("cupboard", "bedroom", "a tall storage cabinet"),
      item("apple", "table", "a red fruit"),
      book,
      item("hammer", "workbench", "a claw tool"),
      item("fern", "shelf", "a leafy green plant"),
  };
  return s;
}

const std::vector<std::string> kSurfaces{"workbench", "shelf", "desk", "table"};
const std::vector<std::string> kBins{"drawer", "cupboard", "box"};

TaskInstance boil_water(int v) {
  TaskInstance t;
  t.initial = base_world("boil-water", v);
  const std::string place = kSurfaces[static_cast<std::size_t>(v % 4)];
  const double start_temp = 10.0 + 5.0 * ((v / 4) % 4);
  WorldObject pot = item("pot", place, "a metal cooking vessel");
  pot.container = true;
  WorldObject thermometer = item("thermometer", "pot", "a glass measuring instrument");
  thermometer.thermometer = true;
  thermometer.temperature = start_temp;
  t.initial.objects.push_back(pot);
  t.initial.objects.push_back(liquid("water", "pot", "clear and odorless", start_temp));
  t.initial.objects.push_back(thermometer);
  t.spec.id = "boil-water";
  t.spec.goal = "Boil the water in the pot using the stove.";
  t.spec.milestones = {{Predicate::Holds, {"pot"}, 25},
                       {Predicate::Inside, {"pot", "stove"}, 25},
                       {Predicate::Active, {"stove"}, 25},
                       {Predicate::StateOfMatter, {"water", "gas"}, 25}};
  return t;
}

TaskInstance power_device(int v) {
  static const std::vector<std::string> devices{"fan", "lamp", "radio"};
  static const std::vector<std::string> device_places{"workbench", "table", "desk"};
  TaskInstance t;
  t.initial = base_world("power-device", v);
  const std::string device_name = devices[static_cast<std::size_t>(v % 3)];
  const std::string bin = kBins[static_cast<std::size_t>((v / 3) % 3)];
  const std::string device_place = device_places[static_cast<std::size_t>((v / 9) % 3)];
  WorldObject device = furniture(device_name, device_place, "an electric appliance with an empty battery slot");
  device.device = true;
  device.requires_inside = "battery";
  t.initial.objects.push_back(device);
  t.initial.objects.push_back(item("battery", bin, "a cylindrical power cell"));
  t.spec.id = "power-device";
  t.spec.goal = "Turn on the " + device_name + " by installing the battery in it.";
  t.spec.milestones = {{Predicate::Holds, {"battery"}, 30},
                       {Predicate::Inside, {"battery", device_name}, 30},
                       {Predicate::Active, {device_name}, 40}};
  return t;
}

TaskInstance find_focus(int v) {
  static const std::vector<std::pair<std::string, std::string>> targets{{"seed", "a small brown kernel"},
                                                                        {"frog", "a green amphibian"},
                                                                        {"crystal", "a glittering mineral"},
                                                                        {"shell", "a spiral casing from the sea"}};
  TaskInstance t;
  t.initial = base_world("find-focus", v);
  const auto& [target, description] = targets[static_cast<std::size_t>(v % 4)];
  const std::string bin = kBins[static_cast<std::size_t>((v / 4) % 3)];
  t.initial.objects.push_back(item(target, bin, description));
  t.spec.id = "find-focus";
  t.spec.goal = "Find the " + target + " and focus on it.";
  sort_objects(t.initial);
  const std::string room = room_of(t.initial, bin);
  t.spec.milestones = {{Predicate::AgentAt, {room}, 30}, {Predicate::IsOpen, {bin}, 30}, {Predicate::Focused, {target}, 40}};
  t.spec.focus_target = target;
  return t;
}

TaskInstance pour_liquid(int v) {
  static const std::vector<std::pair<std::string, std::string>> liquids{
      {"milk", "white and creamy"}, {"juice", "orange and pulpy"}, {"oil", "golden and viscous"}};
  TaskInstance t;
  t.initial = base_world("pour-liquid", v);
  const auto& [name, description] = liquids[static_cast<std::size_t>(v % 3)];
  const std::size_t jug_index = static_cast<std::size_t>((v / 3) % 4);
  const std::size_t bowl_index = (jug_index + 1 + static_cast<std::size_t>((v / 12) % 3)) % 4;
  WorldObject jug = item("jug", kSurfaces[jug_index], "a ceramic pitcher");
  jug.container = true;
  t.initial.objects.push_back(jug);
  t.initial.objects.push_back(furniture("bowl", kSurfaces[bowl_index], "a wide shallow dish"));
  t.initial.objects.push_back(liquid(name, "jug", description));
  t.spec.id = "pour-liquid";
  t.spec.goal = "Pour the " + name + " from the jug into the bowl.";
  sort_objects(t.initial);
  const std::string bowl_room = room_of(t.initial, kSurfaces[bowl_index]);
  t.spec.milestones = {{Predicate::Holds, {"jug"}, 30}, {Predicate::AgentAt, {bowl_room}, 30},
                       {Predicate::Inside, {name, "bowl"}, 40}};
  return t;
}

void finalize(TaskInstance& t) {
  sort_objects(t.initial);
  t.initial.milestones_hit.assign(t.spec.milestones.size(), false);
  double total = 0;
  for (const auto& m : t.spec.milestones) total += m.weight;
  if (std::abs(total - 100.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "milestone weights of task '" + t.spec.id + "' sum to " + std::to_string(total));
  }
  for (std::size_t i = 1; i < t.initial.objects.size(); ++i) {
    if (t.initial.objects[i].name == t.initial.objects[i - 1].name) {
      throw Error(ErrorKind::InvalidArgument, "duplicate object '" + t.initial.objects[i].name + "'");
    }
  }
}

// ----------------------------------------------------------- expert planner

/// Opens the outermost closed container around `name`, if any.
std::optional<std::string> closed_ancestor(const WorldState& s, std::string_view name) {
  std::optional<std::string> outermost;
  const WorldObject* o = s.object(name);
  for (int guard = 0; o && guard < 64; ++guard) {
    const WorldObject* holder = s.object(o->parent);
    if (!holder) break;
    if (!holder->open) outermost = holder->name;
    o = holder;
  }
  return outermost;
}

std::optional<std::string> approach(const WorldState& s, const std::string& target_object) {
  const std::string room = room_of(s, target_object);
  if (room != s.agent_location) {
    auto path = shortest_path(s, s.agent_location, room);
    if (path.empty()) throw Error(ErrorKind::InvalidArgument, "no path to '" + room + "'");
    return "go " + path.front();
  }
  if (auto bin = closed_ancestor(s, target_object)) return "open " + *bin;
  return std::nullopt;
}

std::string next_expert_action(const WorldState& s, const Milestone& m, const std::vector<std::string>& segment) {
  auto done_in_segment = [&](const std::string& action) {
    return std::find(segment.begin(), segment.end(), action) != segment.end();
  };
  const auto& args = m.args;
  switch (m.predicate) {
    case Predicate::Holds:
      if (auto a = approach(s, args[0])) return *a;
      return "take " + args[0];
    case Predicate::Inside: {
      const WorldObject* o = s.object(args[0]);
      if (!o) break;
      const std::string carried = o->liquid ? o->parent : o->name;
      const WorldObject* c = s.object(carried);
      if (c && c->parent != kAgent) {
        if (auto a = approach(s, carried)) return *a;
        return "take " + carried;
      }
      if (auto a = approach(s, args[1])) return *a;
      const WorldObject* dest = s.object(args[1]);
      if (dest && !dest->open) return "open " + args[1];
      return o->liquid ? "pour " + carried + " into " + args[1] : "put " + carried + " in " + args[1];
    }
    case Predicate::Active:
      if (auto a = approach(s, args[0])) return *a;
      return "activate " + args[0];
    case Predicate::AgentAt: {
      auto path = shortest_path(s, s.agent_location, args[0]);
      if (path.empty()) break;
      return "go " + path.front();
    }
    case Predicate::IsOpen:
      if (auto a = approach(s, args[0])) return *a;
      return "open " + args[0];
    case Predicate::Focused:
      if (auto a = approach(s, args[0])) return *a;
      if (!done_in_segment("examine " + args[0])) return "examine " + args[0];
      return "focus on " + args[0];
    case Predicate::StateOfMatter:
      for (const auto& o : s.objects) {
        if (o.thermometer && is_visible(s, o.name) && !done_in_segment("examine " + o.name)) return "examine " + o.name;
      }
      return "wait";
  }
  throw Error(ErrorKind::InvalidArgument, "expert planner cannot satisfy a " + std::string(to_string(m.predicate)) +
                                              " milestone");
}

std::vector<std::string> plan_expert(const TaskSpec& task, WorldState s) {
  std::vector<std::string> script;
  for (std::size_t i = 0; i < task.milestones.size(); ++i) {
    std::vector<std::string> segment;
    for (int guard = 0; !s.milestones_hit[i]; ++guard) {
      if (guard > 64) throw Error(ErrorKind::InvalidArgument, "expert planner did not converge on task '" + task.id + "'");
      const std::string action = next_expert_action(s, task.milestones[i], segment);
      auto [next, result] = step(task, s, action);
      if (result.refused) {
        throw Error(ErrorKind::InvalidArgument, "expert planner produced refused action '" + action + "'");
      }
      s = std::move(next);
      segment.push_back(action);
      script.push_back(action);
    }
  }
  return script;
}

// -------------------------------------------------------------- task files

WorldObject object_from_json(const nlohmann::json& j) {
  WorldObject o;
  o.name = normalize_name(j.at("name").get<std::string>());
  o.parent = normalize_name(j.at("parent").get<std::string>());
  o.portable = j.value("portable", false);
  o.container = j.value("container", false);
  o.openable = j.value("openable", false);
  o.open = j.value("open", true);
  o.device = j.value("device", false);
  o.active = j.value("active", false);
  o.heat_source = j.value("heat_source", false);
  o.liquid = j.value("liquid", false);
  o.thermometer = j.value("thermometer", false);
  o.temperature = j.value("temperature", 20.0);
  o.state_of_matter = j.value("state_of_matter", o.liquid ? std::string("liquid") : std::string());
  o.description = j.value("description", std::string());
  o.readable_text = j.value("readable_text", std::string());
  o.requires_inside = normalize_name(j.value("requires_inside", std::string()));
  return o;
}

}  // namespace

// ------------------------------------------------------------------ public

const WorldObject* WorldState::object(std::string_view name) const {
  auto it = std::lower_bound(objects.begin(), objects.end(), name,
                             [](const WorldObject& o, std::string_view n) { return o.name < n; });
  return it != objects.end() && it->name == name ? &*it : nullptr;
}

WorldObject* WorldState::object(std::string_view name) {
  return const_cast<WorldObject*>(std::as_const(*this).object(name));
}

const Location* WorldState::location(std::string_view name) const {
  for (const auto& l : locations) {
    if (l.name == name) return &l;
  }
  return nullptr;
}

std::string_view to_string(Predicate p) {
  switch (p) {
    case Predicate::Holds: return "holds";
    case Predicate::Inside: return "inside";
    case Predicate::Active: return "active";
    case Predicate::AgentAt: return "agent_at";
    case Predicate::IsOpen: return "is_open";
    case Predicate::Focused: return "focused";
    case Predicate::StateOfMatter: return "state_of_matter";
  }
  return "unknown";
}

Predicate predicate_from_string(std::string_view text) {
  for (auto p : {Predicate::Holds, Predicate::Inside, Predicate::Active, Predicate::AgentAt, Predicate::IsOpen,
                 Predicate::Focused, Predicate::StateOfMatter}) {
    if (to_string(p) == text) return p;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown milestone predicate '" + std::string(text) + "'");
}

const RelationRegistry& microworld_relations() {
  static const RelationRegistry registry = RelationRegistry::microworld_default();
  return registry;
}

const std::vector<std::string>& builtin_task_ids() {
  static const std::vector<std::string> ids{"boil-water", "find-focus", "pour-liquid", "power-device"};
  return ids;
}

TaskCatalog TaskCatalog::builtin() {
  TaskCatalog c;
  c.with_builtins_ = true;
  return c;
}

void TaskCatalog::load_file(const std::string& path) { load_json(read_file(path)); }

void TaskCatalog::load_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("task file: ") + e.what());
  }
  try {
    for (const auto& jt : doc.at("tasks")) {
      FileTask t;
      t.spec.id = jt.at("id").get<std::string>();
      t.spec.goal = jt.at("goal").get<std::string>();
      for (const auto& jm : jt.at("milestones")) {
        Milestone m;
        m.predicate = predicate_from_string(jm.at("predicate").get<std::string>());
        for (const auto& a : jm.at("args")) m.args.push_back(normalize_name(a.get<std::string>()));
        m.weight = jm.at("weight").get<double>();
        t.spec.milestones.push_back(std::move(m));
      }
      if (jt.contains("focus_target")) t.spec.focus_target = normalize_name(jt.at("focus_target").get<std::string>());
      for (const auto& jl : jt.at("locations")) {
        Location l{normalize_name(jl.at("name").get<std::string>()), {}};
        for (const auto& e : jl.at("exits")) l.exits.push_back(normalize_name(e.get<std::string>()));
        t.locations.push_back(std::move(l));
      }
      t.agent_start = normalize_name(jt.at("agent_start").get<std::string>());
      for (const auto& jo : jt.at("objects")) t.objects.push_back(object_from_json(jo));
      if (jt.contains("variants")) {
        for (const auto& jv : jt.at("variants")) {
          std::map<std::string, std::string> placement;
          if (jv.contains("placements")) {
            for (const auto& [k, val] : jv.at("placements").items()) {
              placement[normalize_name(k)] = normalize_name(val.get<std::string>());
            }
          }
          t.placements.push_back(std::move(placement));
          t.experts.push_back(jv.value("expert", std::vector<std::string>{}));
        }
      }
      if (t.placements.empty()) {
        t.placements.emplace_back();
        t.experts.push_back(jt.value("expert", std::vector<std::string>{}));
      }
      const std::string id = t.spec.id;
      file_tasks_.insert_or_assign(id, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("task file: ") + e.what());
  }
}

TaskInstance TaskCatalog::instantiate(std::string_view task_id, int variation) const {
  if (variation < 0) throw Error(ErrorKind::InvalidArgument, "variation must be non-negative");
  TaskInstance t;
  if (auto it = file_tasks_.find(task_id); it != file_tasks_.end()) {
    const FileTask& f = it->second;
    const std::size_t index = static_cast<std::size_t>(variation) % f.placements.size();
    t.spec = f.spec;
    t.initial.task_id = f.spec.id;
    t.initial.variation = variation;
    t.initial.locations = f.locations;
    t.initial.agent_location = f.agent_start;
    t.initial.objects = f.objects;
    for (auto& o : t.initial.objects) {
      if (auto p = f.placements[index].find(o.name); p != f.placements[index].end()) o.parent = p->second;
    }
    t.expert_script = f.experts[index];
  } else if (with_builtins_ && task_id == "boil-water") {
    t = boil_water(variation);
  } else if (with_builtins_ && task_id == "power-device") {
    t = power_device(variation);
  } else if (with_builtins_ && task_id == "find-focus") {
    t = find_focus(variation);
  } else if (with_builtins_ && task_id == "pour-liquid") {
    t = pour_liquid(variation);
  } else {
    throw Error(ErrorKind::UnknownTask, "unknown task '" + std::string(task_id) + "'");
  }
  finalize(t);
  for (const auto& o : t.initial.objects) {
    if (o.parent != kAgent && !t.initial.location(o.parent) && !t.initial.object(o.parent)) {
      throw Error(ErrorKind::InvalidArgument, "object '" + o.name + "' has unknown parent '" + o.parent + "'");
    }
  }
  if (t.expert_script.empty()) t.expert_script = plan_expert(t.spec, t.initial);
  return t;
}

std::vector<std::string> TaskCatalog::task_ids() const {
  std::set<std::string> ids;
  if (with_builtins_) ids.insert(builtin_task_ids().begin(), builtin_task_ids().end());
  for (const auto& [id, t] : file_tasks_) ids.insert(id);
  return {ids.begin(), ids.end()};
}

bool TaskCatalog::contains(std::string_view task_id) const {
  const auto ids = task_ids();
  return std::find(ids.begin(), ids.end(), task_id) != ids.end();
}

std::pair<WorldState, ActionResult> reset(const TaskCatalog& catalog, std::string_view task_id, int variation) {
  TaskInstance t = catalog.instantiate(task_id, variation);
  WorldState s = std::move(t.initial);
  s.step = 0;
  ActionResult r;
  r.facts = visible_facts(s);
  r.observation = compose_observation("You arrive.", r.facts);
  return {std::move(s), std::move(r)};
}

std::pair<WorldState, ActionResult> step(const TaskSpec& task, const WorldState& state, std::string_view action_text) {
  const Action action = parse_action(action_text);
  WorldState next = state;
  ActionResult result;
  if (state.terminal) {
    next.step += 1;
    result.refused = true;
    result.terminal = true;
    result.observation = "The episode is over.";
    return {std::move(next), std::move(result)};
  }
  const std::vector<Triple> before = visible_facts(state);
  next.step += 1;
  Outcome outcome = apply(task, next, action);
  if (outcome.refused) {
    next = state;
    next.step += 1;
    result.refused = true;
    result.observation = outcome.lead;
    return {std::move(next), std::move(result)};
  }
  tick(next);
  std::vector<Triple> after = visible_facts(next);
  for (auto& f : outcome.feedback) f.step_index = next.step;
  result.facts = outcome.look ? after : delta(before, after);
  append_unique(result.facts, outcome.feedback);
  for (std::size_t i = 0; i < task.milestones.size(); ++i) {
    if (!next.milestones_hit[i] && holds(next, task.milestones[i])) {
      next.milestones_hit[i] = true;
      result.milestone_hits.push_back(i);
    }
  }
  if (score(next, task) >= 100.0 - 1e-9) next.terminal = true;
  result.terminal = next.terminal;
  result.observation = compose_observation(outcome.lead, result.facts);
  return {std::move(next), std::move(result)};
}

double score(const WorldState& state, const TaskSpec& task) {
  double total = 0;
  for (std::size_t i = 0; i < task.milestones.size() && i < state.milestones_hit.size(); ++i) {
    if (state.milestones_hit[i]) total += task.milestones[i].weight;
  }
  return total;
}

std::vector<std::string> admissible_actions(const WorldState& s) {
  std::set<std::string> out{"look around", "wait"};
  if (s.terminal) return {out.begin(), out.end()};
  if (const Location* here = s.location(s.agent_location)) {
    for (const auto& e : here->exits) out.insert("go " + e);
  }
  std::vector<const WorldObject*> visible;
  for (const auto& o : s.objects) {
    if (is_visible(s, o.name)) visible.push_back(&o);
  }
  for (const WorldObject* o : visible) {
    out.insert("examine " + o->name);
    out.insert("focus on " + o->name);
    if (!o->readable_text.empty()) out.insert("read " + o->name);
    if (o->portable && o->parent != kAgent) out.insert("take " + o->name);
    if (o->openable) out.insert((o->open ? "close " : "open ") + o->name);
    if (o->device) {
      const WorldObject* part = o->requires_inside.empty() ? nullptr : s.object(o->requires_inside);
      if (o->active) {
        out.insert("deactivate " + o->name);
      } else if (o->requires_inside.empty() || (part && part->parent == o->name)) {
        out.insert("activate " + o->name);
      }
    }
  }
  for (const WorldObject* held : visible) {
    if (held->parent != kAgent) continue;
    for (const WorldObject* c : visible) {
      if (c == held || !c->container || !c->open || contains(s, held->name, c->name)) continue;
      out.insert("put " + held->name + " in " + c->name);
      if (held->container) {
        const bool has_liquid = std::any_of(s.objects.begin(), s.objects.end(), [&](const WorldObject& x) {
          return x.parent == held->name && x.liquid;
        });
        if (has_liquid) out.insert("pour " + held->name + " into " + c->name);
      }
    }
  }
  return {out.begin(), out.end()};
}

Trajectory expert_trajectory(const TaskCatalog& catalog, std::string_view task_id, int variation) {
  const TaskInstance t = catalog.instantiate(task_id, variation);
  Trajectory traj;
  traj.task_id = t.spec.id;
  traj.variation = variation;
  traj.goal = t.spec.goal;
  WorldState s = t.initial;
  std::vector<StepRecord> segment;
  for (const auto& action : t.expert_script) {
    auto [next, result] = step(t.spec, s, action);
    if (result.refused) throw Error(ErrorKind::ReplayDivergence, "expert action '" + action + "' was refused");
    s = std::move(next);
    segment.push_back(StepRecord{normalize_name(action), result.observation, result.milestone_hits});
    if (!result.milestone_hits.empty()) {
      traj.subgoals.push_back(SubGoal{subgoal_name(segment), segment, std::nullopt});
      segment.clear();
    }
  }
  if (!segment.empty()) traj.subgoals.push_back(SubGoal{subgoal_name(segment), segment, std::nullopt});
  return traj;
}

ActionResult Simulator::reset(std::string_view task_id, int variation) {
  task_ = catalog_->instantiate(task_id, variation).spec;
  auto [s, r] = dualkb::reset(*catalog_, task_id, variation);
  state_ = std::move(s);
  return r;
}

ActionResult Simulator::step(std::string_view action) {
  auto [s, r] = dualkb::step(task_, state_, action);
  state_ = std::move(s);
  return r;
}

}  // namespace dualkb
