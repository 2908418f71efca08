#include "dualkb/kb_store.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "dualkb/error.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

std::string normalize_relation_name(std::string_view raw) {
  std::string name = normalize_name(raw);
  // "act: examine" and "act:examine" name the same relation.
  std::string out;
  out.reserve(name.size());
  for (std::size_t i = 0; i < name.size(); ++i) {
    if (name[i] == ' ' && i > 0 && name[i - 1] == ':') continue;
    out.push_back(name[i]);
  }
  return out;
}

}  // namespace

EntityId::EntityId(std::string_view raw) : name_(normalize_name(raw)) {
  if (name_.empty()) throw Error(ErrorKind::InvalidArgument, "entity name is empty after normalization");
}

std::string_view to_string(Channel channel) {
  return channel == Channel::Observation ? "observation" : "action";
}

Channel channel_from_string(std::string_view text) {
  if (text == "observation") return Channel::Observation;
  if (text == "action") return Channel::ActionFeedback;
  throw Error(ErrorKind::InvalidArgument, "unknown channel '" + std::string(text) + "'");
}

Relation RelationRegistry::add(std::string_view raw_name, Channel channel) {
  std::string name = normalize_relation_name(raw_name);
  if (name.empty()) throw Error(ErrorKind::InvalidArgument, "relation name is empty");
  auto [it, inserted] = entries_.emplace(name, channel);
  if (!inserted && it->second != channel) {
    throw Error(ErrorKind::ChannelConflict,
                "relation '" + name + "' is already bound to channel " + std::string(to_string(it->second)));
  }
  return Relation{name, channel};
}

bool RelationRegistry::contains(const Relation& relation) const {
  auto it = entries_.find(relation.name);
  return it != entries_.end() && it->second == relation.channel;
}

std::optional<Channel> RelationRegistry::channel_of(std::string_view name) const {
  auto it = entries_.find(normalize_relation_name(name));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

Relation RelationRegistry::relation(std::string_view raw_name) const {
  std::string name = normalize_relation_name(raw_name);
  auto it = entries_.find(name);
  if (it == entries_.end()) throw Error(ErrorKind::UnregisteredRelation, "relation '" + name + "' is not registered");
  return Relation{name, it->second};
}

RelationRegistry RelationRegistry::microworld_default() {
  RelationRegistry r;
  r.add("located in", Channel::Observation);
  r.add("exits", Channel::Observation);
  r.add("openness", Channel::Observation);
  r.add("power", Channel::Observation);
  r.add("state of matter", Channel::Observation);
  r.add("act:examine", Channel::ActionFeedback);
  r.add("act:read", Channel::ActionFeedback);
  r.add("act:focus", Channel::ActionFeedback);
  return r;
}

RelationRegistry RelationRegistry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open relation registry " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
  RelationRegistry r;
  try {
    for (const auto& entry : doc.at("relations")) {
      r.add(entry.at("name").get<std::string>(), channel_from_string(entry.at("channel").get<std::string>()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, path + ": " + e.what());
  }
  return r;
}

const EntityId* value_entity(const Triple& t) noexcept { return std::get_if<EntityId>(&t.value); }

std::string render_triple(const Triple& t) {
  std::string out = t.subject.name() + " | " + t.relation.name + " | ";
  if (const auto* e = value_entity(t)) {
    out += e->name();
  } else {
    const auto& a = std::get<Attribute>(t.value);
    out += a.text;
    if (a.unit && !a.unit->empty()) out += " " + *a.unit;
  }
  return out;
}

bool is_related(const Triple& t, const std::set<EntityId>& objects) {
  if (objects.count(t.subject)) return true;
  const auto* e = value_entity(t);
  return e && objects.count(*e);
}

Triple make_triple(std::string_view subject, const Relation& relation, TripleValue value, std::uint64_t step,
                   std::string task_id) {
  return Triple{EntityId(subject), relation, std::move(value), step, std::move(task_id)};
}

void EnvKnowledgeBase::check_writable(const Triple& t) const {
  if (!registry_.contains(t.relation)) {
    throw Error(ErrorKind::UnregisteredRelation,
                "relation '" + t.relation.name + "' (" + std::string(to_string(t.relation.channel)) +
                    ") is not registered");
  }
  auto it = entries_.find(Key{t.subject.name(), t.relation.name});
  if (it != entries_.end() && t.step_index < it->second.step_index) {
    throw Error(ErrorKind::StaleWrite, "step " + std::to_string(t.step_index) + " is older than stored step " +
                                           std::to_string(it->second.step_index) + " for " +
                                           render_triple(it->second));
  }
}

UpsertOutcome EnvKnowledgeBase::upsert(const Triple& t) {
  check_writable(t);
  Key key{t.subject.name(), t.relation.name};
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    entries_.emplace(std::move(key), t);
    return UpsertOutcome::Inserted;
  }
  if (it->second == t) return UpsertOutcome::Unchanged;
  it->second = t;
  return UpsertOutcome::Superseded;
}

IngestReport EnvKnowledgeBase::ingest(std::span<const Triple> facts, std::uint64_t step) {
  for (const auto& f : facts) {
    if (f.step_index != step) {
      throw Error(ErrorKind::InvalidBatch, "fact " + render_triple(f) + " carries step " +
                                               std::to_string(f.step_index) + ", batch step is " +
                                               std::to_string(step));
    }
    // Facts in one batch share a step, so only stored entries can be stale.
    check_writable(f);
  }
  IngestReport report;
  for (const auto& f : facts) {
    switch (upsert(f)) {
      case UpsertOutcome::Inserted: ++report.inserted; break;
      case UpsertOutcome::Superseded: ++report.superseded; break;
      case UpsertOutcome::Unchanged: ++report.unchanged; break;
    }
  }
  return report;
}

std::vector<Triple> EnvKnowledgeBase::query_entity(const EntityId& e) const {
  std::vector<Triple> out;
  for (const auto& [key, t] : entries_) {
    const auto* v = value_entity(t);
    if (t.subject == e || (v && *v == e)) out.push_back(t);
  }
  std::sort(out.begin(), out.end(), [](const Triple& a, const Triple& b) {
    return std::tie(a.relation.name, a.step_index, a.subject) < std::tie(b.relation.name, b.step_index, b.subject);
  });
  return out;
}

const Triple* EnvKnowledgeBase::find(const EntityId& subject, std::string_view relation) const {
  auto it = entries_.find(Key{subject.name(), normalize_relation_name(relation)});
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<Triple> EnvKnowledgeBase::triples() const {
  std::vector<Triple> out;
  out.reserve(entries_.size());
  for (const auto& [key, t] : entries_) out.push_back(t);
  return out;
}

std::string_view to_string(Provenance p) { return p == Provenance::Expert ? "expert" : "self_generated"; }

Provenance provenance_from_string(std::string_view text) {
  if (text == "expert") return Provenance::Expert;
  if (text == "self_generated") return Provenance::SelfGenerated;
  throw Error(ErrorKind::InvalidArgument, "unknown provenance '" + std::string(text) + "'");
}

void validate_unit(const SubGoalUnit& u) {
  if (u.name.empty()) throw Error(ErrorKind::InvalidUnit, "sub-goal unit has an empty name");
  if (u.action_trajectory.empty()) throw Error(ErrorKind::InvalidUnit, "sub-goal unit '" + u.name + "' has no actions");
  std::set<EntityId> seen;
  for (const auto& e : u.associated_entities) {
    if (!seen.insert(e).second) {
      throw Error(ErrorKind::InvalidUnit, "sub-goal unit '" + u.name + "' repeats entity '" + e.name() + "'");
    }
  }
}

std::vector<EntityId> dedup_entities(std::vector<EntityId> entities) {
  std::set<EntityId> seen;
  std::vector<EntityId> out;
  for (auto& e : entities) {
    if (seen.insert(e).second) out.push_back(std::move(e));
  }
  return out;
}

std::string render_unit(const SubGoalUnit& u) {
  std::ostringstream out;
  out << u.name;
  std::vector<std::string> names;
  for (const auto& e : u.associated_entities) names.push_back(e.name());
  out << "\nentities: " << join(names, ", ");
  for (const auto& r : u.reflections) out << '\n' << r;
  for (const auto& a : u.action_trajectory) out << '\n' << a;
  return out.str();
}

std::size_t ExpKnowledgeBase::store(SubGoalUnit u) {
  validate_unit(u);
  units_.push_back(std::move(u));
  return units_.size() - 1;
}

}  // namespace dualkb
