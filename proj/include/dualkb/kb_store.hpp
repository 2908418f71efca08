#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

namespace dualkb {

/// Normalized entity name. Construction normalizes; an empty result throws.
class EntityId {
 public:
  explicit EntityId(std::string_view raw);

  const std::string& name() const noexcept { return name_; }

  friend auto operator<=>(const EntityId&, const EntityId&) = default;
  friend bool operator==(const EntityId&, const EntityId&) = default;

 private:
  std::string name_;
};

enum class Channel { Observation, ActionFeedback };

std::string_view to_string(Channel channel);
Channel channel_from_string(std::string_view text);

struct Relation {
  std::string name;
  Channel channel = Channel::Observation;

  friend bool operator==(const Relation&, const Relation&) = default;
};

/// Relation names and the acquisition channel each one is bound to. A name is
/// bound to exactly one channel for the lifetime of the registry.
class RelationRegistry {
 public:
  /// Returns the normalized relation. Throws ChannelConflict when the name is
  /// already bound to the other channel.
  Relation add(std::string_view name, Channel channel);

  bool contains(const Relation& relation) const;
  std::optional<Channel> channel_of(std::string_view name) const;
  Relation relation(std::string_view name) const;

  const std::map<std::string, Channel>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// The microworld's relation taxonomy.
  static RelationRegistry microworld_default();
  /// JSON config: {"relations": [{"name": "...", "channel": "observation"}]}.
  static RelationRegistry load(const std::string& path);

  friend bool operator==(const RelationRegistry&, const RelationRegistry&) = default;

 private:
  std::map<std::string, Channel> entries_;
};

struct Attribute {
  std::string text;
  std::optional<std::string> unit;

  friend bool operator==(const Attribute&, const Attribute&) = default;
};

using TripleValue = std::variant<EntityId, Attribute>;

struct Triple {
  EntityId subject;
  Relation relation;
  TripleValue value;
  std::uint64_t step_index = 0;
  std::string task_id;

  friend bool operator==(const Triple&, const Triple&) = default;
};

const EntityId* value_entity(const Triple& t) noexcept;

/// Canonical text form: "subject | relation | value [unit]".
std::string render_triple(const Triple& t);

/// A triple relates to an object iff the object is its subject or its
/// entity-valued object.
bool is_related(const Triple& t, const std::set<EntityId>& objects);

Triple make_triple(std::string_view subject, const Relation& relation, TripleValue value,
                   std::uint64_t step, std::string task_id = {});

enum class UpsertOutcome { Inserted, Superseded, Unchanged };

struct IngestReport {
  std::size_t inserted = 0;
  std::size_t superseded = 0;
  std::size_t unchanged = 0;
};

/// Environmental triples keyed by (subject, relation name). A new triple for
/// an existing key replaces the stored one; writes older than the stored
/// step are rejected.
class EnvKnowledgeBase {
 public:
  using Key = std::pair<std::string, std::string>;

  EnvKnowledgeBase() = default;
  explicit EnvKnowledgeBase(RelationRegistry registry) : registry_(std::move(registry)) {}

  UpsertOutcome upsert(const Triple& t);

  /// Applies the batch left to right. Either every fact is applied or, on
  /// error, the store is untouched.
  IngestReport ingest(std::span<const Triple> facts, std::uint64_t step);

  /// Triples whose subject or entity value is `e`, ordered by relation name
  /// then step.
  std::vector<Triple> query_entity(const EntityId& e) const;

  const Triple* find(const EntityId& subject, std::string_view relation) const;

  /// All triples in key order.
  std::vector<Triple> triples() const;

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const RelationRegistry& registry() const noexcept { return registry_; }
  RelationRegistry& registry() noexcept { return registry_; }
  const std::map<Key, Triple>& entries() const noexcept { return entries_; }

  friend bool operator==(const EnvKnowledgeBase&, const EnvKnowledgeBase&) = default;

 private:
  void check_writable(const Triple& t) const;

  RelationRegistry registry_;
  std::map<Key, Triple> entries_;
};

enum class Provenance { Expert, SelfGenerated };

std::string_view to_string(Provenance p);
Provenance provenance_from_string(std::string_view text);

struct SubGoalUnit {
  std::string name;
  std::vector<Triple> relevant_env_knowledge;
  std::vector<EntityId> associated_entities;
  std::vector<std::string> reflections;
  std::vector<std::string> action_trajectory;
  Provenance provenance = Provenance::Expert;
  std::string source_task_id;

  friend bool operator==(const SubGoalUnit&, const SubGoalUnit&) = default;
};

/// Throws InvalidUnit if the name or trajectory is empty or entities repeat.
void validate_unit(const SubGoalUnit& u);

/// Drops repeated entities, keeping first occurrences.
std::vector<EntityId> dedup_entities(std::vector<EntityId> entities);

/// Canonical text form: name, entities, reflections, trajectory; one block
/// per line.
std::string render_unit(const SubGoalUnit& u);

/// Append-only store of sub-goal units; ids are positions.
class ExpKnowledgeBase {
 public:
  std::size_t store(SubGoalUnit u);

  const SubGoalUnit& at(std::size_t id) const { return units_.at(id); }
  const std::vector<SubGoalUnit>& units() const noexcept { return units_; }
  std::size_t size() const noexcept { return units_.size(); }
  bool empty() const noexcept { return units_.empty(); }

  friend bool operator==(const ExpKnowledgeBase&, const ExpKnowledgeBase&) = default;

 private:
  std::vector<SubGoalUnit> units_;
};

}  // namespace dualkb
