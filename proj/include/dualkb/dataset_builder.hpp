#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dualkb/embedder.hpp"
#include "dualkb/kb_store.hpp"
#include "dualkb/microworld.hpp"
#include "dualkb/trajectory.hpp"

namespace dualkb {

/// Environmental knowledge captured while replaying one trajectory.
struct EnvSnapshot {
  /// before_subgoal[i]: every triple known immediately before sub-goal i's
  /// first action, in key order. before_subgoal[0] holds only what the
  /// initial observation revealed.
  std::vector<std::vector<Triple>> before_subgoal;
  EnvKnowledgeBase final_env;
  double final_score = 0;

  friend bool operator==(const EnvSnapshot&, const EnvSnapshot&) = default;
};

/// Replays the trajectory from a fresh reset, ingesting every emitted fact.
/// Throws ReplayDivergence if the world refuses an action or answers with a
/// different observation than the one recorded.
EnvSnapshot collect_env_knowledge(const TaskCatalog& catalog, const Trajectory& trajectory);

/// Triples relating to `objects`, and the rest; both keep input order.
std::pair<std::vector<Triple>, std::vector<Triple>> partition_related(const std::vector<Triple>& triples,
                                                                     const std::set<EntityId>& objects);

/// Query text for an environmental instance: the goal and the sub-goal name,
/// rendered like the agent's environmental query.
std::string env_query_text(const std::string& goal, const std::string& subgoal_name);

/// Per sub-goal: the related triples P become positives, the rest N are the
/// negative pool. The first min(|P|, |N|) positives each get min(m, |N|)
/// distinct negatives drawn with the seeded generator.
std::vector<TrainingInstance> build_env_dataset(const EnvSnapshot& snapshot, const Trajectory& trajectory, int m,
                                                std::uint64_t seed);

/// Cosine of the embeddings of the two rendered action lists; 0 if either is
/// degenerate.
double subgoal_similarity(const SubGoal& a, const SubGoal& b, const TextEncoder& model);

/// A sub-goal together with the environmental triples known when it began.
struct ExpSource {
  SubGoal subgoal;
  std::vector<Triple> env_before;
};

/// Flattens trajectories and their snapshots into one list, in order.
std::vector<ExpSource> exp_sources(const std::vector<Trajectory>& trajectories,
                                   const std::vector<EnvSnapshot>& snapshots);

/// Every ordered pair (i, j), i != j, with similarity strictly above theta.
std::set<std::pair<std::size_t, std::size_t>> similar_pairs(const std::vector<ExpSource>& sources,
                                                            const TextEncoder& model, double theta);

/// Query for an experiential instance: the sub-goal's related triples, one
/// per line, then its actions, one per line.
std::string exp_query_text(const ExpSource& source);

/// One instance per similar pair (i, j): query from sub-goal i, positive the
/// rendered unit of j, and m negatives drawn from units of sub-goals paired
/// with neither i nor itself, distinct in text from the positive. Pairs with
/// fewer than m such candidates are skipped with a warning.
std::vector<TrainingInstance> build_exp_dataset(const std::vector<ExpSource>& sources, const TextEncoder& base_model,
                                                double theta, int m, std::uint64_t seed);

struct DatasetManifest {
  std::string kind;  // "env" or "exp"
  std::uint64_t seed = 0;
  int m = 0;
  std::optional<double> theta;
  /// "task_id:variation" of every source trajectory.
  std::vector<std::string> sources;
  std::size_t instance_count = 0;

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<TrainingInstance> instances;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// One {"query", "positive", "negatives"} object per line.
std::string serialize_instances(const std::vector<TrainingInstance>& instances);
std::vector<TrainingInstance> parse_instances(const std::string& text);

/// Writes `path` (JSON lines) and `path + ".manifest.json"`.
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

std::string source_label(const Trajectory& t);

}  // namespace dualkb
