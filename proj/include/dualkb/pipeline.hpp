#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "dualkb/agent.hpp"
#include "dualkb/dataset_builder.hpp"
#include "dualkb/distiller.hpp"
#include "dualkb/embedder.hpp"
#include "dualkb/microworld.hpp"

namespace dualkb {

/// Expert demonstrations together with what replaying them revealed.
struct ExpertCorpus {
  std::vector<Trajectory> trajectories;
  std::vector<EnvSnapshot> snapshots;

  friend bool operator==(const ExpertCorpus&, const ExpertCorpus&) = default;
};

/// Expert trajectory and replay snapshot for every (task, variation).
ExpertCorpus replay_experts(const TaskCatalog& catalog, const std::vector<std::string>& tasks,
                            const std::vector<int>& variations);

/// Fills every sub-goal's exp_unit from its snapshot.
void distill_corpus(ExpertCorpus& corpus, const DistillerBackend& backend);

/// Units of every distilled sub-goal, in corpus order.
ExpKnowledgeBase exp_kb_from(const ExpertCorpus& corpus);

/// D_env over all trajectories. Trajectory t uses seed + t.
std::vector<TrainingInstance> env_dataset(const ExpertCorpus& corpus, int m, std::uint64_t seed);
std::vector<TrainingInstance> exp_dataset(const ExpertCorpus& corpus, const TextEncoder& base_model, double theta,
                                          int m, std::uint64_t seed);

/// Retrieval benchmark over a dataset, normally one built from held-out
/// variations. The corpus is every distinct positive and negative text. Each
/// distinct query text becomes one query whose relevant documents are all the
/// positives it was paired with.
struct RetrievalBenchmark {
  std::vector<Document> corpus;
  std::vector<EvalQuery> env_queries;
  std::vector<EvalQuery> exp_queries;

  std::size_t query_count() const noexcept { return env_queries.size() + exp_queries.size(); }
};

RetrievalBenchmark retrieval_benchmark(std::span<const TrainingInstance> env_instances,
                                       std::span<const TrainingInstance> exp_instances);

struct BenchmarkRecall {
  double env = 0;
  double exp = 0;
  /// Over all queries of both parts.
  double overall = 0;
};

BenchmarkRecall benchmark_recall(const TextEncoder& model, const RetrievalBenchmark& bench, std::size_t k);

// Serialization of trajectories with their snapshots, one per line.
nlohmann::ordered_json trajectory_to_json(const Trajectory& t);
Trajectory trajectory_from_json(const nlohmann::json& j);
std::string serialize_corpus(const ExpertCorpus& corpus);
ExpertCorpus parse_corpus(const std::string& text);

struct AblationCondition {
  std::string name;
  bool use_kb = true;
  bool tuned = false;
};

/// no-kb, kb-untuned, kb-tuned.
std::vector<AblationCondition> default_conditions();

inline AgentConfig ablation_agent_config() {
  AgentConfig cfg;
  cfg.retrieval.k_candidates = 8;
  return cfg;
}

struct AblationConfig {
  std::vector<std::string> tasks;
  std::vector<int> heldout_variations;
  int episodes = 20;
  double noise = 0.3;
  std::uint64_t seed = 0;
  /// Steps allowed beyond the expert script's length.
  std::size_t budget_slack = 1;
  /// Candidate pool of 8: with the default 32 every knowledge base this size
  /// passes whole to the reranker and the encoder stops mattering.
  AgentConfig agent = ablation_agent_config();
};

struct ConditionScores {
  std::string name;
  std::vector<double> scores;
  double mean = 0;
  double stddev = 0;
  std::size_t completed = 0;
};

/// Episode e runs tasks[e % |tasks|] at heldout[(e / |tasks|) % |heldout|]
/// with noise seed `seed + e`, identically under every condition.
std::vector<ConditionScores> run_ablation(const TaskCatalog& catalog, const ExpKnowledgeBase& exp_kb,
                                          const TextEncoder& untuned, const TextEncoder& tuned,
                                          const AblationConfig& cfg,
                                          const std::vector<AblationCondition>& conditions = default_conditions());

}  // namespace dualkb
