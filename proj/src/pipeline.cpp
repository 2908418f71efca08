#include "dualkb/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dualkb/error.hpp"
#include "dualkb/kb_io.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

using nlohmann::ordered_json;

ExpertCorpus replay_experts(const TaskCatalog& catalog, const std::vector<std::string>& tasks,
                            const std::vector<int>& variations) {
  ExpertCorpus out;
  for (const auto& task : tasks) {
    for (int v : variations) {
      Trajectory t = expert_trajectory(catalog, task, v);
      out.snapshots.push_back(collect_env_knowledge(catalog, t));
      out.trajectories.push_back(std::move(t));
    }
  }
  return out;
}

void distill_corpus(ExpertCorpus& corpus, const DistillerBackend& backend) {
  for (std::size_t t = 0; t < corpus.trajectories.size(); ++t) {
    auto& traj = corpus.trajectories[t];
    for (std::size_t i = 0; i < traj.subgoals.size(); ++i) {
      traj.subgoals[i].exp_unit = extract_unit(traj.subgoals[i], corpus.snapshots.at(t).before_subgoal.at(i), backend,
                                               Provenance::Expert, traj.task_id);
    }
  }
}

ExpKnowledgeBase exp_kb_from(const ExpertCorpus& corpus) {
  ExpKnowledgeBase kb;
  for (const auto& t : corpus.trajectories) {
    for (const auto& sg : t.subgoals) {
      if (!sg.exp_unit) throw Error(ErrorKind::InvalidArgument, "corpus is not distilled: " + source_label(t));
      kb.store(*sg.exp_unit);
    }
  }
  return kb;
}

std::vector<TrainingInstance> env_dataset(const ExpertCorpus& corpus, int m, std::uint64_t seed) {
  std::vector<TrainingInstance> out;
  for (std::size_t t = 0; t < corpus.trajectories.size(); ++t) {
    auto part = build_env_dataset(corpus.snapshots[t], corpus.trajectories[t], m, seed + t);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::vector<TrainingInstance> exp_dataset(const ExpertCorpus& corpus, const TextEncoder& base_model, double theta,
                                          int m, std::uint64_t seed) {
  return build_exp_dataset(exp_sources(corpus.trajectories, corpus.snapshots), base_model, theta, m, seed);
}

RetrievalBenchmark retrieval_benchmark(std::span<const TrainingInstance> env_instances,
                                       std::span<const TrainingInstance> exp_instances) {
  RetrievalBenchmark out;
  std::map<std::string, std::int64_t> ids;
  auto add = [&](const std::string& text) {
    auto [it, fresh] = ids.emplace(text, static_cast<std::int64_t>(out.corpus.size()));
    if (fresh) out.corpus.push_back(Document{it->second, text, {}});
    return it->second;
  };
  auto queries = [&](std::span<const TrainingInstance> instances, std::vector<EvalQuery>& dst) {
    std::map<std::string, std::size_t> index;
    for (const auto& inst : instances) {
      const std::int64_t pos = add(inst.positive);
      for (const auto& n : inst.negatives) add(n);
      auto [it, fresh] = index.emplace(inst.query, dst.size());
      if (fresh) dst.push_back(EvalQuery{inst.query, {}});
      auto& rel = dst[it->second].relevant;
      if (std::find(rel.begin(), rel.end(), pos) == rel.end()) rel.push_back(pos);
    }
  };
  queries(env_instances, out.env_queries);
  queries(exp_instances, out.exp_queries);
  return out;
}

BenchmarkRecall benchmark_recall(const TextEncoder& model, const RetrievalBenchmark& bench, std::size_t k) {
  BenchmarkRecall r;
  if (!bench.env_queries.empty()) r.env = recall_at_k(model, bench.env_queries, bench.corpus, k);
  if (!bench.exp_queries.empty()) r.exp = recall_at_k(model, bench.exp_queries, bench.corpus, k);
  if (bench.query_count() > 0) {
    r.overall = (r.env * static_cast<double>(bench.env_queries.size()) +
                 r.exp * static_cast<double>(bench.exp_queries.size())) /
                static_cast<double>(bench.query_count());
  }
  return r;
}

ordered_json trajectory_to_json(const Trajectory& t) {
  ordered_json j;
  j["task_id"] = t.task_id;
  j["variation"] = t.variation;
  j["goal"] = t.goal;
  ordered_json subgoals = ordered_json::array();
  for (const auto& sg : t.subgoals) {
    ordered_json s;
    s["name"] = sg.name;
    ordered_json steps = ordered_json::array();
    for (const auto& st : sg.steps) {
      steps.push_back({{"action", st.action}, {"observation", st.observation}, {"milestone_hits", st.milestone_hits}});
    }
    s["steps"] = std::move(steps);
    s["exp_unit"] = sg.exp_unit ? unit_to_json(*sg.exp_unit, 0) : ordered_json();
    subgoals.push_back(std::move(s));
  }
  j["subgoals"] = std::move(subgoals);
  return j;
}

Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory t;
  t.task_id = j.at("task_id").get<std::string>();
  t.variation = j.at("variation").get<int>();
  t.goal = j.at("goal").get<std::string>();
  for (const auto& s : j.at("subgoals")) {
    SubGoal sg;
    sg.name = s.at("name").get<std::string>();
    for (const auto& st : s.at("steps")) {
      sg.steps.push_back(StepRecord{st.at("action").get<std::string>(), st.at("observation").get<std::string>(),
                                    st.at("milestone_hits").get<std::vector<std::size_t>>()});
    }
    if (!s.at("exp_unit").is_null()) sg.exp_unit = unit_from_json(s.at("exp_unit"));
    t.subgoals.push_back(std::move(sg));
  }
  return t;
}

std::string serialize_corpus(const ExpertCorpus& corpus) {
  std::string out;
  for (std::size_t i = 0; i < corpus.trajectories.size(); ++i) {
    ordered_json j;
    j["trajectory"] = trajectory_to_json(corpus.trajectories[i]);
    ordered_json snaps = ordered_json::array();
    for (const auto& before : corpus.snapshots[i].before_subgoal) {
      ordered_json list = ordered_json::array();
      for (const auto& t : before) list.push_back(triple_to_json(t));
      snaps.push_back(std::move(list));
    }
    j["before_subgoal"] = std::move(snaps);
    j["final_score"] = corpus.snapshots[i].final_score;
    ordered_json final_env = ordered_json::array();
    for (const auto& t : corpus.snapshots[i].final_env.triples()) final_env.push_back(triple_to_json(t));
    j["final_env"] = std::move(final_env);
    out += j.dump() + "\n";
  }
  return out;
}

ExpertCorpus parse_corpus(const std::string& text) {
  ExpertCorpus out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.trajectories.push_back(trajectory_from_json(j.at("trajectory")));
      EnvSnapshot snap;
      snap.final_env = EnvKnowledgeBase(microworld_relations());
      for (const auto& list : j.at("before_subgoal")) {
        std::vector<Triple> before;
        for (const auto& t : list) before.push_back(triple_from_json(t));
        snap.before_subgoal.push_back(std::move(before));
      }
      for (const auto& t : j.at("final_env")) snap.final_env.upsert(triple_from_json(t));
      snap.final_score = j.at("final_score").get<double>();
      out.snapshots.push_back(std::move(snap));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

std::vector<AblationCondition> default_conditions() {
  return {{"no-kb", false, false}, {"kb-untuned", true, false}, {"kb-tuned", true, true}};
}

std::vector<ConditionScores> run_ablation(const TaskCatalog& catalog, const ExpKnowledgeBase& exp_kb,
                                          const TextEncoder& untuned, const TextEncoder& tuned,
                                          const AblationConfig& cfg,
                                          const std::vector<AblationCondition>& conditions) {
  if (cfg.tasks.empty() || cfg.heldout_variations.empty() || cfg.episodes < 1) {
    throw Error(ErrorKind::InvalidArgument, "ablation needs tasks, held-out variations and episodes");
  }
  std::vector<ConditionScores> out;
  for (const auto& cond : conditions) {
    ConditionScores cs;
    cs.name = cond.name;
    AgentConfig agent = cfg.agent;
    agent.use_kb = cond.use_kb;
    const TextEncoder* model = cond.tuned ? &tuned : &untuned;
    for (int e = 0; e < cfg.episodes; ++e) {
      const std::size_t ue = static_cast<std::size_t>(e);
      const std::string& task = cfg.tasks[ue % cfg.tasks.size()];
      const int variation = cfg.heldout_variations[(ue / cfg.tasks.size()) % cfg.heldout_variations.size()];
      NoisyScripted dm = NoisyScripted::for_task(catalog, task, variation, cfg.noise, cfg.seed + ue);
      Simulator env(catalog);
      const ActionResult first = env.reset(task, variation);
      EnvKnowledgeBase env_kb(microworld_relations());
      const EpisodeResult r = run_episode(env, first, env_kb, exp_kb, dm, cond.use_kb ? model : nullptr, agent,
                                          dm.script().size() + cfg.budget_slack);
      cs.scores.push_back(r.score);
      cs.completed += r.complete ? 1 : 0;
    }
    double sum = 0;
    for (double s : cs.scores) sum += s;
    cs.mean = sum / static_cast<double>(cs.scores.size());
    double var = 0;
    for (double s : cs.scores) var += (s - cs.mean) * (s - cs.mean);
    cs.stddev = std::sqrt(var / static_cast<double>(cs.scores.size()));
    out.push_back(std::move(cs));
  }
  return out;
}

}  // namespace dualkb
