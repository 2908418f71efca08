#include "dualkb/dataset_builder.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "dualkb/error.hpp"
#include "dualkb/info_nce.hpp"
#include "dualkb/kb_io.hpp"
#include "dualkb/retrieval.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

/// `count` distinct indices from [0, n) by partial Fisher-Yates.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

EnvSnapshot collect_env_knowledge(const TaskCatalog& catalog, const Trajectory& trajectory) {
  if (trajectory.subgoals.empty()) throw Error(ErrorKind::InvalidArgument, "trajectory has no sub-goals");
  Simulator sim(catalog);
  EnvSnapshot out;
  out.final_env = EnvKnowledgeBase(microworld_relations());
  const ActionResult first = sim.reset(trajectory.task_id, trajectory.variation);
  out.final_env.ingest(first.facts, sim.state().step);
  for (std::size_t i = 0; i < trajectory.subgoals.size(); ++i) {
    out.before_subgoal.push_back(out.final_env.triples());
    for (const auto& s : trajectory.subgoals[i].steps) {
      const ActionResult r = sim.step(s.action);
      if (r.refused) {
        throw Error(ErrorKind::ReplayDivergence, "sub-goal " + std::to_string(i) + ": action '" + s.action +
                                                     "' was refused at step " + std::to_string(sim.state().step));
      }
      if (!s.observation.empty() && r.observation != s.observation) {
        throw Error(ErrorKind::ReplayDivergence, "sub-goal " + std::to_string(i) + ": action '" + s.action +
                                                     "' produced a different observation");
      }
      out.final_env.ingest(r.facts, sim.state().step);
    }
  }
  out.final_score = sim.score();
  return out;
}

std::pair<std::vector<Triple>, std::vector<Triple>> partition_related(const std::vector<Triple>& triples,
                                                                     const std::set<EntityId>& objects) {
  std::pair<std::vector<Triple>, std::vector<Triple>> out;
  for (const auto& t : triples) (is_related(t, objects) ? out.first : out.second).push_back(t);
  return out;
}

std::string env_query_text(const std::string& goal, const std::string& subgoal_name) {
  return query_text(QueryBundle{goal, subgoal_name, {}});
}

std::vector<TrainingInstance> build_env_dataset(const EnvSnapshot& snapshot, const Trajectory& trajectory, int m,
                                                std::uint64_t seed) {
  if (m < 1) throw Error(ErrorKind::InvalidArgument, "m must be >= 1");
  if (snapshot.before_subgoal.size() != trajectory.subgoals.size()) {
    throw Error(ErrorKind::InvalidArgument, "snapshot does not match the trajectory's sub-goals");
  }
  std::mt19937_64 rng(seed);
  std::vector<TrainingInstance> out;
  for (std::size_t i = 0; i < trajectory.subgoals.size(); ++i) {
    const SubGoal& sg = trajectory.subgoals[i];
    const auto [positives, negatives] = partition_related(snapshot.before_subgoal[i], interacted_objects(sg));
    const std::size_t count = std::min(positives.size(), negatives.size());
    if (count == 0) {
      log_warning("sub-goal '" + sg.name + "' of " + source_label(trajectory) + " has " +
                  std::to_string(positives.size()) + " related and " + std::to_string(negatives.size()) +
                  " unrelated triples; no instances");
      continue;
    }
    const std::string query = env_query_text(trajectory.goal, sg.name);
    const std::size_t draw = std::min(static_cast<std::size_t>(m), negatives.size());
    for (std::size_t p = 0; p < count; ++p) {
      TrainingInstance inst{query, render_triple(positives[p]), {}};
      for (std::size_t n : sample_indices(negatives.size(), draw, rng)) {
        inst.negatives.push_back(render_triple(negatives[n]));
      }
      out.push_back(std::move(inst));
    }
  }
  return out;
}

double subgoal_similarity(const SubGoal& a, const SubGoal& b, const TextEncoder& model) {
  const Embedding ea = model.embed(render_actions(a));
  const Embedding eb = model.embed(render_actions(b));
  if (ea.degenerate || eb.degenerate) return 0.0;
  return cosine_similarity(ea.vector, eb.vector);
}

std::vector<ExpSource> exp_sources(const std::vector<Trajectory>& trajectories,
                                   const std::vector<EnvSnapshot>& snapshots) {
  if (trajectories.size() != snapshots.size()) {
    throw Error(ErrorKind::InvalidArgument, "one snapshot per trajectory is required");
  }
  std::vector<ExpSource> out;
  for (std::size_t t = 0; t < trajectories.size(); ++t) {
    if (snapshots[t].before_subgoal.size() != trajectories[t].subgoals.size()) {
      throw Error(ErrorKind::InvalidArgument, "snapshot does not match " + source_label(trajectories[t]));
    }
    for (std::size_t i = 0; i < trajectories[t].subgoals.size(); ++i) {
      out.push_back(ExpSource{trajectories[t].subgoals[i], snapshots[t].before_subgoal[i]});
    }
  }
  return out;
}

std::set<std::pair<std::size_t, std::size_t>> similar_pairs(const std::vector<ExpSource>& sources,
                                                            const TextEncoder& model, double theta) {
  if (!(theta > 0.0 && theta <= 1.0)) throw Error(ErrorKind::InvalidArgument, "theta must lie in (0, 1]");
  std::vector<Embedding> emb;
  emb.reserve(sources.size());
  for (const auto& s : sources) emb.push_back(model.embed(render_actions(s.subgoal)));
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    for (std::size_t j = i + 1; j < sources.size(); ++j) {
      if (emb[i].degenerate || emb[j].degenerate) continue;
      if (cosine_similarity(emb[i].vector, emb[j].vector) > theta) {
        out.emplace(i, j);
        out.emplace(j, i);
      }
    }
  }
  return out;
}

std::string exp_query_text(const ExpSource& source) {
  std::vector<std::string> lines;
  const auto related = partition_related(source.env_before, interacted_objects(source.subgoal)).first;
  for (const auto& t : related) lines.push_back(render_triple(t));
  for (const auto& a : actions_of(source.subgoal)) lines.push_back(a);
  return join(lines, "\n");
}

std::vector<TrainingInstance> build_exp_dataset(const std::vector<ExpSource>& sources, const TextEncoder& base_model,
                                                double theta, int m, std::uint64_t seed) {
  if (m < 1) throw Error(ErrorKind::InvalidArgument, "m must be >= 1");
  std::vector<std::string> rendered;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!sources[i].subgoal.exp_unit) {
      throw Error(ErrorKind::InvalidArgument, "sub-goal " + std::to_string(i) + " has no experiential unit");
    }
    rendered.push_back(render_unit(*sources[i].subgoal.exp_unit));
  }
  const auto pairs = similar_pairs(sources, base_model, theta);
  std::vector<std::set<std::size_t>> partners(sources.size());
  for (const auto& [i, j] : pairs) partners[i].insert(j);

  std::mt19937_64 rng(seed);
  std::vector<TrainingInstance> out;
  for (const auto& [i, j] : pairs) {
    TrainingInstance inst{exp_query_text(sources[i]), rendered[j], {}};
    std::vector<std::string> candidates;
    std::set<std::string> seen{inst.positive};
    for (std::size_t k = 0; k < sources.size(); ++k) {
      if (k == i || partners[i].count(k)) continue;
      if (seen.insert(rendered[k]).second) candidates.push_back(rendered[k]);
    }
    if (candidates.size() < static_cast<std::size_t>(m)) {
      log_warning(std::string(to_string(ErrorKind::InsufficientNegatives)) + ": pair (" + std::to_string(i) + ", " +
                  std::to_string(j) + ") has " + std::to_string(candidates.size()) + " candidate negatives, needs " +
                  std::to_string(m) + "; skipped");
      continue;
    }
    for (std::size_t n : sample_indices(candidates.size(), static_cast<std::size_t>(m), rng)) {
      inst.negatives.push_back(candidates[n]);
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::string serialize_instances(const std::vector<TrainingInstance>& instances) {
  std::string out;
  for (const auto& inst : instances) {
    nlohmann::ordered_json j;
    j["query"] = inst.query;
    j["positive"] = inst.positive;
    j["negatives"] = inst.negatives;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<TrainingInstance> parse_instances(const std::string& text) {
  std::vector<TrainingInstance> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TrainingInstance inst{j.at("query").get<std::string>(), j.at("positive").get<std::string>(),
                            j.at("negatives").get<std::vector<std::string>>()};
      validate_instance(inst);
      out.push_back(std::move(inst));
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

void save_dataset(const std::string& path, const Dataset& dataset) {
  nlohmann::ordered_json m;
  m["kind"] = dataset.manifest.kind;
  m["seed"] = dataset.manifest.seed;
  m["m"] = dataset.manifest.m;
  m["theta"] = dataset.manifest.theta ? nlohmann::ordered_json(*dataset.manifest.theta) : nlohmann::ordered_json();
  m["sources"] = dataset.manifest.sources;
  m["instance_count"] = dataset.instances.size();
  write_file(path, serialize_instances(dataset.instances));
  write_file(path + ".manifest.json", m.dump(2) + "\n");
}

Dataset load_dataset(const std::string& path) {
  Dataset d;
  d.instances = parse_instances(read_file(path));
  try {
    const auto m = nlohmann::json::parse(read_file(path + ".manifest.json"));
    d.manifest.kind = m.at("kind").get<std::string>();
    d.manifest.seed = m.at("seed").get<std::uint64_t>();
    d.manifest.m = m.at("m").get<int>();
    if (!m.at("theta").is_null()) d.manifest.theta = m.at("theta").get<double>();
    d.manifest.sources = m.at("sources").get<std::vector<std::string>>();
    d.manifest.instance_count = m.at("instance_count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::ParseError, "dataset manifest: " + std::string(e.what()));
  }
  if (d.manifest.instance_count != d.instances.size()) {
    throw Error(ErrorKind::ParseError, "dataset manifest counts " + std::to_string(d.manifest.instance_count) +
                                           " instances, file has " + std::to_string(d.instances.size()));
  }
  return d;
}

std::string source_label(const Trajectory& t) { return t.task_id + ":" + std::to_string(t.variation); }

}  // namespace dualkb
