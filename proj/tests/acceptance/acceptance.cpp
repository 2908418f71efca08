// Acceptance suite: one PASS/FAIL line per criterion. Every tolerance, size,
// seed and time limit is pinned below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "dualkb/agent.hpp"
#include "dualkb/dataset_builder.hpp"
#include "dualkb/error.hpp"
#include "dualkb/kb_io.hpp"
#include "dualkb/pipeline.hpp"
#include "dualkb/text.hpp"
#include "support/fixtures.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dualkb;
using namespace dualkb::testing;

namespace {

// 1
constexpr int kSupersessionSequences = 10000;
constexpr std::size_t kSupersessionEntities = 50;
constexpr std::size_t kSupersessionRelations = 5;
constexpr std::size_t kSupersessionMaxLength = 40;
constexpr double kSupersessionSeconds = 5;
// 3
constexpr int kRetrievalBundles = 100;
constexpr std::size_t kRetrievalCorpusSizes[] = {100, 500, 1000};
constexpr double kRetrievalSeconds = 10;
// 4
constexpr double kUniformLossTolerance = 1e-9;
constexpr int kGradientInstances = 100;
constexpr std::size_t kGradientProbes = 20;
constexpr double kGradientStep = 1e-5;
constexpr double kGradientTolerance = 1e-4;
constexpr double kInfoNceSeconds = 30;
// 5
constexpr double kTheta = 0.8;
// 6
constexpr int kReplayVariations = 24;
// 7
constexpr std::uint64_t kShippedSeed = 0;
constexpr std::uint64_t kHeldoutDatasetSeed = 1000;
constexpr int kTrainVariationsEnd = 12;   // 0..11
constexpr int kHeldoutVariationsEnd = 18; // 12..17
constexpr std::size_t kRecallK = 5;
constexpr double kMinRecallGain = 0.15;
constexpr std::size_t kMinFamilies = 3;
constexpr std::size_t kMinInstances = 200;
constexpr double kTrainingSeconds = 120;
// 8
constexpr double kAblationNoise = 0.3;
constexpr int kAblationEpisodes = 20;
constexpr double kAblationSeconds = 180;
// 10
constexpr int kRandomEpisodes = 1000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& why) {
    if (!ok && pass) {
      pass = false;
      detail = why;
    }
  }
};

int failures = 0;

void report(int number, const std::string& name, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o.pass = false;
    o.detail = std::string("exception: ") + e.what();
  }
  if (!o.pass) ++failures;
  std::printf("CRITERION %2d %s  %-34s %7.2fs  %s\n", number, o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0),
              o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* pattern, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

// ---------------------------------------------------------------- criteria

Outcome supersession() {
  Outcome o;
  const auto t0 = Clock::now();
  Rng rng(1);
  const auto rels = relations(kSupersessionRelations);
  RelationRegistry registry;
  for (const auto& r : rels) registry.add(r.name, r.channel);
  for (int seq = 0; seq < kSupersessionSequences && o.pass; ++seq) {
    EnvKnowledgeBase kb(registry);
    std::map<std::pair<std::string, std::string>, Triple> last;
    const std::size_t length = 1 + uniform(rng, kSupersessionMaxLength);
    std::uint64_t step = 0;
    for (std::size_t i = 0; i < length; ++i) {
      step += uniform(rng, 2);  // equal steps are allowed
      const Triple t = random_triple(rng, kSupersessionEntities, rels, step);
      kb.upsert(t);
      last.insert_or_assign(std::make_pair(t.subject.name(), t.relation.name), t);
    }
    o.require(kb.size() == last.size(), "key count differs in sequence " + std::to_string(seq));
    for (const auto& [key, t] : last) {
      const Triple* got = kb.find(t.subject, key.second);
      o.require(got && *got == t, "stale triple in sequence " + std::to_string(seq));
    }
  }
  const double s = seconds_since(t0);
  o.require(s < kSupersessionSeconds, fmt("took %.2fs", s));
  if (o.pass) o.detail = std::to_string(kSupersessionSequences) + " sequences";
  return o;
}

Outcome thermometer() {
  Outcome o;
  const Relation examine = microworld_relations().relation("act:examine");
  EnvKnowledgeBase kb(microworld_relations());
  kb.upsert(make_triple("thermometer", examine, Attribute{"20", "°C"}, 1));
  kb.upsert(make_triple("thermometer", examine, Attribute{"24", "°C"}, 2));
  const auto all = kb.triples();
  o.require(all.size() == 1, "store holds " + std::to_string(all.size()) + " triples");
  if (!all.empty()) {
    o.require(render_triple(all[0]) == "thermometer | act:examine | 24 °C", "got " + render_triple(all[0]));
    if (o.pass) o.detail = render_triple(all[0]);
  }
  return o;
}

Outcome retrieval_equivalence() {
  Outcome o;
  const auto t0 = Clock::now();
  const EmbeddingModel model(3);
  const RetrievalConfig cfg;
  const TokenF1Scorer reranker;
  Rng rng(5);
  std::size_t compared = 0;
  for (std::size_t size : kRetrievalCorpusSizes) {
    std::vector<Document> corpus;
    for (std::size_t i = 0; i < size; ++i) {
      // One document in ten repeats an earlier text so fused scores tie.
      const std::string text = i > 0 && uniform(rng, 10) == 0 ? corpus[uniform(rng, i)].text : random_text(rng, 1, 12);
      corpus.push_back(Document{static_cast<std::int64_t>(i), text, {}});
    }
    const RetrievalIndex index(corpus, model);
    for (int b = 0; b < kRetrievalBundles && o.pass; ++b) {
      QueryBundle bundle{random_text(rng, 0, 6), random_text(rng, 0, 6), {}};
      for (std::size_t j = uniform(rng, 3); j > 0; --j) bundle.env_context.push_back(corpus[uniform(rng, size)]);
      if (query_text(bundle).empty()) bundle.task_description = random_text(rng, 1, 3);
      std::vector<std::int64_t> got;
      for (const auto& d : retrieve(index, bundle, cfg, reranker).docs) got.push_back(d.doc.id);
      o.require(got == exhaustive_retrieve(corpus, bundle, model, cfg),
                "mismatch on corpus " + std::to_string(size) + ", bundle " + std::to_string(b));
      ++compared;
    }
  }
  const double s = seconds_since(t0);
  o.require(s < kRetrievalSeconds, fmt("took %.2fs", s));
  if (o.pass) o.detail = std::to_string(compared) + " bundles, top-5 identical";
  return o;
}

Outcome info_nce_checks() {
  Outcome o;
  const auto t0 = Clock::now();
  const EmbeddingModel model(7);
  double worst_uniform = 0;
  for (std::size_t m : {1u, 4u, 8u}) {
    TrainingInstance inst{"boil the water", "pot stove", {}};
    for (std::size_t i = 0; i < m; ++i) inst.negatives.push_back(i % 2 ? "stove pot" : "Stove, POT");
    const std::vector<TrainingInstance> batch{inst};
    worst_uniform = std::max(worst_uniform,
                             std::abs(info_nce_loss(model, batch, 0.05) - std::log(static_cast<double>(m + 1))));
  }
  o.require(worst_uniform <= kUniformLossTolerance, fmt("uniform-logit error %.3g", worst_uniform));

  Rng rng(9);
  double worst_grad = 0;
  for (int i = 0; i < kGradientInstances; ++i) {
    TrainingInstance inst{random_text(rng, 1, 8), random_text(rng, 1, 8), {}};
    const std::size_t m = 1 + uniform(rng, 8);
    while (inst.negatives.size() < m) {
      auto n = random_text(rng, 1, 8);
      if (n != inst.positive) inst.negatives.push_back(n);
    }
    worst_grad = std::max(worst_grad, gradient_check(model, inst, 0.05, kGradientProbes, kGradientStep, rng));
  }
  o.require(worst_grad <= kGradientTolerance, fmt("gradient relative error %.3g", worst_grad));
  const double s = seconds_since(t0);
  o.require(s < kInfoNceSeconds, fmt("took %.2fs", s));
  if (o.pass) o.detail = fmt("uniform err %.1e, max grad rel err %.1e", worst_uniform, worst_grad);
  return o;
}

Outcome dataset_oracle() {
  Outcome o;
  const auto catalog = TaskCatalog::builtin();
  const auto traj = hand_built_find_focus();
  const auto snap = collect_env_knowledge(catalog, traj);
  o.require(snap.before_subgoal == replay_oracle(catalog, traj), "snapshots differ from the replay oracle");
  for (std::size_t i = 0; i < traj.subgoals.size(); ++i) {
    // Objects named by the sub-goal's actions, read straight off the text.
    std::set<EntityId> objects;
    for (const auto& s : traj.subgoals[i].steps) {
      const auto words = tokenize(s.action);
      const std::size_t skip = words[0] == "focus" ? 2 : 1;
      std::string arg;
      for (std::size_t w = skip; w < words.size(); ++w) arg += (arg.empty() ? "" : " ") + words[w];
      objects.emplace(arg);
    }
    std::vector<Triple> p, n;
    for (const auto& t : snap.before_subgoal[i]) (related_oracle(t, objects) ? p : n).push_back(t);
    const auto [got_p, got_n] = partition_related(snap.before_subgoal[i], interacted_objects(traj.subgoals[i]));
    o.require(got_p == p && got_n == n, "P/N differ for sub-goal " + std::to_string(i));
  }

  auto pairs_match = [&](const std::vector<ExpSource>& sources) {
    const EmbeddingModel model(0);
    std::set<std::pair<std::size_t, std::size_t>> oracle;
    for (std::size_t i = 0; i < sources.size(); ++i) {
      for (std::size_t j = 0; j < sources.size(); ++j) {
        if (i == j) continue;
        const auto a = model.embed(join(actions_of(sources[i].subgoal), "\n"));
        const auto b = model.embed(join(actions_of(sources[j].subgoal), "\n"));
        if (a.degenerate || b.degenerate) continue;
        if (a.vector.dot(b.vector) / (a.vector.norm() * b.vector.norm()) > kTheta) oracle.emplace(i, j);
      }
    }
    return similar_pairs(sources, model, kTheta) == oracle;
  };
  o.require(pairs_match(exp_sources({traj}, {snap})), "D_exp pairs differ on the hand-built trajectory");
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0, 1, 2});
  corpus.trajectories.push_back(traj);
  corpus.snapshots.push_back(snap);
  o.require(pairs_match(exp_sources(corpus.trajectories, corpus.snapshots)), "D_exp pairs differ on the corpus");
  if (o.pass) o.detail = "P/N and theta-pairs match brute force";
  return o;
}

Outcome replay_fidelity() {
  Outcome o;
  auto catalog = TaskCatalog::builtin();
  catalog.load_file(std::string(DUALKB_DATA_DIR) + "/tasks/sample_tasks.json");
  std::size_t count = 0;
  for (const auto& id : catalog.task_ids()) {
    const bool builtin = std::find(builtin_task_ids().begin(), builtin_task_ids().end(), id) != builtin_task_ids().end();
    for (int v = 0; v < (builtin ? kReplayVariations : 3); ++v) {
      const auto snap = collect_env_knowledge(catalog, expert_trajectory(catalog, id, v));
      o.require(snap.final_score == 100.0, id + ":" + std::to_string(v) + " replays to " +
                                               std::to_string(snap.final_score));
      ++count;
    }
  }
  if (o.pass) o.detail = std::to_string(count) + " expert trajectories";
  return o;
}

/// Shared by criteria 7 and 8.
struct Trained {
  ExpertCorpus train_corpus;
  EmbeddingModel base{kShippedSeed};
  std::optional<EmbeddingModel> tuned;
};

Outcome training_effect(Trained& state) {
  Outcome o;
  const auto t0 = Clock::now();
  const auto catalog = TaskCatalog::builtin();
  std::vector<int> train_v, held_v;
  for (int v = 0; v < kTrainVariationsEnd; ++v) train_v.push_back(v);
  for (int v = kTrainVariationsEnd; v < kHeldoutVariationsEnd; ++v) held_v.push_back(v);
  state.train_corpus = replay_experts(catalog, builtin_task_ids(), train_v);
  distill_corpus(state.train_corpus, RuleBased{});
  auto held = replay_experts(catalog, builtin_task_ids(), held_v);
  distill_corpus(held, RuleBased{});

  const TrainConfig cfg;  // the default config, seed kShippedSeed
  auto data = env_dataset(state.train_corpus, cfg.m, kShippedSeed);
  const auto exp = exp_dataset(state.train_corpus, state.base, kTheta, cfg.m, kShippedSeed);
  data.insert(data.end(), exp.begin(), exp.end());
  o.require(builtin_task_ids().size() >= kMinFamilies, "too few task families");
  o.require(data.size() >= kMinInstances, "only " + std::to_string(data.size()) + " instances");
  state.tuned = train(state.base, data, cfg);

  const auto bench = retrieval_benchmark(env_dataset(held, cfg.m, kHeldoutDatasetSeed),
                                         exp_dataset(held, state.base, kTheta, cfg.m, kHeldoutDatasetSeed));
  const double untuned = benchmark_recall(state.base, bench, kRecallK).overall;
  const double tuned = benchmark_recall(*state.tuned, bench, kRecallK).overall;
  o.require(tuned > untuned, "tuned does not beat untuned");
  o.require(tuned - untuned >= kMinRecallGain, fmt("gain %.3f below the pinned margin", tuned - untuned));
  const double s = seconds_since(t0);
  o.require(s < kTrainingSeconds, fmt("took %.2fs", s));
  o.detail = fmt("Recall@5 untuned %.3f tuned %.3f", untuned, tuned) + " (" + std::to_string(data.size()) +
             " instances, " + std::to_string(bench.query_count()) + " held-out queries)" + o.detail;
  return o;
}

Outcome ablation_ordering(const Trained& state) {
  Outcome o;
  const auto t0 = Clock::now();
  if (!state.tuned) {
    o.require(false, "no tuned model");
    return o;
  }
  const auto catalog = TaskCatalog::builtin();
  AblationConfig cfg;
  cfg.tasks = builtin_task_ids();
  for (int v = kTrainVariationsEnd; v < kHeldoutVariationsEnd; ++v) cfg.heldout_variations.push_back(v);
  cfg.episodes = kAblationEpisodes;
  cfg.noise = kAblationNoise;
  cfg.seed = kShippedSeed;
  const auto r = run_ablation(catalog, exp_kb_from(state.train_corpus), state.base, *state.tuned, cfg);
  const double none = r[0].mean, plain = r[1].mean, tuned = r[2].mean;
  o.require(plain >= none, "kb-untuned below no-kb");
  o.require(tuned > plain, "kb-tuned does not strictly beat kb-untuned");
  const double s = seconds_since(t0);
  o.require(s < kAblationSeconds, fmt("took %.2fs", s));
  o.detail = fmt("no-kb %.2f  kb-untuned %.2f  kb-tuned %.2f", none, plain, tuned) +
             (o.pass ? "" : " (" + o.detail + ")");
  return o;
}

Outcome round_trips() {
  Outcome o;
  Rng rng(13);
  const auto rels = relations(6);
  RelationRegistry registry;
  for (const auto& r : rels) registry.add(r.name, r.channel);
  const auto dir = std::filesystem::temp_directory_path() / "dualkb_acceptance";
  std::filesystem::create_directories(dir);

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Triple> batch;
    for (int i = 0; i < 60; ++i) batch.push_back(random_triple(rng, 30, rels, 5));
    EnvKnowledgeBase once(registry), twice(registry);
    once.ingest(batch, 5);
    twice.ingest(batch, 5);
    twice.ingest(batch, 5);
    o.require(once == twice, "double ingestion differs");

    ExpKnowledgeBase exp;
    for (int i = 0; i < 10; ++i) exp.store(random_unit(rng, 30, rels));
    const auto path = (dir / "kb.jsonl").string();
    save_knowledge(path, once, exp);
    const auto loaded = load_knowledge(path);
    o.require(loaded.env == once && loaded.exp == exp, "knowledge file round-trip");

    // Same final content inserted in a different order.
    std::vector<Triple> finals = once.triples();
    std::shuffle(finals.begin(), finals.end(), rng);
    EnvKnowledgeBase shuffled(registry);
    for (const auto& t : finals) shuffled.upsert(t);
    o.require(serialize_knowledge(shuffled, exp) == serialize_knowledge(once, exp), "serialization depends on order");
  }

  const auto catalog = TaskCatalog::builtin();
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0, 1});
  distill_corpus(corpus, RuleBased{});
  Dataset d;
  d.instances = env_dataset(corpus, 8, 0);
  d.manifest = DatasetManifest{"env", 0, 8, std::nullopt, {"boil-water:0"}, d.instances.size()};
  const auto dpath = (dir / "d.jsonl").string();
  save_dataset(dpath, d);
  o.require(load_dataset(dpath) == d, "dataset round-trip");

  const EmbeddingModel model(21);
  const auto mpath = (dir / "m.bin").string();
  save_model(mpath, model);
  o.require(load_model(mpath) == model, "model round-trip");
  std::filesystem::remove_all(dir);
  if (o.pass) o.detail = "KBs, datasets and models";
  return o;
}

Outcome episodes() {
  Outcome o;
  const auto catalog = TaskCatalog::builtin();
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0, 1, 2});
  distill_corpus(corpus, RuleBased{});
  const auto exp_kb = exp_kb_from(corpus);
  const EmbeddingModel model(0);
  Rng rng(17);

  auto run_once = [&](const std::string& task, int v, double p, std::uint64_t seed, std::size_t budget, bool use_kb,
                      bool scripted) {
    std::unique_ptr<DecisionModel> dm;
    if (scripted) {
      dm = std::make_unique<ScriptedOracle>(ScriptedOracle::for_task(catalog, task, v));
    } else {
      dm = std::make_unique<NoisyScripted>(NoisyScripted::for_task(catalog, task, v, p, seed));
    }
    Simulator env(catalog);
    const auto first = env.reset(task, v);
    EnvKnowledgeBase kb(microworld_relations());
    AgentConfig cfg;
    cfg.use_kb = use_kb;
    cfg.retrieval.k_candidates = cfg.retrieval.k_final + uniform(rng, 32);
    return run_episode(env, first, kb, exp_kb, *dm, use_kb ? &model : nullptr, cfg, budget);
  };

  std::size_t over_budget = 0, nondeterministic = 0;
  for (int e = 0; e < kRandomEpisodes; ++e) {
    const std::string task = builtin_task_ids()[uniform(rng, builtin_task_ids().size())];
    const int v = static_cast<int>(uniform(rng, 30));
    const double p = static_cast<double>(uniform(rng, 11)) / 10.0;
    const std::uint64_t seed = rng();
    const std::size_t budget = 1 + uniform(rng, 25);
    const bool use_kb = uniform(rng, 2) == 0;
    const bool scripted = uniform(rng, 5) == 0;
    const Rng saved = rng;
    const auto a = run_once(task, v, p, seed, budget, use_kb, scripted);
    rng = saved;
    const auto b = run_once(task, v, p, seed, budget, use_kb, scripted);
    over_budget += a.steps_used > budget ? 1 : 0;
    nondeterministic += a == b ? 0 : 1;
  }
  o.require(over_budget == 0, std::to_string(over_budget) + " episodes exceeded the budget");
  o.require(nondeterministic == 0, std::to_string(nondeterministic) + " episodes were not reproducible");
  if (o.pass) o.detail = std::to_string(kRandomEpisodes) + " randomized episodes, each run twice";
  return o;
}

}  // namespace

int main() {
  set_log_sink([](std::string_view) {});
  Trained state;
  report(1, "supersession exactness", supersession);
  report(2, "thermometer narrative", thermometer);
  report(3, "retrieval oracle equivalence", retrieval_equivalence);
  report(4, "InfoNCE analytic checks", info_nce_checks);
  report(5, "dataset-builder oracle", dataset_oracle);
  report(6, "replay fidelity", replay_fidelity);
  report(7, "training effect", [&] { return training_effect(state); });
  report(8, "ablation ordering", [&] { return ablation_ordering(state); });
  report(9, "idempotence and round-trip", round_trips);
  report(10, "episode determinism and budget", episodes);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
