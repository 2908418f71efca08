#include "doctest.h"
#include "dualkb/error.hpp"
#include "dualkb/pipeline.hpp"

using namespace dualkb;

TEST_CASE("expert corpora round-trip through text") {
  const auto catalog = TaskCatalog::builtin();
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0, 9});
  distill_corpus(corpus, RuleBased{});
  const auto text = serialize_corpus(corpus);
  CHECK(parse_corpus(text) == corpus);
  CHECK(serialize_corpus(parse_corpus(text)) == text);

  auto raw = replay_experts(catalog, {"find-focus"}, {1});
  CHECK(parse_corpus(serialize_corpus(raw)) == raw);
  CHECK_THROWS_AS(parse_corpus("{\"trajectory\": {}}\n"), ParseError);
}

TEST_CASE("expert knowledge base holds one unit per sub-goal") {
  const auto catalog = TaskCatalog::builtin();
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0});
  CHECK_THROWS_AS(exp_kb_from(corpus), Error);
  distill_corpus(corpus, RuleBased{});
  std::size_t subgoals = 0;
  for (const auto& t : corpus.trajectories) subgoals += t.subgoals.size();
  const auto kb = exp_kb_from(corpus);
  CHECK(kb.size() == subgoals);
  CHECK(kb.at(0) == *corpus.trajectories[0].subgoals[0].exp_unit);
}

TEST_CASE("benchmark pools distinct texts and groups queries") {
  const std::vector<TrainingInstance> env{
      {"q1", "a", {"b", "c"}},
      {"q1", "b", {"a", "c"}},
      {"q2", "c", {"a"}},
      {"q1", "a", {"c"}},
  };
  const std::vector<TrainingInstance> exp{{"q3", "d", {"a", "e"}}};
  const auto bench = retrieval_benchmark(env, exp);
  REQUIRE(bench.corpus.size() == 5);
  for (std::size_t i = 0; i < bench.corpus.size(); ++i) CHECK(bench.corpus[i].id == static_cast<std::int64_t>(i));
  auto id_of = [&](const std::string& text) {
    for (const auto& d : bench.corpus) {
      if (d.text == text) return d.id;
    }
    FAIL("missing text " << text);
    return std::int64_t{-1};
  };
  REQUIRE(bench.env_queries.size() == 2);
  CHECK(bench.env_queries[0].query == "q1");
  CHECK(bench.env_queries[0].relevant == std::vector<std::int64_t>{id_of("a"), id_of("b")});
  CHECK(bench.env_queries[1].relevant == std::vector<std::int64_t>{id_of("c")});
  REQUIRE(bench.exp_queries.size() == 1);
  CHECK(bench.exp_queries[0].relevant == std::vector<std::int64_t>{id_of("d")});
  CHECK(bench.query_count() == 3);

  // Every document is within reach at k = |corpus|.
  const EmbeddingModel model(0, 8, 1024);
  const auto r = benchmark_recall(model, bench, bench.corpus.size());
  CHECK(r.env == 1.0);
  CHECK(r.exp == 1.0);
  CHECK(r.overall == 1.0);
}

TEST_CASE("ablation episodes are paired across conditions") {
  const auto catalog = TaskCatalog::builtin();
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0, 1});
  distill_corpus(corpus, RuleBased{});
  const auto kb = exp_kb_from(corpus);
  const EmbeddingModel model(0);
  AblationConfig cfg;
  cfg.tasks = builtin_task_ids();
  cfg.heldout_variations = {12, 13};
  cfg.episodes = 8;
  cfg.noise = 0.0;
  const auto scores = run_ablation(catalog, kb, model, model, cfg);
  REQUIRE(scores.size() == 3);
  for (const auto& s : scores) {
    // Without noise every condition replays the expert exactly.
    CHECK(s.scores.size() == 8);
    CHECK(s.mean == doctest::Approx(100.0));
    CHECK(s.completed == 8);
    CHECK(s.stddev == doctest::Approx(0.0));
  }
  cfg.noise = 0.5;
  const auto a = run_ablation(catalog, kb, model, model, cfg);
  const auto b = run_ablation(catalog, kb, model, model, cfg);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i].scores == b[i].scores);
  // The same model under both labels must give the same scores.
  CHECK(a[1].scores == a[2].scores);

  cfg.episodes = 0;
  CHECK_THROWS_AS(run_ablation(catalog, kb, model, model, cfg), Error);
}
