#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "doctest.h"
#include "dualkb/error.hpp"
#include "dualkb/info_nce.hpp"
#include "dualkb/pipeline.hpp"
#include "dualkb/text.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace dualkb;
using namespace dualkb::testing;

namespace {

const EmbeddingModel& shared_model() {
  static const EmbeddingModel model(0);
  return model;
}

TrainingInstance random_instance(Rng& rng, std::size_t m) {
  TrainingInstance inst{random_text(rng, 2, 6), random_text(rng, 2, 6), {}};
  while (inst.negatives.size() < m) {
    auto n = random_text(rng, 2, 6);
    if (n != inst.positive) inst.negatives.push_back(n);
  }
  return inst;
}

}  // namespace

TEST_CASE("tokenizer lowercases and splits on non-alphanumerics") {
  CHECK(tokenize("").empty());
  CHECK(tokenize("  Put the POT, in-the stove!") ==
        std::vector<std::string>{"put", "the", "pot", "in", "the", "stove"});
  CHECK(tokenize("24°C") == std::vector<std::string>{"24", "c"});
}

TEST_CASE("FNV-1a matches published test vectors") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("featurize counts hashed tokens") {
  CHECK(featurize("").empty());
  const auto fv = featurize("Pot pot POT");
  REQUIRE(fv.entries.size() == 1);
  CHECK(fv.entries[0].second == 3.0);
  CHECK(fv.entries[0].first == fnv1a64("pot") % kFeatureDim);

  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto text = random_text(rng, 1, 12);
    std::map<std::uint32_t, double> oracle;
    for (const auto& t : tokenize(text)) oracle[static_cast<std::uint32_t>(fnv1a64(t) % kFeatureDim)] += 1;
    const auto got = featurize(text);
    REQUIRE(got.entries.size() == oracle.size());
    std::size_t j = 0;
    for (const auto& [bucket, count] : oracle) {
      CHECK(got.entries[j].first == bucket);
      CHECK(got.entries[j].second == count);
      ++j;
    }
  }
}

TEST_CASE("embeddings are unit length, deterministic and scale invariant") {
  const auto& model = shared_model();
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto text = random_text(rng, 1, 10);
    const auto e = model.embed(text);
    REQUIRE_FALSE(e.degenerate);
    CHECK(std::abs(e.vector.norm() - 1.0) <= 1e-9);
    CHECK(model.embed(text).vector == e.vector);
    // Repeating every token multiplies all counts by the same factor.
    const auto doubled = model.embed(text + " " + text).vector;
    CHECK((doubled - e.vector).norm() <= 1e-12);
  }
  const auto empty = model.embed("  ,, ");
  CHECK(empty.degenerate);
  CHECK(empty.vector.isZero());
}

TEST_CASE("cosine matches an explicit projection oracle") {
  const auto& model = shared_model();
  Rng rng(6);
  for (int i = 0; i < 30; ++i) {
    const auto a = random_text(rng, 1, 8);
    const auto b = random_text(rng, 1, 8);
    auto project = [&](const std::string& text) {
      std::map<std::uint32_t, double> counts;
      for (const auto& t : tokenize(text)) counts[static_cast<std::uint32_t>(fnv1a64(t) % kFeatureDim)] += 1;
      double norm = 0;
      for (const auto& [k, v] : counts) norm += v * v;
      Eigen::VectorXd z = Eigen::VectorXd::Zero(64);
      for (const auto& [k, v] : counts) z += (v / std::sqrt(norm)) * model.weights().row(k).transpose();
      return z;
    };
    const auto za = project(a);
    const auto zb = project(b);
    const double oracle = za.dot(zb) / (za.norm() * zb.norm());
    CHECK(model.embed(a).vector.dot(model.embed(b).vector) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("model initialization is seeded and scaled") {
  const EmbeddingModel a(42, 8, 4096);
  const EmbeddingModel b(42, 8, 4096);
  const EmbeddingModel c(43, 8, 4096);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  const double var = a.weights().array().square().mean();
  CHECK(var == doctest::Approx(1.0 / 4096).epsilon(0.05));
}

TEST_CASE("model files round-trip and reject corruption") {
  const EmbeddingModel model(9, 4, 256);
  const auto path = (std::filesystem::temp_directory_path() / "dualkb_unit_model.bin").string();
  save_model(path, model);
  CHECK(load_model(path) == model);
  {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    out << "x";
  }
  CHECK_THROWS_AS(load_model(path), ParseError);
  {
    std::ofstream out(path, std::ios::trunc);
    out << "dualkb-model 7 256 4 9\n";
  }
  try {
    load_model(path);
    FAIL("expected SchemaVersionMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SchemaVersionMismatch);
  }
  std::filesystem::remove(path);
}

TEST_CASE("uniform logits give ln(m + 1)") {
  const auto& model = shared_model();
  for (std::size_t m : {1u, 4u, 8u}) {
    // Positive and negatives share every token, so all similarities agree.
    TrainingInstance inst{"boil the water", "pot stove", {}};
    for (std::size_t i = 0; i < m; ++i) inst.negatives.push_back(i % 2 ? "stove pot" : "POT, stove");
    const std::vector<TrainingInstance> batch{inst};
    CHECK(std::abs(info_nce_loss(model, batch, 0.05) - std::log(static_cast<double>(m + 1))) <= 1e-9);
  }
}

TEST_CASE("stabilized loss matches the direct extended-precision formula") {
  const auto& model = shared_model();
  Rng rng(8);
  std::vector<TrainingInstance> batch;
  for (int i = 0; i < 16; ++i) batch.push_back(random_instance(rng, 8));
  const double got = info_nce_loss(model, batch, 0.05);
  CHECK(got >= 0);
  CHECK(std::abs(got - static_cast<double>(info_nce_oracle(model, batch, 0.05))) <= 1e-9);
}

TEST_CASE("info_nce_terms survives huge logits") {
  Eigen::VectorXd sims(3);
  sims << 1.0, -1.0, 0.5;
  const auto t = info_nce_terms(sims, 1e-4);
  CHECK(std::isfinite(t.loss));
  CHECK(t.loss >= 0);
  CHECK(t.grad.sum() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("analytic gradient agrees with central differences") {
  const auto& model = shared_model();
  Rng rng(10);
  const auto inst = random_instance(rng, 8);
  CHECK(gradient_check(model, inst, 0.05, 50, 1e-5, rng) <= 1e-4);
}

TEST_CASE("gradient edge cases") {
  const auto& model = shared_model();
  Rng rng(12);
  SUBCASE("empty query gives a zero gradient") {
    TrainingInstance inst{"", "pot", {"stove"}};
    const std::vector<TrainingInstance> batch{inst};
    // With a degenerate query every similarity is 0, so nothing moves.
    const auto grad = info_nce_grad(model, batch, 0.05);
    for (const auto& [row, values] : grad.rows()) CHECK(values.isZero());
  }
  SUBCASE("batch gradient is the mean of instance gradients") {
    const auto a = random_instance(rng, 4);
    const auto b = random_instance(rng, 4);
    const std::vector<TrainingInstance> both{a, b}, only_a{a}, only_b{b};
    const auto g = info_nce_grad(model, both, 0.05).to_dense();
    const auto ga = info_nce_grad(model, only_a, 0.05).to_dense();
    const auto gb = info_nce_grad(model, only_b, 0.05).to_dense();
    CHECK((g - 0.5 * (ga + gb)).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("invalid instances are refused") {
    const std::vector<TrainingInstance> none{{"q", "p", {}}};
    CHECK_THROWS_AS(info_nce_loss(model, none, 0.05), Error);
    const std::vector<TrainingInstance> leak{{"q", "p", {"p"}}};
    CHECK_THROWS_AS(info_nce_loss(model, leak, 0.05), Error);
  }
}

TEST_CASE("training is deterministic and lowers the loss") {
  const auto catalog = TaskCatalog::builtin();
  auto corpus = replay_experts(catalog, builtin_task_ids(), {0, 1, 2, 3, 4});
  auto data = env_dataset(corpus, 8, 0);
  REQUIRE(data.size() >= 100);
  const EmbeddingModel base(0);

  TrainConfig zero;
  zero.epochs = 0;
  CHECK(train(base, data, zero) == base);

  TrainConfig cfg;
  cfg.epochs = 4;
  TrainReport r1, r2;
  const auto m1 = train(base, data, cfg, &r1);
  const auto m2 = train(base, data, cfg, &r2);
  CHECK(m1 == m2);
  CHECK(r1.epoch_losses == r2.epoch_losses);
  REQUIRE(r1.epoch_losses.size() == 4);
  CHECK(r1.epoch_losses[1] < r1.epoch_losses[0]);
  CHECK(r1.epoch_losses[2] < r1.epoch_losses[1]);

  cfg.seed = 1;
  CHECK_FALSE(train(base, data, cfg) == m1);
}

TEST_CASE("recall at k") {
  const auto& model = shared_model();
  Rng rng(14);
  std::vector<Document> corpus;
  for (std::int64_t i = 0; i < 40; ++i) corpus.push_back(Document{i, random_text(rng, 2, 8), {}});
  std::vector<EvalQuery> queries;
  for (int i = 0; i < 20; ++i) {
    queries.push_back(EvalQuery{random_text(rng, 2, 6), {static_cast<std::int64_t>(uniform(rng, 40)),
                                                          static_cast<std::int64_t>(uniform(rng, 40))}});
  }
  SUBCASE("k covering the corpus") { CHECK(recall_at_k(model, queries, corpus, 40) == 1.0); }
  SUBCASE("empty eval set warns and yields 0") {
    std::vector<std::string> warnings;
    set_log_sink([&](std::string_view w) { warnings.emplace_back(w); });
    CHECK(recall_at_k(model, std::vector<EvalQuery>{}, corpus, 5) == 0.0);
    set_log_sink(nullptr);
    REQUIRE(warnings.size() == 1);
    CHECK(warnings[0].find("EmptyEvalSet") != std::string::npos);
  }
  SUBCASE("unknown relevant id") {
    const std::vector<EvalQuery> bad{{"pot", {99}}};
    CHECK_THROWS_AS(recall_at_k(model, bad, corpus, 5), Error);
  }
  SUBCASE("matches exhaustive scoring") {
    std::size_t hits = 0;
    for (const auto& q : queries) {
      std::vector<std::pair<double, std::int64_t>> all;
      for (const auto& d : corpus) all.emplace_back(-dense_score(q.query, d, model), d.id);
      std::sort(all.begin(), all.end());
      bool hit = false;
      for (std::size_t i = 0; i < 5; ++i) {
        hit |= std::find(q.relevant.begin(), q.relevant.end(), all[i].second) != q.relevant.end();
      }
      hits += hit;
    }
    CHECK(recall_at_k(model, queries, corpus, 5) == static_cast<double>(hits) / 20.0);
  }
}
