#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "dualkb/error.hpp"
#include "dualkb/microworld.hpp"
#include "dualkb/text.hpp"

using namespace dualkb;

namespace {

/// Every entity name appearing in a fact, including names mentioned inside attribute text.
std::set<std::string> fact_entities(const std::vector<Triple>& facts) {
  std::set<std::string> out;
  for (const auto& f : facts) {
    out.insert(f.subject.name());
    if (auto* e = std::get_if<EntityId>(&f.value)) out.insert(e->name());
  }
  return out;
}

std::set<std::string> world_names(const WorldState& s) {
  std::set<std::string> out{std::string(kAgent)};
  for (const auto& o : s.objects) out.insert(o.name);
  for (const auto& l : s.locations) out.insert(l.name);
  return out;
}

std::string attribute_text(const std::vector<Triple>& facts) {
  std::string out;
  for (const auto& f : facts) {
    if (auto* a = std::get_if<Attribute>(&f.value)) out += a->text + "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("expert trajectories complete every builtin task across variations") {
  const auto catalog = TaskCatalog::builtin();
  for (const auto& id : builtin_task_ids()) {
    for (int v = 0; v < 24; ++v) {
      CAPTURE(id);
      CAPTURE(v);
      const auto t = catalog.instantiate(id, v);
      Simulator sim(catalog);
      sim.reset(id, v);
      for (const auto& a : t.expert_script) {
        const auto r = sim.step(a);
        REQUIRE_FALSE(r.refused);
      }
      CHECK(sim.complete());
      CHECK_FALSE(sim.state().failed);

      const auto traj = expert_trajectory(catalog, id, v);
      CHECK(traj.subgoals.size() == t.spec.milestones.size());
      std::size_t steps = 0;
      for (const auto& sg : traj.subgoals) {
        CHECK_FALSE(sg.steps.empty());
        CHECK(sg.name == sg.steps.back().action);
        steps += sg.steps.size();
      }
      CHECK(steps == t.expert_script.size());
    }
  }
}

TEST_CASE("first twelve variations of each family are pairwise distinct") {
  const auto catalog = TaskCatalog::builtin();
  for (const auto& id : builtin_task_ids()) {
    std::vector<WorldState> seen;
    for (int v = 0; v < 12; ++v) {
      auto s = catalog.instantiate(id, v).initial;
      s.variation = 0;
      for (const auto& prev : seen) CHECK_FALSE(prev == s);
      seen.push_back(s);
    }
  }
}

TEST_CASE("reset and step are deterministic") {
  const auto catalog = TaskCatalog::builtin();
  const auto t = catalog.instantiate("boil-water", 5);
  auto [s1, r1] = reset(catalog, "boil-water", 5);
  auto [s2, r2] = reset(catalog, "boil-water", 5);
  CHECK(s1 == s2);
  CHECK(r1 == r2);
  for (const auto& a : t.expert_script) {
    auto [n1, o1] = step(t.spec, s1, a);
    auto [n2, o2] = step(t.spec, s2, a);
    CHECK(n1 == n2);
    CHECK(o1 == o2);
    s1 = n1;
    s2 = n2;
  }
}

TEST_CASE("refused actions only advance the step counter") {
  const auto catalog = TaskCatalog::builtin();
  const auto t = catalog.instantiate("power-device", 0);
  auto [s, r] = reset(catalog, "power-device", 0);
  for (const char* bad : {"take stove", "go bedroomx", "open apple", "activate fan", "put apple in table", "read hammer"}) {
    auto [n, out] = step(t.spec, s, bad);
    CHECK(out.refused);
    CHECK(out.facts.empty());
    WorldState expect = s;
    expect.step += 1;
    CHECK(n == expect);
  }
  CHECK_THROWS_AS(step(t.spec, s, "dance wildly"), Error);
}

TEST_CASE("observations and facts name the same entities") {
  const auto catalog = TaskCatalog::builtin();
  for (const auto& id : builtin_task_ids()) {
    for (int v = 0; v < 6; ++v) {
      const auto t = catalog.instantiate(id, v);
      auto [s, r] = reset(catalog, id, v);
      std::vector<ActionResult> results{r};
      std::vector<WorldState> states{s};
      for (const auto& a : t.expert_script) {
        auto [n, out] = step(t.spec, s, a);
        s = n;
        results.push_back(out);
        states.push_back(s);
      }
      // also probe every admissible action from the start state
      auto [s0, r0] = reset(catalog, id, v);
      for (const auto& a : admissible_actions(s0)) {
        auto [n, out] = step(t.spec, s0, a);
        CHECK_FALSE(out.refused);
        results.push_back(out);
        states.push_back(n);
      }
      for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& out = results[i];
        const auto named = fact_entities(out.facts);
        const std::string attrs = attribute_text(out.facts);
        for (const auto& name : world_names(states[i])) {
          const bool in_obs = contains_phrase(out.observation, name);
          const bool in_facts = named.count(name) > 0 || contains_phrase(attrs, name);
          CAPTURE(out.observation);
          CAPTURE(name);
          CHECK(in_obs == in_facts);
        }
        for (const auto& f : out.facts) CHECK(f.step_index == states[i].step);
      }
    }
  }
}

TEST_CASE("water boils only on an active stove") {
  const auto catalog = TaskCatalog::builtin();
  const auto t = catalog.instantiate("boil-water", 0);
  auto [s, r] = reset(catalog, "boil-water", 0);
  for (int i = 0; i < 10; ++i) s = step(t.spec, s, "wait").first;
  CHECK(s.object("water")->state_of_matter == "liquid");
  CHECK(s.object("water")->temperature == doctest::Approx(10.0));
}

TEST_CASE("focusing on the wrong object fails the episode") {
  const auto catalog = TaskCatalog::builtin();
  const auto t = catalog.instantiate("find-focus", 0);
  auto [s, r] = reset(catalog, "find-focus", 0);
  auto [n, out] = step(t.spec, s, "focus on agent");
  CHECK(out.refused);
  s = step(t.spec, s, "go kitchen").first;
  auto [f, fo] = step(t.spec, s, "focus on apple");
  CHECK(fo.terminal);
  CHECK(f.failed);
  CHECK(score(f, t.spec) < 100.0);
  CHECK(step(t.spec, f, "look around").second.refused);
}

TEST_CASE("unknown tasks and file-defined tasks") {
  auto catalog = TaskCatalog::builtin();
  CHECK_THROWS_AS(catalog.instantiate("juggle", 0), Error);
  try {
    catalog.instantiate("juggle", 0);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnknownTask);
  }
  catalog.load_json(R"({"tasks":[{"id":"fetch-key","goal":"Pick up the key.",
    "milestones":[{"predicate":"holds","args":["key"],"weight":100}],
    "locations":[{"name":"attic","exits":["cellar"]},{"name":"cellar","exits":["attic"]}],
    "agent_start":"attic",
    "objects":[{"name":"chest","parent":"cellar","container":true,"openable":true,"open":false},
               {"name":"key","parent":"chest","portable":true,"description":"a brass key"}],
    "variants":[{"placements":{}},{"placements":{"key":"attic"}}]}]})");
  CHECK(catalog.contains("fetch-key"));
  for (int v = 0; v < 2; ++v) {
    const auto traj = expert_trajectory(catalog, "fetch-key", v);
    REQUIRE(traj.subgoals.size() == 1);
    CHECK(traj.subgoals[0].name == "take key");
  }
  CHECK(catalog.instantiate("fetch-key", 0).expert_script.size() == 3);
  CHECK(catalog.instantiate("fetch-key", 1).expert_script.size() == 1);
  CHECK_THROWS_AS(catalog.load_json("{not json"), Error);
}

TEST_CASE("waiting changes nothing but the step counter") {
  const auto catalog = TaskCatalog::builtin();
  const auto t = catalog.instantiate("pour-liquid", 2);
  auto [s, r] = reset(catalog, "pour-liquid", 2);
  auto [n, out] = step(t.spec, s, "wait");
  WorldState expect = s;
  expect.step += 1;
  CHECK(n == expect);
  CHECK(out.facts.empty());
}

TEST_CASE("examining the thermometer reports the live temperature") {
  const auto catalog = TaskCatalog::builtin();
  const auto t = catalog.instantiate("boil-water", 0);
  Simulator sim(catalog);
  sim.reset("boil-water", 0);
  std::vector<Triple> readings;
  for (const auto& a : t.expert_script) {
    if (a == "examine thermometer") break;
    sim.step(a);
  }
  for (int i = 0; i < 3; ++i) {
    // The reading is taken when the action happens, before the world ticks.
    const double before = sim.state().object("thermometer")->temperature;
    const auto out = sim.step("examine thermometer");
    REQUIRE(out.facts.size() == 1);
    const auto& f = out.facts[0];
    CHECK(f.subject.name() == "thermometer");
    CHECK(f.relation.name == "act:examine");
    const auto& a = std::get<Attribute>(f.value);
    CHECK(a.unit == "°C");
    CHECK(std::stod(a.text) == doctest::Approx(before));
    readings.push_back(f);
  }
  // Each examination is a tick under the stove, so the reading climbs.
  CHECK(std::stod(std::get<Attribute>(readings[0].value).text) < std::stod(std::get<Attribute>(readings[2].value).text));

  EnvKnowledgeBase kb(microworld_relations());
  for (const auto& f : readings) kb.ingest(std::vector<Triple>{f}, f.step_index);
  CHECK(kb.size() == 1);
  CHECK(*kb.find(EntityId("thermometer"), "act:examine") == readings.back());
}

TEST_CASE("score accumulates milestone weights") {
  const auto catalog = TaskCatalog::builtin();
  for (const auto& id : builtin_task_ids()) {
    const auto t = catalog.instantiate(id, 1);
    Simulator sim(catalog);
    sim.reset(id, 1);
    CHECK(sim.score() == 0.0);
    double last = 0;
    for (const auto& a : t.expert_script) {
      sim.step(a);
      CHECK(sim.score() >= last);
      last = sim.score();
    }
    CHECK(sim.score() == 100.0);
  }

  auto custom = TaskCatalog::builtin();
  custom.load_json(R"({"tasks":[{"id":"two-steps","goal":"Hold the cup, then the book.",
    "milestones":[{"predicate":"holds","args":["cup"],"weight":50},
                  {"predicate":"holds","args":["book"],"weight":50}],
    "locations":[{"name":"study","exits":["porch"]},{"name":"porch","exits":["study"]}],
    "agent_start":"study",
    "objects":[{"name":"cup","parent":"study","portable":true},
               {"name":"book","parent":"porch","portable":true}]}]})");
  const auto traj = expert_trajectory(custom, "two-steps", 0);
  REQUIRE(traj.subgoals.size() == 2);
  Simulator sim(custom);
  sim.reset("two-steps", 0);
  for (const auto& s : traj.subgoals[0].steps) sim.step(s.action);
  CHECK(sim.score() == 50.0);
}

TEST_CASE("reset facts have distinct keys and variations share milestone structure") {
  const auto catalog = TaskCatalog::builtin();
  for (const auto& id : builtin_task_ids()) {
    const auto reference = catalog.instantiate(id, 0).spec.milestones;
    for (int v = 0; v < 12; ++v) {
      auto [s, r] = reset(catalog, id, v);
      EnvKnowledgeBase kb(microworld_relations());
      kb.ingest(r.facts, 0);
      CHECK(kb.size() == r.facts.size());
      const auto ms = catalog.instantiate(id, v).spec.milestones;
      REQUIRE(ms.size() == reference.size());
      for (std::size_t i = 0; i < ms.size(); ++i) {
        CHECK(ms[i].predicate == reference[i].predicate);
        CHECK(ms[i].weight == reference[i].weight);
      }
    }
  }
}

TEST_CASE("random walks conserve objects and keep score monotone") {
  const auto catalog = TaskCatalog::builtin();
  std::mt19937_64 rng(21);
  for (const auto& id : builtin_task_ids()) {
    for (int v = 0; v < 4; ++v) {
      const auto t = catalog.instantiate(id, v);
      auto [s, r] = reset(catalog, id, v);
      std::multiset<std::string> names;
      for (const auto& o : s.objects) names.insert(o.name);
      double last = 0;
      for (int i = 0; i < 60 && !s.terminal; ++i) {
        const auto options = admissible_actions(s);
        REQUIRE_FALSE(options.empty());
        const auto& a = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
        s = step(t.spec, s, a).first;
        std::multiset<std::string> now;
        for (const auto& o : s.objects) {
          now.insert(o.name);
          CHECK(std::isfinite(o.temperature));
          CHECK((o.parent == kAgent || s.location(o.parent) || s.object(o.parent)));
        }
        CHECK(now == names);
        CHECK(score(s, t.spec) >= last);
        last = score(s, t.spec);
      }
    }
  }
}

TEST_CASE("expert trajectories are reproducible") {
  const auto catalog = TaskCatalog::builtin();
  for (const auto& id : builtin_task_ids()) CHECK(expert_trajectory(catalog, id, 3) == expert_trajectory(catalog, id, 3));
  CHECK_THROWS_AS(expert_trajectory(catalog, "juggle", 0), Error);
}

TEST_CASE("sample task file loads and its experts finish") {
  auto catalog = TaskCatalog::builtin();
  catalog.load_file(std::string(DUALKB_DATA_DIR) + "/tasks/sample_tasks.json");
  CHECK(catalog.contains("read-note"));
  CHECK(catalog.contains("boil-water"));
  for (const std::string id : {"read-note", "warm-soup"}) {
    for (int v = 0; v < 3; ++v) {
      const auto traj = expert_trajectory(catalog, id, v);
      Simulator sim(catalog);
      sim.reset(id, v);
      for (const auto& s : flatten(traj)) CHECK_FALSE(sim.step(s.action).refused);
      CHECK(sim.complete());
    }
  }
  CHECK(catalog.instantiate("read-note", 2).expert_script.at(3) == "read note");
  CHECK_THROWS_AS(catalog.load_json("{\"tasks\": [{\"id\": \"x\"}]}"), Error);
}
