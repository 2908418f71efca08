// Command-line front end: one subcommand per pipeline stage. Every stage
// reads and writes files only and leaves a "<output>.run.json" manifest with
// the resolved configuration, input and output digests, and its metrics.

#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "dualkb/agent.hpp"
#include "dualkb/chat.hpp"
#include "dualkb/error.hpp"
#include "dualkb/kb_io.hpp"
#include "dualkb/pipeline.hpp"
#include "dualkb/text.hpp"
#include "run_config.hpp"

namespace {

using dualkb::cli::Json;
using dualkb::cli::RunConfig;
using dualkb::cli::Setting;
using namespace dualkb;

constexpr int kUsageError = 1;
constexpr int kStageFailure = 2;
constexpr const char* kReportSchema = "dualkb-report/1";

std::string digest(const std::string& path) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(read_file(path))));
  return buf;
}

/// Collects what a stage touched and writes the manifest next to its output.
class Run {
 public:
  Run(std::string command, const RunConfig& cfg) : command_(std::move(command)), cfg_(&cfg) {}

  std::string input(const std::string& path) {
    inputs_[path] = digest(path);
    return read_file(path);
  }
  void note_input(const std::string& path) { inputs_[path] = digest(path); }
  void output(const std::string& path) { outputs_.push_back(path); }
  Json& metrics() { return metrics_; }

  void finish(const std::string& primary) const {
    Json m;
    m["command"] = command_;
    m["config"] = cfg_->values();
    m["inputs"] = inputs_;
    Json outs = Json::object();
    for (const auto& p : outputs_) outs[p] = digest(p);
    m["outputs"] = std::move(outs);
    m["metrics"] = metrics_;
    write_file(primary + ".run.json", m.dump(2) + "\n");
  }

 private:
  std::string command_;
  const RunConfig* cfg_;
  Json inputs_ = Json::object();
  std::vector<std::string> outputs_;
  Json metrics_ = Json::object();
};

TaskCatalog catalog_from(const RunConfig& cfg, Run& run) {
  TaskCatalog catalog = TaskCatalog::builtin();
  const std::string path = cfg.str("task-file");
  if (!path.empty()) catalog.load_json(run.input(path));
  return catalog;
}

ExpertCorpus corpus_from(const std::string& path, Run& run) { return parse_corpus(run.input(path)); }

EmbeddingModel model_from(const std::string& path, std::uint64_t init_seed, Run& run) {
  if (path.empty()) return EmbeddingModel(init_seed);
  run.note_input(path);
  return load_model(path);
}

ExpKnowledgeBase exp_kb_from_file(const std::string& path, Run& run) {
  if (path.empty()) return {};
  return parse_knowledge(run.input(path)).exp;
}

/// Chat transport for model-backed stages: HTTP from the environment, wrapped
/// for cassette recording, or a cassette alone.
struct ChatStack {
  std::unique_ptr<ChatTransport> http;
  std::unique_ptr<ChatTransport> top;
};

ChatStack chat_from(const RunConfig& cfg, Run& run) {
  ChatStack s;
  const std::string mode = cfg.str("cassette-mode");
  const std::string cassette = cfg.str("cassette");
  if (mode != "off" && cassette.empty()) throw Error(ErrorKind::InvalidArgument, "cassette-mode needs --cassette");
  if (mode == "replay") {
    s.top = std::make_unique<ReplayTransport>(load_cassette(cassette));
    run.note_input(cassette);
    return s;
  }
  HttpChatConfig http;
  if (const char* e = std::getenv("DUALKB_CHAT_ENDPOINT")) http.endpoint = e;
  if (const char* m = std::getenv("DUALKB_CHAT_MODEL")) http.model = m;
  s.http = std::make_unique<HttpChatTransport>(http);
  if (mode == "record") {
    s.top = std::make_unique<RecordingTransport>(*s.http, cassette);
  } else if (mode != "off") {
    throw Error(ErrorKind::InvalidArgument, "cassette-mode must be off, record or replay");
  }
  return s;
}

ChatTransport& top_of(ChatStack& s) { return s.top ? *s.top : *s.http; }

Json scores_json(const ConditionScores& c) {
  Json j;
  j["name"] = c.name;
  j["mean"] = c.mean;
  j["stddev"] = c.stddev;
  j["completed"] = c.completed;
  j["scores"] = c.scores;
  return j;
}

// ------------------------------------------------------------------ stages

void kb_build(const RunConfig& cfg) {
  Run run("kb-build", cfg);
  const auto catalog = catalog_from(cfg, run);
  const auto corpus = replay_experts(catalog, cfg.strings("tasks"), cfg.ints("variations"));
  const std::string out = cfg.str("out");
  write_file(out, serialize_corpus(corpus));
  run.output(out);
  std::size_t subgoals = 0, triples = 0;
  double min_score = 100;
  for (std::size_t i = 0; i < corpus.trajectories.size(); ++i) {
    subgoals += corpus.trajectories[i].subgoals.size();
    triples += corpus.snapshots[i].final_env.size();
    min_score = std::min(min_score, corpus.snapshots[i].final_score);
  }
  run.metrics()["trajectories"] = corpus.trajectories.size();
  run.metrics()["subgoals"] = subgoals;
  run.metrics()["final_env_triples"] = triples;
  run.metrics()["min_replay_score"] = min_score;
  run.finish(out);
}

void distill(const RunConfig& cfg) {
  Run run("distill", cfg);
  auto corpus = corpus_from(cfg.str("corpus"), run);
  const std::string backend = cfg.str("backend");
  if (backend == "rules") {
    distill_corpus(corpus, RuleBased{});
  } else if (backend == "remote") {
    ChatStack chat = chat_from(cfg, run);
    distill_corpus(corpus, DecisionModelBacked{&top_of(chat)});
  } else {
    throw Error(ErrorKind::InvalidArgument, "backend must be rules or remote");
  }
  const auto kb = exp_kb_from(corpus);
  const std::string out = cfg.str("out");
  const std::string kb_out = cfg.str("kb-out");
  write_file(out, serialize_corpus(corpus));
  save_knowledge(kb_out, EnvKnowledgeBase(microworld_relations()), kb);
  run.output(out);
  run.output(kb_out);
  run.metrics()["units"] = kb.size();
  run.finish(out);
}

void save_with_manifest(Run& run, const RunConfig& cfg, Dataset d, const ExpertCorpus& corpus) {
  for (const auto& t : corpus.trajectories) d.manifest.sources.push_back(source_label(t));
  d.manifest.instance_count = d.instances.size();
  const std::string out = cfg.str("out");
  save_dataset(out, d);
  run.output(out);
  run.output(out + ".manifest.json");
  run.metrics()["instances"] = d.instances.size();
  run.finish(out);
}

void dataset_env(const RunConfig& cfg) {
  Run run("dataset-env", cfg);
  const auto corpus = corpus_from(cfg.str("corpus"), run);
  Dataset d;
  d.manifest.kind = "env";
  d.manifest.seed = cfg.seed("seed");
  d.manifest.m = static_cast<int>(cfg.integer("m"));
  d.instances = env_dataset(corpus, d.manifest.m, d.manifest.seed);
  save_with_manifest(run, cfg, std::move(d), corpus);
}

void dataset_exp(const RunConfig& cfg) {
  Run run("dataset-exp", cfg);
  const auto corpus = corpus_from(cfg.str("corpus"), run);
  const auto base = model_from(cfg.str("base-model"), cfg.seed("init-seed"), run);
  Dataset d;
  d.manifest.kind = "exp";
  d.manifest.seed = cfg.seed("seed");
  d.manifest.m = static_cast<int>(cfg.integer("m"));
  d.manifest.theta = cfg.num("theta");
  d.instances = exp_dataset(corpus, base, *d.manifest.theta, d.manifest.m, d.manifest.seed);
  save_with_manifest(run, cfg, std::move(d), corpus);
}

void train_stage(const RunConfig& cfg) {
  Run run("train", cfg);
  std::vector<TrainingInstance> data;
  for (const auto& path : cfg.strings("data")) {
    run.note_input(path);
    run.note_input(path + ".manifest.json");
    auto d = load_dataset(path);
    data.insert(data.end(), d.instances.begin(), d.instances.end());
  }
  const auto base = model_from(cfg.str("base-model"), cfg.seed("init-seed"), run);
  TrainConfig tc;
  tc.tau = cfg.num("tau");
  tc.learning_rate = cfg.num("learning-rate");
  tc.epochs = static_cast<int>(cfg.integer("epochs"));
  tc.batch_size = static_cast<int>(cfg.integer("batch-size"));
  tc.seed = cfg.seed("seed");
  TrainReport report;
  const auto model = train(base, data, tc, &report);
  const std::string out = cfg.str("out");
  save_model(out, model);
  run.output(out);
  run.metrics()["instances"] = data.size();
  run.metrics()["epoch_losses"] = report.epoch_losses;
  run.finish(out);
}

void eval_retrieval(const RunConfig& cfg) {
  Run run("eval-retrieval", cfg);
  std::vector<TrainingInstance> env, exp;
  for (const auto& path : cfg.strings("data")) {
    run.note_input(path);
    run.note_input(path + ".manifest.json");
    auto d = load_dataset(path);
    auto& dst = d.manifest.kind == "exp" ? exp : env;
    dst.insert(dst.end(), d.instances.begin(), d.instances.end());
  }
  const auto model = model_from(cfg.str("model"), cfg.seed("init-seed"), run);
  const auto bench = retrieval_benchmark(env, exp);
  const auto k = static_cast<std::size_t>(cfg.integer("k"));
  const auto r = benchmark_recall(model, bench, k);
  auto& m = run.metrics();
  m["k"] = k;
  m["corpus_size"] = bench.corpus.size();
  m["env_queries"] = bench.env_queries.size();
  m["exp_queries"] = bench.exp_queries.size();
  m["recall_env"] = r.env;
  m["recall_exp"] = r.exp;
  m["recall_overall"] = r.overall;
  const std::string out = cfg.str("out");
  write_file(out, m.dump(2) + "\n");
  run.output(out);
  run.finish(out);
}

void episode(const RunConfig& cfg) {
  Run run("episode", cfg);
  const auto catalog = catalog_from(cfg, run);
  const std::string task = cfg.str("task");
  const int variation = static_cast<int>(cfg.integer("variation"));
  const auto exp_kb = exp_kb_from_file(cfg.str("knowledge"), run);
  const auto model = model_from(cfg.str("model"), cfg.seed("init-seed"), run);

  std::optional<ChatStack> chat;
  std::unique_ptr<DecisionModel> dm;
  std::size_t script_length = 0;
  const std::string kind = cfg.str("decision-model");
  if (kind == "scripted") {
    auto o = std::make_unique<ScriptedOracle>(ScriptedOracle::for_task(catalog, task, variation));
    script_length = o->script().size();
    dm = std::move(o);
  } else if (kind == "noisy") {
    auto o = std::make_unique<NoisyScripted>(
        NoisyScripted::for_task(catalog, task, variation, cfg.num("noise"), cfg.seed("seed")));
    script_length = o->script().size();
    dm = std::move(o);
  } else if (kind == "remote") {
    chat = chat_from(cfg, run);
    dm = std::make_unique<RemoteChat>(top_of(*chat));
    script_length = catalog.instantiate(task, variation).expert_script.size();
  } else {
    throw Error(ErrorKind::InvalidArgument, "decision-model must be scripted, noisy or remote");
  }

  AgentConfig agent;
  agent.use_kb = cfg.flag("use-kb");
  agent.joint_knowledge = cfg.flag("joint-knowledge");
  agent.retrieval.k_candidates = static_cast<std::size_t>(cfg.integer("k-candidates"));
  agent.retrieval.k_final = static_cast<std::size_t>(cfg.integer("k-final"));
  const auto budget_flag = cfg.integer("budget");
  const std::size_t budget = budget_flag > 0 ? static_cast<std::size_t>(budget_flag)
                                             : script_length + static_cast<std::size_t>(cfg.integer("budget-slack"));

  Simulator env(catalog);
  const ActionResult first = env.reset(task, variation);
  EnvKnowledgeBase env_kb(microworld_relations());
  const EpisodeResult r = run_episode(env, first, env_kb, exp_kb, *dm, agent.use_kb ? &model : nullptr, agent, budget);

  auto& m = run.metrics();
  m["score"] = r.score;
  m["steps_used"] = r.steps_used;
  m["budget"] = budget;
  m["complete"] = r.complete;
  m["kb_inserted"] = r.kb_deltas.inserted;
  m["kb_superseded"] = r.kb_deltas.superseded;
  m["kb_unchanged"] = r.kb_deltas.unchanged;
  m["error"] = r.error ? Json(std::string(to_string(*r.error)) + ": " + r.error_message) : Json();

  Json doc;
  doc["metrics"] = m;
  doc["trajectory"] = trajectory_to_json(r.trajectory);
  Json events = Json::array();
  for (const auto& e : r.memory.events()) events.push_back(render_event(e));
  doc["memory"] = std::move(events);
  const std::string out = cfg.str("out");
  write_file(out, doc.dump(2) + "\n");
  run.output(out);
  run.finish(out);
}

void ablate(const RunConfig& cfg) {
  Run run("ablate", cfg);
  const auto catalog = catalog_from(cfg, run);
  const auto exp_kb = exp_kb_from_file(cfg.str("knowledge"), run);
  const auto untuned = model_from(cfg.str("untuned-model"), cfg.seed("init-seed"), run);
  if (cfg.str("tuned-model").empty()) throw Error(ErrorKind::InvalidArgument, "--tuned-model is required");
  const auto tuned = model_from(cfg.str("tuned-model"), 0, run);

  AblationConfig ac;
  ac.tasks = cfg.strings("tasks");
  ac.heldout_variations = cfg.ints("variations");
  ac.episodes = static_cast<int>(cfg.integer("episodes"));
  ac.noise = cfg.num("noise");
  ac.seed = cfg.seed("seed");
  ac.budget_slack = static_cast<std::size_t>(cfg.integer("budget-slack"));
  ac.agent.retrieval.k_candidates = static_cast<std::size_t>(cfg.integer("k-candidates"));
  ac.agent.retrieval.k_final = static_cast<std::size_t>(cfg.integer("k-final"));
  ac.agent.joint_knowledge = cfg.flag("joint-knowledge");
  const auto results = run_ablation(catalog, exp_kb, untuned, tuned, ac);

  auto& m = run.metrics();
  Json conds = Json::array();
  for (const auto& c : results) conds.push_back(scores_json(c));
  m["conditions"] = std::move(conds);
  const double none = results[0].mean, plain = results[1].mean, best = results[2].mean;
  m["ordering"] = {{"kb_untuned_ge_no_kb", plain >= none},
                   {"kb_tuned_ge_kb_untuned", best >= plain},
                   {"kb_tuned_gt_kb_untuned", best > plain}};
  const std::string out = cfg.str("out");
  write_file(out, m.dump(2) + "\n");
  run.output(out);
  run.finish(out);
}

void report(const RunConfig& cfg) {
  Run run("report", cfg);
  Json doc;
  doc["schema"] = kReportSchema;
  Json runs = Json::array();
  for (const auto& path : cfg.strings("runs")) {
    Json manifest;
    try {
      manifest = Json::parse(run.input(path));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ParseError, path + ": " + e.what());
    }
    Json entry;
    entry["command"] = manifest.at("command");
    entry["config"] = manifest.at("config");
    entry["metrics"] = manifest.at("metrics");
    runs.push_back(std::move(entry));
  }
  doc["runs"] = std::move(runs);
  const std::string out = cfg.str("out");
  write_file(out, doc.dump(2) + "\n");
  run.output(out);
  run.finish(out);
}

// ----------------------------------------------------------------- options

Json all_tasks() { return Json(builtin_task_ids()); }

Json range(int lo, int hi) {
  Json out = Json::array();
  for (int v = lo; v <= hi; ++v) out.push_back(v);
  return out;
}

std::vector<Setting> chat_settings() {
  return {{"cassette", "", "cassette file for model-backed stages"},
          {"cassette-mode", "off", "off, record or replay"}};
}

struct Command {
  std::string name;
  std::string help;
  std::vector<Setting> settings;
  std::function<void(const RunConfig&)> stage;
};

std::vector<Command> commands() {
  const Json seed0 = std::uint64_t{0};
  std::vector<Command> c;
  c.push_back({"kb-build",
               "replay expert trajectories and record the knowledge each reveals",
               {{"tasks", all_tasks(), "task ids"},
                {"variations", range(0, 11), "variation indices; a-b ranges allowed"},
                {"task-file", "", "extra task file"},
                {"out", "corpus.jsonl", "expert corpus output"}},
               kb_build});
  auto distill_settings = std::vector<Setting>{{"corpus", "corpus.jsonl", "expert corpus input"},
                                               {"backend", "rules", "rules or remote"},
                                               {"out", "distilled.jsonl", "distilled corpus output"},
                                               {"kb-out", "knowledge.jsonl", "experiential knowledge base output"}};
  for (auto& s : chat_settings()) distill_settings.push_back(s);
  c.push_back({"distill", "decompose trajectories and build experiential units", distill_settings, distill});
  c.push_back({"dataset-env",
               "environmental training instances",
               {{"corpus", "corpus.jsonl", "expert corpus input"},
                {"m", 8, "negatives per instance"},
                {"seed", seed0, "sampling seed"},
                {"out", "d_env.jsonl", "dataset output"}},
               dataset_env});
  c.push_back({"dataset-exp",
               "experiential training instances",
               {{"corpus", "distilled.jsonl", "distilled corpus input"},
                {"m", 8, "negatives per instance"},
                {"theta", 0.8, "sub-goal similarity threshold"},
                {"seed", seed0, "sampling seed"},
                {"base-model", "", "encoder used for similarity; empty means a fresh model"},
                {"init-seed", seed0, "initialization seed of a fresh model"},
                {"out", "d_exp.jsonl", "dataset output"}},
               dataset_exp});
  const TrainConfig tc;
  c.push_back({"train",
               "contrastive fine-tuning of the encoder",
               {{"data", Json::array({"d_env.jsonl", "d_exp.jsonl"}), "dataset files"},
                {"base-model", "", "starting model; empty means a fresh model"},
                {"init-seed", seed0, "initialization seed of a fresh model"},
                {"tau", tc.tau, "temperature"},
                {"learning-rate", tc.learning_rate, "step size"},
                {"epochs", tc.epochs, "passes over the data"},
                {"batch-size", tc.batch_size, "instances per step"},
                {"seed", seed0, "shuffle seed"},
                {"out", "model.bin", "model output"}},
               train_stage});
  c.push_back({"eval-retrieval",
               "Recall@k on a benchmark built from dataset files",
               {{"data", Json::array({"heldout_env.jsonl", "heldout_exp.jsonl"}), "dataset files"},
                {"model", "", "model file; empty means a fresh model"},
                {"init-seed", seed0, "initialization seed of a fresh model"},
                {"k", 5, "cutoff"},
                {"out", "retrieval.json", "metrics output"}},
               eval_retrieval});
  const AblationConfig ac;
  auto episode_settings = std::vector<Setting>{
      {"task", "boil-water", "task id"},
      {"variation", 0, "variation index"},
      {"task-file", "", "extra task file"},
      {"decision-model", "noisy", "scripted, noisy or remote"},
      {"noise", ac.noise, "confusion probability of the noisy model"},
      {"seed", seed0, "noise seed"},
      {"budget", 0, "step budget; 0 means script length plus budget-slack"},
      {"budget-slack", static_cast<int>(ac.budget_slack), "steps beyond the expert script"},
      {"use-kb", true, "retrieve knowledge"},
      {"joint-knowledge", true, "feed environmental results into the experiential query"},
      {"knowledge", "knowledge.jsonl", "experiential knowledge base; empty for none"},
      {"model", "", "encoder file; empty means a fresh model"},
      {"init-seed", seed0, "initialization seed of a fresh model"},
      {"k-candidates", static_cast<int>(ac.agent.retrieval.k_candidates), "first-stage pool"},
      {"k-final", static_cast<int>(ac.agent.retrieval.k_final), "documents kept after reranking"},
      {"out", "episode.json", "episode output"}};
  for (auto& s : chat_settings()) episode_settings.push_back(s);
  c.push_back({"episode", "run one agent episode", episode_settings, episode});
  c.push_back({"ablate",
               "no-kb, kb-untuned and kb-tuned over paired noisy episodes",
               {{"tasks", all_tasks(), "task ids"},
                {"variations", range(12, 17), "held-out variations; a-b ranges allowed"},
                {"task-file", "", "extra task file"},
                {"episodes", ac.episodes, "episodes per condition"},
                {"noise", ac.noise, "confusion probability"},
                {"seed", seed0, "episode e uses seed + e"},
                {"budget-slack", static_cast<int>(ac.budget_slack), "steps beyond the expert script"},
                {"k-candidates", static_cast<int>(ac.agent.retrieval.k_candidates), "first-stage pool"},
                {"k-final", static_cast<int>(ac.agent.retrieval.k_final), "documents kept after reranking"},
                {"joint-knowledge", true, "feed environmental results into the experiential query"},
                {"knowledge", "knowledge.jsonl", "experiential knowledge base"},
                {"untuned-model", "", "untuned encoder; empty means a fresh model"},
                {"init-seed", seed0, "initialization seed of a fresh model"},
                {"tuned-model", "model.bin", "fine-tuned encoder"},
                {"out", "ablation.json", "metrics output"}},
               ablate});
  c.push_back({"report",
               "merge run manifests into one metrics report",
               {{"runs", Json::array(), "manifest files, in report order"}, {"out", "report.json", "report output"}},
               report});
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("dualkb: knowledge bases, retriever training and agent episodes in a text microworld", "dualkb");
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("--quiet", quiet, "suppress warnings");

  const auto cmds = commands();
  std::vector<std::unique_ptr<RunConfig>> configs;
  std::vector<CLI::App*> subs;
  for (const auto& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    configs.push_back(std::make_unique<RunConfig>(*sub, c.settings));
    subs.push_back(sub);
  }

  std::size_t chosen = cmds.size();
  try {
    app.parse(argc, argv);
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (subs[i]->parsed()) chosen = i;
    }
    configs[chosen]->resolve();
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  if (quiet) {
    set_log_sink([](std::string_view) {});
  } else {
    set_log_sink([](std::string_view w) { std::cerr << "warning: " << w << "\n"; });
  }
  try {
    cmds[chosen].stage(*configs[chosen]);
  } catch (const std::exception& e) {
    std::cerr << "dualkb " << cmds[chosen].name << ": " << e.what() << "\n";
    return kStageFailure;
  }
  return 0;
}
