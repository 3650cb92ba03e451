#include "ruleforge/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>

#include "ruleforge/analysis.hpp"
#include "ruleforge/config.hpp"
#include "ruleforge/errors.hpp"
#include "ruleforge/rule_head.hpp"
#include "ruleforge/trainer.hpp"
#include "ruleforge/world.hpp"

namespace fs = std::filesystem;

namespace ruleforge {

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<std::size_t> threads;
  std::string fixture;
  std::string data;
  std::string checkpoint;
};

std::size_t threads_from_env() {
  if (const char* s = std::getenv("REASON_THREADS"); s && *s) {
    try {
      const long v = std::stol(s);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("REASON_THREADS: expected a positive integer, got '") + s + "'");
  }
  return 0;
}

RunConfig resolve_config(const Common& c, const Json* fallback = nullptr) {
  Json j = Json::object();
  if (!c.config.empty())
    j = read_json(c.config);
  else if (fallback)
    j = *fallback;
  RunConfig cfg = run_config_from_json(j);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.fixture.empty()) {
    fixture_vocabulary(c.fixture);  // validates the name
    cfg.world.vocabulary = c.fixture;
    cfg.world.matrix = c.fixture == "ntu74" ? "records" : "planted";
  }
  if (c.threads)
    cfg.threads = *c.threads;
  else if (const std::size_t t = threads_from_env())
    cfg.threads = t;
  cfg.train.threads = cfg.threads;
  cfg.validate();
  return cfg;
}

Json meta_block(const Json& config_echo, std::uint64_t seed) {
  return {{"schema_version", 1}, {"config_hash", json_hash(config_echo)}, {"seed", seed}};
}

// Prepends schema_version / config_hash / seed to a report body.
Json with_meta(const Json& config_echo, std::uint64_t seed, const Json& body) {
  Json out = meta_block(config_echo, seed);
  for (auto it = body.begin(); it != body.end(); ++it) out[it.key()] = it.value();
  return out;
}

struct DataContext {
  RunConfig cfg;
  Json echo;
  ConceptVocabulary vocabulary;
  AssociationMatrix matrix;
  std::vector<Part> part_map;
  FeatureBatch train, test;
};

Json part_map_json(const std::vector<Part>& map) {
  Json j = Json::array();
  for (Part p : map) j.push_back(std::string(to_string(p)));
  return j;
}

DataContext generate_data(const RunConfig& cfg) {
  Dataset ds = generate_dataset(cfg);
  DataContext d;
  d.cfg = cfg;
  d.echo = run_config_to_json(cfg);
  d.vocabulary = ds.config.vocabulary;
  d.matrix = ds.config.matrix;
  d.part_map = ds.world.part_map;
  d.train = std::move(ds.train);
  d.test = std::move(ds.test);
  return d;
}

void save_data(const fs::path& dir, const DataContext& d) {
  fs::create_directories(dir);
  save_vocabulary(dir / "vocabulary.json", d.vocabulary);
  save_matrix(dir / "matrix.json", d.matrix);
  save_split(dir, "train", d.train);
  if (d.test.size()) save_split(dir, "test", d.test);
  Json world = with_meta(d.echo, d.cfg.seed,
                         {{"config", d.echo},
                          {"part_map", part_map_json(d.part_map)},
                          {"splits", d.test.size() ? Json{"train", "test"} : Json{"train"}}});
  write_json(dir / "world.json", world);
}

// World settings come from the dataset; training settings from `cfg`.
DataContext load_data(const fs::path& dir, RunConfig cfg) {
  const Json w = read_json(dir / "world.json");
  DataContext d;
  try {
    const RunConfig stored = run_config_from_json(w.at("config"));
    cfg.world = stored.world;
    cfg.model.channels = stored.model.channels;
    cfg.model.text_dim = stored.model.text_dim;
    for (const auto& p : w.at("part_map")) d.part_map.push_back(part_from_string(p.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("world.json: ") + e.what());
  }
  d.cfg = cfg;
  d.echo = run_config_to_json(cfg);
  d.vocabulary = load_vocabulary(dir / "vocabulary.json");
  d.matrix = load_matrix(dir / "matrix.json");
  require_unique_signatures(d.matrix);
  d.train = load_split(dir, "train");
  if (fs::exists(dir / "test.json")) d.test = load_split(dir, "test");
  return d;
}

DataContext data_for(const Common& c, const RunConfig& cfg) {
  return c.data.empty() ? generate_data(cfg) : load_data(c.data, cfg);
}

struct Loaded {
  Model model;
  CheckpointMeta meta;
  RunConfig cfg;
};

Loaded load_trained(const Common& c) {
  if (c.checkpoint.empty()) throw ValidationError("--checkpoint DIR is required");
  Loaded l{Model{}, {}, {}};
  l.model = load_checkpoint(c.checkpoint, &l.meta);
  Common cc = c;
  if (!cc.seed) cc.seed = l.meta.seed;
  cc.fixture.clear();
  l.cfg = resolve_config(cc, &l.meta.config);
  return l;
}

// Evaluation split: the test split when present, else train.
const FeatureBatch& eval_batch(const DataContext& d) { return d.test.size() ? d.test : d.train; }

void print_json(const Json& j) { std::cout << j.dump(2) << "\n"; }

// ---- subcommands ------------------------------------------------------------------

int cmd_bank_build(const Common& c, const std::string& records_path, const std::string& vocab_path,
                   const std::string& patterns_path, std::size_t k_max) {
  const std::string fixture = c.fixture.empty() ? "ntu74" : c.fixture;
  const ConceptVocabulary vocab =
      vocab_path.empty() ? fixture_vocabulary(fixture) : load_vocabulary(vocab_path);
  const fs::path out(c.out);
  fs::create_directories(out);
  save_vocabulary(out / "vocabulary.json", vocab);
  const std::uint64_t seed = c.seed.value_or(0);
  Json echo = {{"fixture", fixture},
               {"vocabulary", vocab_path},
               {"records", records_path},
               {"patterns", patterns_path},
               {"k_max", k_max}};
  Json summary = with_meta(echo, seed,
                           {{"concepts", vocab.size()},
                            {"spatial", vocab.count(Category::Spatial)},
                            {"temporal", vocab.count(Category::Temporal)},
                            {"interaction", vocab.count(Category::Interaction)}});

  std::optional<RecordFile> records;
  if (!records_path.empty())
    records = records_from_json(read_json(records_path));
  else if (fixture == "ntu74" && vocab_path.empty())
    records = ntu74_records();
  if (records) {
    const AssociationMatrix m = build_association_matrix(vocab, records->actions, records->records);
    save_matrix(out / "matrix.json", m);
    Json dups = Json::array();
    for (auto [a, b] : check_signature_uniqueness(m)) dups.push_back({m.actions[a], m.actions[b]});
    summary["actions"] = m.num_actions();
    summary["duplicate_signatures"] = dups;
  }
  if (!patterns_path.empty()) {
    const PatternFile pf = patterns_from_json(read_json(patterns_path));
    Json parts = Json::array();
    for (const auto& [part, set] : pf.parts) {
      const std::size_t km = std::min(k_max, set.size());
      const ElbowResult elbow = elbow_select_k(set, km, seed);
      const KMeansResult km_res = kmeans_cluster(set, elbow.k_star, seed);
      Json clusters = Json::array();
      for (std::size_t k = 0; k < elbow.k_star; ++k) {
        Json members = Json::array();
        for (std::size_t i = 0; i < set.size(); ++i)
          if (km_res.assignments[i] == k) members.push_back(set.labels[i]);
        clusters.push_back({{"representative", km_res.representatives[k]}, {"members", members}});
      }
      parts.push_back({{"part", std::string(to_string(part))},
                       {"k", elbow.k_star},
                       {"sse_by_k", elbow.sse},
                       {"clusters", clusters}});
    }
    write_json(out / "clusters.json", with_meta(echo, seed, {{"parts", parts}}));
    summary["clustered_parts"] = parts.size();
  }
  write_json(out / "bank.json", summary);
  print_json(summary);
  if (summary.contains("duplicate_signatures") && !summary["duplicate_signatures"].empty()) return 1;
  return 0;
}

int cmd_bank_check(const std::string& matrix_path, const std::string& vocab_path) {
  if (matrix_path.empty()) throw ValidationError("--matrix FILE is required");
  const AssociationMatrix m = load_matrix(matrix_path);
  if (!vocab_path.empty()) {
    const ConceptVocabulary v = load_vocabulary(vocab_path);
    if (m.num_concepts() != v.size()) throw ValidationError("matrix and vocabulary sizes differ");
    for (std::size_t i = 0; i < v.size(); ++i)
      if (m.concepts[i] != v[i].name)
        throw ValidationError("matrix concept " + std::to_string(i) + " '" + m.concepts[i] +
                              "' differs from vocabulary '" + v[i].name + "'");
  }
  const auto dups = check_signature_uniqueness(m);
  if (dups.empty()) {
    std::cout << "ok: " << m.num_actions() << " actions, " << m.num_concepts()
              << " concepts, signatures unique\n";
    return 0;
  }
  std::cout << "duplicate signatures:\n";
  for (auto [a, b] : dups) std::cout << "  " << m.actions[a] << " == " << m.actions[b] << "\n";
  return 1;
}

int cmd_data_gen(const Common& c) {
  const RunConfig cfg = resolve_config(c);
  const DataContext d = generate_data(cfg);
  save_data(c.out, d);
  std::cerr << "wrote " << d.train.size() << " train / " << d.test.size() << " test samples to "
            << c.out << "\n";
  return 0;
}

int cmd_train(const Common& c, bool quiet) {
  const RunConfig cfg0 = resolve_config(c);
  const DataContext d = data_for(c, cfg0);
  const RunConfig& cfg = d.cfg;
  const fs::path out(c.out);
  fs::create_directories(out);

  Model model = make_model(d.vocabulary, d.matrix.actions, d.part_map, cfg.model);
  init_model(model, stream_seed(cfg.seed, "init"));
  const PreparedSplit tr = prepare_split(d.train, d.part_map);
  const PreparedSplit te = d.test.size() ? prepare_split(d.test, d.part_map) : PreparedSplit{};

  std::string lines;
  TrainHooks hooks;
  hooks.after_epoch = [&](const EpochMetrics& m, const Model&) {
    lines += metrics_to_json(m).dump() + "\n";
    if (!quiet)
      std::fprintf(stderr, "epoch %zu loss %.5f acc %.4f concept_f1 %.4f active %zu\n", m.epoch,
                   m.total, m.acc, m.concept_f1, m.active_weights);
  };
  TrainResult res = train(std::move(model), tr, te, cfg.train, cfg.loss, cfg.seed, hooks);
  write_file_atomic(out / "metrics.jsonl", lines);
  save_checkpoint(out, res.model, {d.echo, cfg.seed, res.last_good_epoch});
  Json summary = with_meta(d.echo, cfg.seed,
                           {{"threads", cfg.threads},
                            {"epochs_completed", res.last_good_epoch},
                            {"diverged", res.diverged},
                            {"message", res.message}});
  if (!res.history.empty()) summary["final"] = metrics_to_json(res.history.back());
  write_json(out / "train_summary.json", summary);
  if (res.diverged) {
    std::cerr << "training diverged: " << res.message << " (checkpoint holds epoch "
              << res.last_good_epoch << ")\n";
    return 2;
  }
  return 0;
}

int cmd_eval(const Common& c) {
  const Loaded l = load_trained(c);
  const DataContext d = data_for(c, l.cfg);
  const PreparedSplit split = prepare_split(eval_batch(d), l.model.part_map);
  const Evaluation ev = evaluate(l.model, split, l.cfg.threads);
  const Json report = with_meta(l.meta.config, l.cfg.seed,
                                {{"samples", split.inputs.size()},
                                 {"acc", ev.acc},
                                 {"concept_f1", ev.concept_f1},
                                 {"active_weights", l.model.logic.count_active()}});
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "eval.json", report);
  print_json(report);
  return 0;
}

int cmd_rules_extract(const Common& c, std::optional<std::size_t> top_k_flag) {
  Loaded l = load_trained(c);
  const std::size_t top_k = top_k_flag.value_or(l.cfg.analysis.top_k);
  const RuleSet rs =
      extract_rules(l.model.logic, l.model.vocabulary, &l.model.classifier, l.model.actions);
  Json j = ruleset_to_json(rs, l.model.vocabulary);
  const Json meta = meta_block(l.meta.config, l.cfg.seed);
  j["config_hash"] = meta["config_hash"];
  j["seed"] = meta["seed"];
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "rules.json", j);
  for (std::size_t a = 0; a < rs.actions.size(); ++a)
    std::cout << render_explanation(rs.actions[a].name,
                                    explain_action(rs, l.model.vocabulary, a, top_k))
              << "\n";
  return 0;
}

int cmd_explain(const Common& c, std::size_t samples, const std::string& action,
                std::optional<std::size_t> top_k_flag) {
  Loaded l = load_trained(c);
  const std::size_t top_k = top_k_flag.value_or(l.cfg.analysis.top_k);
  const DataContext d = data_for(c, l.cfg);
  const FeatureBatch& batch = eval_batch(d);
  const RuleSet rs =
      extract_rules(l.model.logic, l.model.vocabulary, &l.model.classifier, l.model.actions);
  Json actions = Json::array();
  for (std::size_t a = 0; a < rs.actions.size(); ++a) {
    if (!action.empty() && rs.actions[a].name != action) continue;
    const auto terms = explain_action(rs, l.model.vocabulary, a, top_k);
    Json jt = Json::array();
    for (const auto& t : terms)
      jt.push_back({{"rule_id", rule_name(t.rule_id)}, {"weight", t.weight}, {"expression", t.expression}});
    actions.push_back({{"name", rs.actions[a].name},
                       {"rendered", render_explanation(rs.actions[a].name, terms)},
                       {"terms", jt}});
    std::cout << render_explanation(rs.actions[a].name, terms) << "\n";
  }
  if (!action.empty() && actions.empty()) throw ValidationError("unknown action '" + action + "'");
  Json reports = Json::array();
  const CompiledLogic logic = compile_discrete(l.model.logic);
  for (std::size_t i = 0; i < std::min(samples, batch.size()); ++i) {
    const SampleInput in =
        prepare_sample(batch.sample(i), batch.frames, batch.joints, batch.channels, l.model.part_map);
    const SampleForward f = forward_sample(l.model, in, nullptr, &logic);
    Json r = instance_report_to_json(explain_instance(f.concepts.soft, f.rules, f.logits,
                                                      batch.labels[i], l.model.classifier,
                                                      l.model.vocabulary));
    r["sample"] = i;
    reports.push_back(r);
  }
  const Json report = with_meta(l.meta.config, l.cfg.seed, {{"actions", actions}, {"samples", reports}});
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "explain.json", report);
  return 0;
}

std::vector<std::vector<std::uint8_t>> intervention_targets(const DataContext& d,
                                                            const FeatureBatch& batch,
                                                            const std::string& target) {
  if (target == "sample") return batch.true_concepts;
  std::vector<std::vector<std::uint8_t>> out;
  for (std::size_t l : batch.labels) out.push_back(d.matrix.rows.at(l));
  return out;
}

int cmd_intervene(const Common& c, std::optional<std::size_t> levels, const std::string& mode,
                  const std::string& target) {
  Loaded l = load_trained(c);
  if (levels) l.cfg.analysis.intervention_levels = *levels;
  if (!mode.empty()) l.cfg.analysis.intervention_mode = mode;
  if (!target.empty()) l.cfg.analysis.intervention_target = target;
  l.cfg.validate();
  const DataContext d = data_for(c, l.cfg);
  const FeatureBatch& batch = eval_batch(d);
  const PreparedSplit split = prepare_split(batch, l.model.part_map);
  const auto res = intervention_curve(
      l.model, split, intervention_targets(d, batch, l.cfg.analysis.intervention_target),
      l.cfg.analysis.intervention_levels,
      intervention_mode_from_string(l.cfg.analysis.intervention_mode), l.cfg.threads);
  Json body = intervention_to_json(res, l.model.vocabulary);
  body["target"] = l.cfg.analysis.intervention_target;
  const Json report = with_meta(l.meta.config, l.cfg.seed, body);
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "intervention.json", report);
  for (std::size_t m = 0; m < res.accuracy.size(); ++m)
    std::printf("level %zu accuracy %.4f\n", m, res.accuracy[m]);
  return 0;
}

int cmd_stats(const Common& c) {
  Loaded l = load_trained(c);
  const DataContext d = data_for(c, l.cfg);
  const PreparedSplit split = prepare_split(eval_batch(d), l.model.part_map);
  const ConceptStats s = concept_stats(l.model, split, l.cfg.threads);
  Json body = concept_stats_to_json(s, l.model.vocabulary);
  double row_weight = 0.0;
  for (std::size_t a = 0; a < d.matrix.num_actions(); ++a) row_weight += d.matrix.row_weight(a);
  body["matrix_mean_row_weight"] = row_weight / static_cast<double>(d.matrix.num_actions());
  const Json report = with_meta(l.meta.config, l.cfg.seed, body);
  fs::create_directories(c.out);
  write_json(fs::path(c.out) / "stats.json", report);
  std::printf("mean active concepts per sample %.3f\n", s.mean_active);
  return 0;
}

int cmd_gradcheck(const Common& c, bool all, const std::vector<std::string>& components,
                  std::size_t points) {
  std::vector<std::string> names = components;
  if (all || names.empty()) names = gradcheck_components();
  const std::uint64_t seed = c.seed.value_or(0);
  constexpr double kTolerance = 1e-5;
  bool ok = true;
  Json results = Json::array();
  for (const auto& name : names) {
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p)
      worst = std::max(worst, finite_diff_check(name, stream_seed(seed, "gradcheck", p)));
    const bool pass = worst < kTolerance;
    ok = ok && pass;
    std::printf("%-11s max_rel_err %.3e %s\n", name.c_str(), worst, pass ? "ok" : "FAIL");
    results.push_back({{"component", name}, {"max_rel_err", worst}, {"pass", pass}});
  }
  if (c.out != ".") {
    fs::create_directories(c.out);
    const Json echo = {{"components", names}, {"points", points}};
    write_json(fs::path(c.out) / "gradcheck.json",
               with_meta(echo, seed, {{"tolerance", kTolerance}, {"results", results}}));
  }
  return ok ? 0 : 2;
}

void add_common(CLI::App* app, Common& c, bool data, bool checkpoint) {
  app->add_option("--config", c.config, "Run config JSON");
  app->add_option("--seed", c.seed, "Root seed (overrides the config)");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--threads", c.threads, "Worker threads (fallback: REASON_THREADS)")
      ->check(CLI::PositiveNumber);
  app->add_option("--fixture", c.fixture, "Concept vocabulary fixture")
      ->check(CLI::IsMember({"ntu74", "desk67"}));
  if (data) app->add_option("--data", c.data, "Dataset directory written by 'data gen'");
  if (checkpoint) app->add_option("--checkpoint", c.checkpoint, "Directory holding checkpoint.json");
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
  std::vector<const char*> argv = {"ruleforge"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Concept bottleneck rule learner over skeleton-style features"};
  app.require_subcommand(1);
  Common c;

  auto* bank = app.add_subcommand("bank", "Concept bank construction and checks");
  bank->require_subcommand(1);
  auto* bank_build = bank->add_subcommand("build", "Write vocabulary, matrix and clusters");
  std::string records, vocab, patterns, matrix;
  std::size_t k_max = 8;
  add_common(bank_build, c, false, false);
  bank_build->add_option("--records", records, "Association records JSON");
  bank_build->add_option("--vocabulary", vocab, "Vocabulary JSON (default: fixture)");
  bank_build->add_option("--patterns", patterns, "Pattern embeddings JSON for clustering");
  bank_build->add_option("--k-max", k_max, "Largest k tried by the elbow rule");
  auto* bank_check = bank->add_subcommand("check", "Validate a matrix and its signatures");
  bank_check->add_option("--matrix", matrix, "Matrix JSON")->required();
  bank_check->add_option("--vocabulary", vocab, "Vocabulary JSON to cross-check");

  auto* data = app.add_subcommand("data", "Synthetic datasets");
  data->require_subcommand(1);
  auto* data_gen = data->add_subcommand("gen", "Generate a planted-rule dataset");
  add_common(data_gen, c, false, false);

  auto* train_cmd = app.add_subcommand("train", "Train end to end");
  bool quiet = false;
  add_common(train_cmd, c, true, false);
  train_cmd->add_flag("--quiet", quiet, "No per-epoch log lines");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval_cmd, c, true, true);

  auto* rules = app.add_subcommand("rules", "Rule extraction");
  rules->require_subcommand(1);
  auto* rules_extract = rules->add_subcommand("extract", "Write rules.json");
  std::optional<std::size_t> top_k;
  add_common(rules_extract, c, false, true);
  rules_extract->add_option("--top-k", top_k, "Terms printed per action (default: analysis.top_k)");

  auto* explain = app.add_subcommand("explain", "Per-action and per-sample explanations");
  std::size_t samples = 5;
  std::string action;
  add_common(explain, c, true, true);
  explain->add_option("--samples", samples, "Number of samples to report");
  explain->add_option("--action", action, "Only this action");
  explain->add_option("--top-k", top_k, "Terms per action (default: analysis.top_k)");

  auto* intervene_cmd = app.add_subcommand("intervene", "Concept intervention curve");
  std::optional<std::size_t> levels;
  std::string mode, target;
  add_common(intervene_cmd, c, true, true);
  intervene_cmd->add_option("--levels", levels, "Largest number of corrected concepts");
  intervene_cmd->add_option("--mode", mode, "all | misclassified");
  intervene_cmd->add_option("--target", target, "signature | sample");

  auto* stats = app.add_subcommand("stats", "Concept activation statistics");
  add_common(stats, c, true, true);

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  bool all = false;
  std::vector<std::string> components;
  std::size_t points = 10;
  add_common(gradcheck, c, false, false);
  gradcheck->add_flag("--all", all, "Every registered component");
  gradcheck->add_option("--component", components, "Component name (repeatable)");
  gradcheck->add_option("--points", points, "Random points per component");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*bank_build) return cmd_bank_build(c, records, vocab, patterns, k_max);
    if (*bank_check) return cmd_bank_check(matrix, vocab);
    if (*data_gen) return cmd_data_gen(c);
    if (*train_cmd) return cmd_train(c, quiet);
    if (*eval_cmd) return cmd_eval(c);
    if (*rules_extract) return cmd_rules_extract(c, top_k);
    if (*explain) return cmd_explain(c, samples, action, top_k);
    if (*intervene_cmd) return cmd_intervene(c, levels, mode, target);
    if (*stats) return cmd_stats(c);
    if (*gradcheck) return cmd_gradcheck(c, all, components, points);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  std::cerr << app.help();
  return 1;
}

}  // namespace ruleforge
