#include "hdeval/cli.hpp"

#include "hdeval/alignment_trainer.hpp"
#include "hdeval/meta_eval.hpp"
#include "hdeval/run_config.hpp"
#include "hdeval/synthetic_bench.hpp"
#include "hdeval/util.hpp"

#include <CLI11.hpp>

#include <array>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace hdeval {

namespace {

struct Overrides {
  std::string config;
  std::string backend;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;
  int prune_k = 0;
  int max_layers = 0;
  std::string aggregator;
  std::string attribution;
  std::string report;
  std::string cache_dir;
  std::map<std::string, CLI::Option*> set;

  bool given(const std::string& name) const {
    auto it = set.find(name);
    return it != set.end() && it->second->count() > 0;
  }
};

void add_common(CLI::App* sub, Overrides& o, bool config_required) {
  auto* cfg = sub->add_option("--config", o.config, "Run config JSON (dataset, backend, train settings)");
  if (config_required) cfg->required();
  o.set["backend"] = sub->add_option("--backend", o.backend, "Scoring backend")
                         ->check(CLI::IsMember({"remote", "mock", "replay"}));
  o.set["seed"] = sub->add_option("--seed", o.seed, "Top-level seed");
  o.set["train-fraction"] =
      sub->add_option("--train-fraction", o.train_fraction, "Fraction of the train split to use")
          ->check(CLI::Range(0.0, 1.0));
  o.set["prune-k"] = sub->add_option("--prune-k", o.prune_k, "Criteria kept per layer for further decomposition")
                         ->check(CLI::NonNegativeNumber);
  o.set["max-layers"] =
      sub->add_option("--max-layers", o.max_layers, "Maximum hierarchy depth")->check(CLI::PositiveNumber);
  o.set["aggregator"] =
      sub->add_option("--aggregator", o.aggregator, "Aggregator kind")->check(CLI::IsMember({"mean", "lr", "dt", "rf", "nn"}));
  o.set["attribution"] = sub->add_option("--attribution", o.attribution, "Attribution method")
                             ->check(CLI::IsMember({"permutation", "shapley"}));
  o.set["report"] =
      sub->add_option("--report", o.report, "Report format")->check(CLI::IsMember({"csv", "table", "json"}));
  o.set["cache-dir"] = sub->add_option("--cache-dir", o.cache_dir, "Response cache directory");
}

template <typename T>
void override_field(const char* field, T& target, const T& flag_value, const nlohmann::json& shown_old,
                    const nlohmann::json& shown_new) {
  if (!(target == flag_value)) {
    log_event("config_override", {{"field", field}, {"config_value", shown_old}, {"flag_value", shown_new}});
  }
  target = flag_value;
}

RunConfig load_with_overrides(const Overrides& o) {
  RunConfig rc;
  if (!o.config.empty()) rc = load_run_config(o.config);
  if (o.given("backend")) {
    auto kind = backend_kind_from_string(o.backend);
    override_field("backend.kind", rc.backend.kind, kind, to_string(rc.backend.kind), o.backend);
  }
  if (o.given("seed")) {
    override_field("train.seed", rc.train.seed, o.seed, rc.train.seed, o.seed);
    rc.backend.seed = o.seed;
  }
  if (o.given("train-fraction")) {
    override_field("train.train_fraction", rc.train.train_fraction, o.train_fraction, rc.train.train_fraction,
                   o.train_fraction);
  }
  if (o.given("prune-k")) override_field("train.prune_k", rc.train.prune_k, o.prune_k, rc.train.prune_k, o.prune_k);
  if (o.given("max-layers")) {
    override_field("train.max_layers", rc.train.max_layers, o.max_layers, rc.train.max_layers, o.max_layers);
  }
  if (o.given("aggregator")) {
    auto kind = aggregator_kind_from_string(o.aggregator);
    override_field("train.aggregator", rc.train.aggregator, kind, to_string(rc.train.aggregator), o.aggregator);
  }
  if (o.given("attribution")) {
    auto m = attribution_method_from_string(o.attribution);
    override_field("train.attribution", rc.train.attribution, m, to_string(rc.train.attribution), o.attribution);
  }
  if (o.given("report")) override_field("report_format", rc.report_format, o.report, rc.report_format, o.report);
  if (o.given("cache-dir")) {
    std::optional<std::filesystem::path> dir = std::filesystem::path(o.cache_dir);
    override_field("backend.cache_dir", rc.backend.cache_dir, dir,
                   rc.backend.cache_dir ? nlohmann::json(rc.backend.cache_dir->string()) : nlohmann::json(),
                   o.cache_dir);
  }
  rc.backend.validate();
  rc.train.validate();
  report_format_from_string(rc.report_format);
  return rc;
}

Dataset load_run_dataset(const RunConfig& rc) {
  if (rc.manifest_path.empty()) throw ValidationError("config names no dataset manifest");
  if (rc.data_path.empty()) throw ValidationError("config names no dataset data file");
  return load_dataset(rc.manifest_path, rc.data_path);
}

std::vector<EvalSample> train_part(const std::vector<EvalSample>& samples, const TrainConfig& tc) {
  return split(samples, tc.test_fraction, split_seed(tc)).train;
}

std::vector<EvalSample> test_part(const std::vector<EvalSample>& samples, const TrainConfig& tc) {
  return split(samples, tc.test_fraction, split_seed(tc)).test;
}

std::string extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::csv: return "csv";
    case ReportFormat::table: return "txt";
    case ReportFormat::json: return "json";
  }
  return "txt";
}

void check_aspects(const AlignmentArtifact& artifact, const Dataset& ds) {
  if (ds.manifest.aspect_names() != artifact.aspect_names) {
    throw ValidationError("dataset aspects do not match the artifact's aspects");
  }
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_iteration(const CriteriaTree& tree, const IterationRecord& r) {
  std::cout << "layer " << r.layer << ": +" << r.criteria_added.size() << " criteria";
  std::vector<std::pair<double, std::string>> top;
  for (const auto& [id, v] : r.aggregated_importance) top.emplace_back(v, id);
  std::stable_sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::cout << "; top importances:";
  for (std::size_t i = 0; i < std::min<std::size_t>(3, top.size()); ++i) {
    std::cout << " " << tree.node(top[i].second).name << "=" << short_num(top[i].first);
  }
  std::cout << "; selected:";
  for (const auto& id : r.selected) std::cout << " [" << tree.node(id).name << "]";
  std::cout << "\n";
}

int cmd_train(const Overrides& o, const std::string& out) {
  auto rc = load_with_overrides(o);
  if (!out.empty()) rc.output_dir = out;
  const auto ds = load_run_dataset(rc);
  const auto train_samples = train_part(ds.samples, rc.train);
  auto backend = make_backend(rc.backend);
  TrainConfig tc = rc.train;
  if (!tc.checkpoint_dir) tc.checkpoint_dir = rc.output_dir / "checkpoint";
  std::filesystem::create_directories(*tc.checkpoint_dir);
  log_event("train_start", {{"n_split_train", train_samples.size()}, {"train_fraction", tc.train_fraction}});

  auto artifact = train(tc, ds.manifest, train_samples, *backend);
  artifact.config.checkpoint_dir.reset();
  save_artifact(artifact, rc.output_dir);
  std::filesystem::remove_all(*tc.checkpoint_dir);

  for (const auto& r : artifact.provenance) print_iteration(artifact.tree, r);
  std::cout << "criteria: " << artifact.feature_ids.size() << ", train samples: " << artifact.train_scores.sample_ids.size()
            << ", imputed cells: " << artifact.imputed_cells.size() << "\n";
  std::cout << "artifact written to " << rc.output_dir.string() << "\n";
  return 0;
}

TestSet score_test(const AlignmentArtifact& artifact, const std::vector<EvalSample>& test, Backend& backend,
                   Predictions* predictions) {
  auto pred = apply(artifact, test, backend);
  TestSet t{pred.scores, label_matrix(test, artifact.aspect_names)};
  if (predictions) *predictions = std::move(pred);
  return t;
}

int cmd_evaluate(const Overrides& o, const std::string& artifact_dir, const std::string& out_flag) {
  auto rc = load_with_overrides(o);
  const auto artifact = load_artifact(artifact_dir);
  const auto ds = load_run_dataset(rc);
  check_aspects(artifact, ds);
  const auto test = test_part(ds.samples, artifact.config);
  auto backend = make_backend(rc.backend);
  Predictions pred;
  const auto test_set = score_test(artifact, test, *backend, &pred);
  auto report = correlation_report(pred.sample_ids, pred.values, pred.sample_ids, test_set.labels,
                                   artifact.aspect_names);
  report.label = "hd-eval";
  report.metadata = {{"dataset", ds.manifest.name},
                     {"artifact_digest", artifact.score_matrix_digest},
                     {"split", "test"},
                     {"n_test", test.size()}};

  std::vector<std::string> groups;
  std::map<std::string, int> group_sizes;
  for (const auto& s : test) {
    groups.push_back(s.group_id);
    ++group_sizes[s.group_id];
  }
  if (std::any_of(group_sizes.begin(), group_sizes.end(), [](const auto& g) { return g.second >= 2; })) {
    const Vector pm = pred.values.rowwise().mean();
    const Vector lm = test_set.labels.rowwise().mean();
    report.metadata["ranking_accuracy"] = ranking_accuracy(groups, pred.sample_ids, pm, lm);
  }

  const auto fmt = report_format_from_string(rc.report_format);
  const std::filesystem::path out = out_flag.empty() ? std::filesystem::path(artifact_dir) / "evaluation" : std::filesystem::path(out_flag);
  std::filesystem::create_directories(out);
  write_file_atomic(out / "predictions.csv", pred.to_csv());
  write_file_atomic(out / "test_scores.csv", pred.scores.to_csv());
  const auto text = format_reports({report}, fmt);
  write_file_atomic(out / ("report." + extension(fmt)), text);
  std::cout << text;
  if (report.metadata.contains("ranking_accuracy")) {
    std::cout << "ranking accuracy: " << short_num(report.metadata["ranking_accuracy"].get<double>()) << "\n";
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

ImportanceTable final_importance(const AlignmentArtifact& artifact, AttributionMethod method, int repeats) {
  TrainConfig cfg = artifact.config;
  cfg.attribution = method;
  cfg.attribution_repeats = repeats;
  return attribute_groups(artifact.models, artifact.train_scores.select(artifact.feature_ids), artifact.feature_ids,
                          artifact.train_labels, artifact.aspect_names, cfg, 1 + artifact.tree.depth());
}

int cmd_report(const Overrides& o, const std::string& artifact_dir, const std::string& ablation,
               const std::string& aggregators, const std::string& importance, const std::string& out_flag) {
  auto rc = load_with_overrides(o);
  const auto artifact = load_artifact(artifact_dir);
  const auto fmt = report_format_from_string(rc.report_format);
  const std::filesystem::path out = out_flag.empty() ? std::filesystem::path(artifact_dir) / "report" : std::filesystem::path(out_flag);
  std::filesystem::create_directories(out);
  const bool any = !ablation.empty() || !aggregators.empty() || !importance.empty();

  std::optional<TestSet> test;
  auto need_test = [&]() -> const TestSet& {
    if (!test) {
      const auto ds = load_run_dataset(rc);
      check_aspects(artifact, ds);
      auto backend = make_backend(rc.backend);
      test = score_test(artifact, test_part(ds.samples, artifact.config), *backend, nullptr);
    }
    return *test;
  };

  if (!ablation.empty() || !any) {
    std::vector<AblationMode> modes;
    for (const auto& m : split_list(ablation.empty() ? "all" : ablation)) {
      if (m == "all") {
        for (auto a : all_ablations()) modes.push_back(a);
      } else {
        modes.push_back(ablation_mode_from_string(m));
      }
    }
    std::vector<CorrelationReport> rows{run_ablation(artifact, need_test(), AblationMode::full)};
    for (auto m : modes) rows.push_back(run_ablation(artifact, need_test(), m));
    const auto text = format_reports(rows, fmt);
    write_file_atomic(out / ("ablation." + extension(fmt)), text);
    std::cout << text;
  }
  if (!aggregators.empty()) {
    std::vector<AggregatorKind> kinds;
    for (const auto& k : split_list(aggregators)) kinds.push_back(aggregator_kind_from_string(k));
    const auto text = format_reports(compare_aggregators(artifact, need_test(), kinds), fmt);
    write_file_atomic(out / ("aggregators." + extension(fmt)), text);
    std::cout << text;
  }
  if (!importance.empty()) {
    const auto table = final_importance(artifact, attribution_method_from_string(importance),
                                        artifact.config.attribution_repeats);
    write_file_atomic(out / "importances.csv", table.to_csv());
    std::cout << table.to_csv();
  }
  return 0;
}

int cmd_attribute(const Overrides& o, const std::string& artifact_dir, int repeats, const std::string& out) {
  const auto artifact = load_artifact(artifact_dir);
  const auto method = o.given("attribution") ? attribution_method_from_string(o.attribution) : artifact.config.attribution;
  const auto table = final_importance(artifact, method, repeats > 0 ? repeats : artifact.config.attribution_repeats);
  if (out.empty()) {
    std::cout << table.to_csv();
  } else {
    write_file_atomic(out, table.to_csv());
    std::cout << "importances written to " << out << "\n";
  }
  return 0;
}

int cmd_decompose(const Overrides& o, const std::string& tree_path, const std::string& parent, int children,
                  const std::string& out) {
  auto rc = load_with_overrides(o);
  if (rc.manifest_path.empty()) throw ValidationError("config names no dataset manifest");
  if (!std::filesystem::exists(rc.manifest_path)) {
    throw IoError("dataset manifest not found: " + rc.manifest_path.string());
  }
  const auto manifest = manifest_from_json(nlohmann::json::parse(read_file(rc.manifest_path)));
  auto backend = make_backend(rc.backend);
  const int desired = children > 0 ? children : rc.train.children_per_parent;

  CriteriaTree tree = CriteriaTree::create("unset");
  if (!tree_path.empty()) {
    tree = CriteriaTree::from_json(nlohmann::json::parse(read_file(tree_path)));
  } else {
    const int max_children = std::max(desired, static_cast<int>(manifest.aspects.size()));
    tree = CriteriaTree::create(manifest.task_description, rc.train.max_layers, max_children);
    tree = seed_layer1(tree, manifest, rc.train.layer1_mode, backend.get(), desired);
  }
  if (!parent.empty()) {
    tree = tree.attach_children(parent, decompose(*backend, tree, parent, desired, manifest.task_background));
  }
  const auto text = tree.to_json().dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
    for (const auto& id : tree.feature_order()) {
      const auto& c = tree.node(id);
      std::cout << std::string(2 * static_cast<std::size_t>(c.layer - 1), ' ') << c.id << " " << c.name << "\n";
    }
  }
  return 0;
}

int cmd_bench(const Overrides& o, const std::string& world_path, const std::string& out, int n_samples,
              double noise) {
  WorldConfig wc;
  if (!world_path.empty()) wc = world_config_from_json(nlohmann::json::parse(read_file(world_path)));
  if (o.given("seed")) wc.seed = o.seed;
  if (n_samples > 0) wc.n_samples = n_samples;
  if (noise >= 0) wc.noise_sigma = noise;
  auto bench = generate(wc);
  if (o.given("aggregator")) bench.train.aggregator = aggregator_kind_from_string(o.aggregator);
  if (o.given("prune-k")) bench.train.prune_k = o.prune_k;
  if (o.given("train-fraction")) bench.train.train_fraction = o.train_fraction;
  if (o.given("attribution")) bench.train.attribution = attribution_method_from_string(o.attribution);
  write_bench(bench, out);
  std::cout << "bench written to " << out << ": " << bench.dataset.samples.size() << " samples, "
            << bench.world.nodes.size() << " latent criteria, " << bench.fixtures.size() << " fixtures\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Hierarchical criteria decomposition and aggregation for LLM-based evaluation"};
  app.name("hdeval");
  app.require_subcommand(1);

  std::array<Overrides, 6> ov;
  std::string artifact_dir, out, tree_path, parent, world_path, ablation, aggregators, importance;
  int children = 0, repeats = 0, n_samples = 0;
  double noise = -1;

  auto* train_cmd = app.add_subcommand("train", "Run iterative alignment training and write an artifact bundle");
  add_common(train_cmd, ov[0], true);
  train_cmd->add_option("--out", out, "Artifact directory (overrides output_dir)");

  auto* eval_cmd = app.add_subcommand("evaluate", "Score the test split with a trained artifact");
  add_common(eval_cmd, ov[1], true);
  eval_cmd->add_option("--artifact", artifact_dir, "Artifact directory")->required();
  eval_cmd->add_option("--out", out, "Output directory (default <artifact>/evaluation)");

  auto* report_cmd = app.add_subcommand("report", "Ablation, aggregator comparison and importance reports");
  add_common(report_cmd, ov[2], false);
  report_cmd->add_option("--artifact", artifact_dir, "Artifact directory")->required();
  report_cmd->add_option("--ablation", ablation, "all, or a comma list of ablation modes");
  report_cmd->add_option("--aggregators", aggregators, "Comma list of aggregators to compare (lr,dt,rf,nn,mean)");
  report_cmd->add_option("--importance", importance, "Emit feature importances with this method")
      ->check(CLI::IsMember({"permutation", "shapley"}));
  report_cmd->add_option("--out", out, "Output directory (default <artifact>/report)");

  auto* attr_cmd = app.add_subcommand("attribute", "Feature importances of a trained artifact");
  add_common(attr_cmd, ov[3], false);
  attr_cmd->add_option("--artifact", artifact_dir, "Artifact directory")->required();
  attr_cmd->add_option("--repeats", repeats, "Permutation repeats or Shapley orderings")->check(CLI::PositiveNumber);
  attr_cmd->add_option("--out", out, "CSV path (default stdout)");

  auto* dec_cmd = app.add_subcommand("decompose", "Seed layer 1 or decompose one criterion into children");
  add_common(dec_cmd, ov[4], true);
  dec_cmd->add_option("--tree", tree_path, "Existing tree JSON (default: a fresh tree with layer 1 seeded)");
  dec_cmd->add_option("--parent", parent, "Criterion id to decompose");
  dec_cmd->add_option("--children", children, "Desired number of children")->check(CLI::PositiveNumber);
  dec_cmd->add_option("--out", out, "Tree JSON path (default stdout)");

  auto* bench_cmd = app.add_subcommand("bench", "Generate a synthetic bundle with a planted hierarchy");
  add_common(bench_cmd, ov[5], false);
  bench_cmd->add_option("--world", world_path, "World config JSON");
  bench_cmd->add_option("--out", out, "Output directory")->required();
  bench_cmd->add_option("--n-samples", n_samples, "Number of samples")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--noise", noise, "Label noise sigma")->check(CLI::NonNegativeNumber);

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(ov[0], out);
    if (*eval_cmd) return cmd_evaluate(ov[1], artifact_dir, out);
    if (*report_cmd) return cmd_report(ov[2], artifact_dir, ablation, aggregators, importance, out);
    if (*attr_cmd) return cmd_attribute(ov[3], artifact_dir, repeats, out);
    if (*dec_cmd) return cmd_decompose(ov[4], tree_path, parent, children, out);
    if (*bench_cmd) return cmd_bench(ov[5], world_path, out, n_samples, noise);
  } catch (const ValidationError& e) {
    log_event("error", {{"kind", "validation"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NotFoundError& e) {
    log_event("error", {{"kind", "not_found"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    log_event("error", {{"kind", "io"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    log_event("error", {{"kind", "parse"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const DigestMismatchError& e) {
    log_event("error", {{"kind", "digest_mismatch"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    log_event("error", {{"kind", "parse"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    log_event("error", {{"kind", "runtime"}, {"message", e.what()}});
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace hdeval
