#include "hdeval/alignment_trainer.hpp"

#include "hdeval/random.hpp"
#include "hdeval/util.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <set>
#include <thread>

namespace hdeval {

std::string to_string(Layer1Mode m) { return m == Layer1Mode::llm_decomposed ? "llm_decomposed" : "expert_aspects"; }

Layer1Mode layer1_mode_from_string(std::string_view s) {
  if (s == "expert_aspects") return Layer1Mode::expert_aspects;
  if (s == "llm_decomposed") return Layer1Mode::llm_decomposed;
  throw ValidationError("unknown layer1_mode '" + std::string(s) + "'");
}

void TrainConfig::validate() const {
  if (max_layers < 1) throw ValidationError("max_layers must be >= 1");
  if (children_per_parent < 1) throw ValidationError("children_per_parent must be >= 1");
  if (prune_k < 0) throw ValidationError("prune_k must be >= 0");
  if (attribution_repeats < 1) throw ValidationError("attribution_repeats must be >= 1");
  if (shapley_background < 1) throw ValidationError("shapley_background must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ValidationError("test_fraction must lie in (0, 1)");
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) throw ValidationError("train_fraction must lie in (0, 1]");
  if (scoring_threads < 1) throw ValidationError("scoring_threads must be >= 1");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : c.aspect_groups) groups.push_back({{"name", g.name}, {"aspects", g.aspects}});
  return {{"max_layers", c.max_layers},
          {"children_per_parent", c.children_per_parent},
          {"prune_k", c.prune_k},
          {"aggregator", to_string(c.aggregator)},
          {"hyper", to_json(c.hyper)},
          {"attribution", to_string(c.attribution)},
          {"attribution_repeats", c.attribution_repeats},
          {"shapley_background", c.shapley_background},
          {"layer1_mode", to_string(c.layer1_mode)},
          {"aspect_groups", groups},
          {"test_fraction", c.test_fraction},
          {"train_fraction", c.train_fraction},
          {"seed", c.seed},
          {"scoring_threads", c.scoring_threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.max_layers = j.value("max_layers", c.max_layers);
    c.children_per_parent = j.value("children_per_parent", c.children_per_parent);
    c.prune_k = j.value("prune_k", c.prune_k);
    if (j.contains("aggregator")) c.aggregator = aggregator_kind_from_string(j.at("aggregator").get<std::string>());
    if (j.contains("hyper")) c.hyper = hyper_params_from_json(j.at("hyper"));
    if (j.contains("attribution")) {
      c.attribution = attribution_method_from_string(j.at("attribution").get<std::string>());
    }
    c.attribution_repeats = j.value("attribution_repeats", c.attribution_repeats);
    c.shapley_background = j.value("shapley_background", c.shapley_background);
    if (j.contains("layer1_mode")) c.layer1_mode = layer1_mode_from_string(j.at("layer1_mode").get<std::string>());
    if (j.contains("aspect_groups")) {
      for (const auto& g : j.at("aspect_groups")) {
        c.aspect_groups.push_back({g.at("name").get<std::string>(), g.at("aspects").get<std::vector<std::string>>()});
      }
    }
    c.test_fraction = j.value("test_fraction", c.test_fraction);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.seed = j.value("seed", c.seed);
    c.scoring_threads = j.value("scoring_threads", c.scoring_threads);
    if (j.contains("checkpoint_dir") && !j.at("checkpoint_dir").is_null()) {
      c.checkpoint_dir = j.at("checkpoint_dir").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return c;
}

std::uint64_t split_seed(const TrainConfig& c) { return derive_seed(c.seed, {0x53504c54}); }
std::uint64_t subsample_seed(const TrainConfig& c) { return derive_seed(c.seed, {0x53554253}); }
std::uint64_t aggregator_seed(const TrainConfig& c, int layer, std::size_t group) {
  return derive_seed(c.seed, {0x41474752, static_cast<std::uint64_t>(layer), group});
}
std::uint64_t attribution_seed(const TrainConfig& c, int layer, std::size_t group) {
  return derive_seed(c.seed, {0x41545452, static_cast<std::uint64_t>(layer), group});
}

nlohmann::json to_json(const IterationRecord& r) {
  return {{"layer", r.layer},
          {"decomposed_parents", r.decomposed_parents},
          {"criteria_added", r.criteria_added},
          {"aggregated_importance", r.aggregated_importance},
          {"selected", r.selected},
          {"importance_method", to_string(r.importances.method)},
          {"importances_file", "importances_layer" + std::to_string(r.layer) + ".csv"}};
}

Matrix AlignmentArtifact::predict(const Matrix& x) const { return predict_groups(models, x, aspect_names); }

void AlignmentArtifact::validate() const {
  const auto order = tree.feature_order();
  if (order != feature_ids) throw ValidationError("artifact feature order does not match its tree");
  if (train_scores.feature_ids != feature_ids) throw ValidationError("artifact score columns do not match its tree");
  for (const auto& gm : models) {
    if (gm.model.feature_ids != feature_ids) throw ValidationError("model '" + gm.group.name + "' feature mismatch");
  }
  std::multiset<std::string> covered;
  for (const auto& gm : models) covered.insert(gm.group.aspects.begin(), gm.group.aspects.end());
  if (covered != std::multiset<std::string>(aspect_names.begin(), aspect_names.end())) {
    throw ValidationError("artifact models do not cover every aspect exactly once");
  }
}

CriteriaTree seed_layer1(const CriteriaTree& tree, const DatasetManifest& manifest, Layer1Mode mode,
                         Backend* backend, int children_per_parent) {
  if (!tree.nodes_at_layer(1).empty()) throw ValidationError("layer 1 is already populated");
  std::vector<ChildSpec> children;
  if (mode == Layer1Mode::expert_aspects) {
    if (manifest.aspects.empty()) throw ValidationError("dataset declares no aspects for expert_aspects mode");
    for (const auto& a : manifest.aspects) {
      if (a.definition.empty()) {
        throw ValidationError("aspect '" + a.name + "' has no definition; expert_aspects mode needs one");
      }
      children.push_back({a.name, a.definition});
    }
  } else {
    if (backend == nullptr) throw ValidationError("llm_decomposed mode needs a backend");
    children = decompose(*backend, tree, tree.root().id, std::min(children_per_parent, tree.max_children()),
                         manifest.task_background);
  }
  return tree.attach_children(tree.root().id, children);
}

TrainerState initial_state(const DatasetManifest& manifest, const std::vector<EvalSample>& train, int max_layers,
                           int max_children) {
  TrainerState state;
  state.tree = CriteriaTree::create(manifest.task_description, max_layers, max_children);
  std::vector<std::string> ids;
  for (const auto& s : train) ids.push_back(s.sample_id);
  state.scores = ScoreMatrix::empty(std::move(ids));
  state.labels = label_matrix(train, manifest.aspect_names());
  return state;
}

namespace {

std::string lineage_key(const CriteriaTree& tree, const Criterion& c) {
  std::string key;
  for (const auto& n : tree.lineage(c.id)) key += (key.empty() ? "" : " > ") + n.name;
  return key;
}

struct Checkpoint {
  std::filesystem::path path;
  nlohmann::json columns = nlohmann::json::object();

  static Checkpoint open(const std::filesystem::path& dir) {
    Checkpoint cp{dir / "scores.partial.json"};
    if (std::filesystem::exists(cp.path)) {
      auto j = nlohmann::json::parse(read_file(cp.path), nullptr, false);
      if (!j.is_discarded() && j.contains("columns")) cp.columns = j.at("columns");
    }
    return cp;
  }

  bool restore(const std::string& id, const std::string& lineage, const std::vector<std::string>& sample_ids,
               Vector& values, Eigen::Matrix<bool, Eigen::Dynamic, 1>& imputed) const {
    if (!columns.contains(id)) return false;
    const auto& c = columns.at(id);
    if (c.value("lineage", "") != lineage || c.at("sample_ids").get<std::vector<std::string>>() != sample_ids) {
      return false;
    }
    const auto v = c.at("values").get<std::vector<double>>();
    const auto m = c.at("imputed").get<std::vector<bool>>();
    for (std::size_t i = 0; i < v.size(); ++i) {
      values(static_cast<Eigen::Index>(i)) = v[i];
      imputed(static_cast<Eigen::Index>(i)) = m[i];
    }
    return true;
  }

  void record(const std::string& id, const std::string& lineage, const std::vector<std::string>& sample_ids,
              const Vector& values, const Eigen::Matrix<bool, Eigen::Dynamic, 1>& imputed) {
    std::vector<bool> m(static_cast<std::size_t>(imputed.size()));
    for (Eigen::Index i = 0; i < imputed.size(); ++i) m[static_cast<std::size_t>(i)] = imputed(i);
    columns[id] = {{"lineage", lineage},
                   {"sample_ids", sample_ids},
                   {"values", std::vector<double>(values.data(), values.data() + values.size())},
                   {"imputed", m}};
    write_file_atomic(path, nlohmann::json{{"columns", columns}}.dump() + "\n");
  }
};

// Runs fn(i) for i in [0, n) on up to `threads` workers; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void score_criteria(TrainerState& state, const std::vector<Criterion>& criteria,
                    const std::vector<EvalSample>& samples, const DatasetManifest& manifest, Backend& backend,
                    const TrainConfig& config) {
  std::optional<Checkpoint> checkpoint;
  if (config.checkpoint_dir) checkpoint = Checkpoint::open(*config.checkpoint_dir);
  const auto n = static_cast<Eigen::Index>(samples.size());
  const int threads = std::min(config.scoring_threads, backend.config().max_in_flight);

  for (const auto& criterion : criteria) {
    Vector values(n);
    Eigen::Matrix<bool, Eigen::Dynamic, 1> imputed(n);
    const auto lineage = lineage_key(state.tree, criterion);
    if (!(checkpoint && checkpoint->restore(criterion.id, lineage, state.scores.sample_ids, values, imputed))) {
      parallel_for(samples.size(), threads, [&](std::size_t i) {
        const auto sv = score(backend, samples[i], criterion, state.tree, manifest.template_id);
        values(static_cast<Eigen::Index>(i)) = sv.value;
        imputed(static_cast<Eigen::Index>(i)) = sv.imputed;
      });
      if (checkpoint) checkpoint->record(criterion.id, lineage, state.scores.sample_ids, values, imputed);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!imputed(i)) continue;
      const auto& sid = samples[static_cast<std::size_t>(i)].sample_id;
      state.imputed_cells.push_back({sid, criterion.id});
      log_event("imputed_cell", {{"sample_id", sid}, {"criterion_id", criterion.id}});
    }
    state.scores.append_column(criterion.id, values, imputed);
  }
}

std::vector<GroupModel> fit_groups(AggregatorKind kind, const HyperParams& hyper, const Matrix& x,
                                   const std::vector<std::string>& feature_ids, const Matrix& labels,
                                   const std::vector<std::string>& aspect_names,
                                   const std::vector<AspectGroup>& groups, const TrainConfig& config, int layer) {
  TrainingSet all{x, labels, feature_ids, aspect_names};
  std::vector<GroupModel> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const TrainingSet data = select_aspects(all, groups[g].aspects);
    out.push_back({groups[g], fit(kind, data, hyper, aggregator_seed(config, layer, g))});
  }
  return out;
}

Matrix predict_groups(const std::vector<GroupModel>& models, const Matrix& x,
                      const std::vector<std::string>& aspect_names) {
  Matrix out(x.rows(), static_cast<Eigen::Index>(aspect_names.size()));
  for (const auto& gm : models) {
    const Matrix part = gm.model.predict_batch(x);
    for (std::size_t a = 0; a < gm.group.aspects.size(); ++a) {
      auto it = std::find(aspect_names.begin(), aspect_names.end(), gm.group.aspects[a]);
      if (it == aspect_names.end()) throw NotFoundError("aspect '" + gm.group.aspects[a] + "' unknown");
      out.col(it - aspect_names.begin()) = part.col(static_cast<Eigen::Index>(a));
    }
  }
  return out;
}

namespace {

std::vector<AspectGroup> groups_for(const TrainConfig& config, const DatasetManifest& manifest) {
  auto groups = config.aspect_groups.empty() ? manifest.resolved_groups() : config.aspect_groups;
  std::multiset<std::string> covered;
  for (const auto& g : groups) covered.insert(g.aspects.begin(), g.aspects.end());
  const auto names = manifest.aspect_names();
  if (covered != std::multiset<std::string>(names.begin(), names.end())) {
    throw ValidationError("aspect_groups must partition the dataset's aspects exactly");
  }
  return groups;
}

}  // namespace

ImportanceTable attribute_groups(const std::vector<GroupModel>& models, const Matrix& x,
                                 const std::vector<std::string>& feature_ids, const Matrix& labels,
                                 const std::vector<std::string>& aspect_names, const TrainConfig& config, int layer) {
  TrainingSet all{x, labels, feature_ids, aspect_names};
  ImportanceTable table;
  table.feature_ids = feature_ids;
  table.aspect_names = aspect_names;
  table.importance = Matrix::Zero(x.cols(), static_cast<Eigen::Index>(aspect_names.size()));
  table.method = config.attribution;
  table.seed = attribution_seed(config, layer, 0);
  for (std::size_t g = 0; g < models.size(); ++g) {
    const auto& gm = models[g];
    const TrainingSet data = select_aspects(all, gm.group.aspects);
    const auto seed = attribution_seed(config, layer, g);
    const ImportanceTable part =
        config.attribution == AttributionMethod::permutation
            ? permutation_importance(gm.model, data, config.attribution_repeats, seed)
            : shapley_sampled(gm.model, data, std::min<int>(config.shapley_background, static_cast<int>(x.rows())),
                              config.attribution_repeats, seed);
    table.repeats = part.repeats;
    for (std::size_t a = 0; a < gm.group.aspects.size(); ++a) {
      auto it = std::find(aspect_names.begin(), aspect_names.end(), gm.group.aspects[a]);
      table.importance.col(it - aspect_names.begin()) = part.importance.col(static_cast<Eigen::Index>(a));
    }
  }
  return table;
}

void run_iteration(TrainerState& state, int layer, Backend& backend, const std::vector<EvalSample>& train,
                   const DatasetManifest& manifest, const TrainConfig& config) {
  if (state.finished) return;
  if (layer < 1) throw ValidationError("layer index must be >= 1");
  if (layer > config.max_layers || layer > state.tree.max_layers()) {
    log_event("iteration_skipped", {{"layer", layer}, {"reason", "beyond max_layers"}});
    return;
  }
  IterationRecord record;
  record.layer = layer;

  // 1. Decomposition.
  if (layer == 1) {
    state.tree = seed_layer1(state.tree, manifest, config.layer1_mode, &backend, config.children_per_parent);
    record.decomposed_parents = {state.tree.root().id};
  } else {
    if (state.expand_next.empty()) {
      state.finished = true;
      return;
    }
    for (const auto& parent : state.expand_next) {
      const auto children = decompose(backend, state.tree, parent,
                                      std::min(config.children_per_parent, state.tree.max_children()),
                                      manifest.task_background);
      state.tree = state.tree.attach_children(parent, children);
      record.decomposed_parents.push_back(parent);
    }
  }
  const auto added = state.tree.nodes_at_layer(layer);
  for (const auto& c : added) record.criteria_added.push_back(c.id);

  // 2. Fine-grained scoring of the new criteria.
  score_criteria(state, added, train, manifest, backend, config);

  // 3. Proxy aggregator on every criterion scored so far.
  const auto features = state.tree.feature_order();
  const Matrix x = state.scores.select(features);
  const auto aspects = manifest.aspect_names();
  const auto groups = groups_for(config, manifest);
  state.models = fit_groups(config.aggregator, config.hyper, x, features, state.labels, aspects, groups, config, layer);

  // 4. Attribution.
  record.importances = attribute_groups(state.models, x, features, state.labels, aspects, config, layer);
  record.aggregated_importance = aggregate_importance(record.importances);

  // 5. Pruning: the next layer's parents come from this layer only.
  if (layer == 1) {
    for (const auto& c : added) record.selected.push_back(c.id);
  } else {
    record.selected = select_top_k(record.criteria_added, record.aggregated_importance, config.prune_k);
  }
  state.expand_next = record.selected;
  if (state.expand_next.empty()) state.finished = true;

  nlohmann::json top = nlohmann::json::array();
  for (const auto& id : record.selected) top.push_back({{"id", id}, {"name", state.tree.node(id).name}});
  log_event("iteration_done", {{"layer", layer},
                               {"criteria_added", record.criteria_added.size()},
                               {"features", features.size()},
                               {"selected", top}});
  state.provenance.push_back(std::move(record));
}

AlignmentArtifact train(const TrainConfig& config, const DatasetManifest& manifest,
                        const std::vector<EvalSample>& train_samples, Backend& backend) {
  config.validate();
  if (train_samples.empty()) throw ValidationError("training set is empty");
  int max_children = config.children_per_parent;
  if (config.layer1_mode == Layer1Mode::expert_aspects) {
    max_children = std::max(max_children, static_cast<int>(manifest.aspects.size()));
  }
  const auto used = config.train_fraction < 1.0
                        ? subsample_train(train_samples, config.train_fraction, subsample_seed(config))
                        : train_samples;
  TrainerState state = initial_state(manifest, used, config.max_layers, max_children);
  for (int layer = 1; layer <= config.max_layers && !state.finished; ++layer) {
    run_iteration(state, layer, backend, used, manifest, config);
  }

  AlignmentArtifact artifact;
  artifact.manifest = manifest;
  artifact.config = config;
  artifact.tree = state.tree;
  artifact.feature_ids = state.tree.feature_order();
  artifact.aspect_names = manifest.aspect_names();
  artifact.models = std::move(state.models);
  artifact.train_scores = state.scores;
  artifact.train_scores.values = state.scores.select(artifact.feature_ids);
  artifact.train_scores.feature_ids = artifact.feature_ids;
  artifact.train_labels = state.labels;
  artifact.score_matrix_digest = sha256_hex(artifact.train_scores.to_csv());
  artifact.provenance = std::move(state.provenance);
  artifact.imputed_cells = std::move(state.imputed_cells);
  artifact.validate();
  return artifact;
}

std::string Predictions::to_csv() const {
  std::string out = "sample_id";
  for (const auto& a : aspect_names) out += "," + a;
  out += "\n";
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    out += sample_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < values.cols(); ++j) out += "," + format_double(values(i, j));
    out += "\n";
  }
  return out;
}

Predictions apply(const AlignmentArtifact& artifact, const std::vector<EvalSample>& samples, Backend& backend) {
  artifact.validate();
  TrainerState state;
  state.tree = artifact.tree;
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.sample_id);
  state.scores = ScoreMatrix::empty(ids);
  std::vector<Criterion> criteria;
  for (const auto& id : artifact.feature_ids) criteria.push_back(artifact.tree.node(id));
  TrainConfig cfg = artifact.config;
  cfg.checkpoint_dir.reset();
  score_criteria(state, criteria, samples, artifact.manifest, backend, cfg);

  Predictions out;
  out.sample_ids = std::move(ids);
  out.aspect_names = artifact.aspect_names;
  out.values = artifact.predict(state.scores.select(artifact.feature_ids));
  out.scores = std::move(state.scores);
  out.imputed_cells = std::move(state.imputed_cells);
  return out;
}

}  // namespace hdeval
