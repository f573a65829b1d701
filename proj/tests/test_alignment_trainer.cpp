#include "hdeval/alignment_trainer.hpp"
#include "hdeval/random.hpp"
#include "hdeval/util.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <functional>
#include <map>
#include <set>

using namespace hdeval;

namespace {

const std::set<std::string> kPlanted = {"Spelling and punctuation", "Content richness", "Emotional engagement",
                                        "Factual accuracy"};

// Integer score in 1..5 per (sample, criterion position).
double cell_score(const CriteriaTree& tree, std::size_t sample, const std::string& id) {
  const auto order = tree.feature_order();
  const auto pos = static_cast<std::uint64_t>(std::find(order.begin(), order.end(), id) - order.begin());
  Rng rng(derive_seed(1234, {sample, pos}));
  return 1.0 + static_cast<double>(rng.below(5));
}

const Criterion* find_by_name(const CriteriaTree& tree, const std::string& name) {
  for (const auto& id : tree.feature_order()) {
    if (tree.node(id).name == name) return &tree.node(id);
  }
  return nullptr;
}

// Topical-Chat style world whose labels depend on the four planted layer-2
// criteria (plus a little of each aspect's own layer-1 score).
struct TopicalWorld {
  CriteriaTree tree = test::topical_chat_tree();
  DatasetManifest manifest = test::topical_chat_manifest(tree);
  std::vector<EvalSample> samples;
  MockBackend::Table fixtures;

  explicit TopicalWorld(int n) {
    samples = test::conversation_samples(n);
    fixtures = test::fixtures_for_tree(
        tree, manifest, samples, [&](std::size_t i, const std::string& id) { return cell_score(tree, i, id); }, 4);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      double planted = 0;
      for (const auto& name : kPlanted) planted += 2.0 * cell_score(tree, i, find_by_name(tree, name)->id);
      for (const auto& aspect : tree.nodes_at_layer(1)) {
        samples[i].labels[aspect.name] = planted + 0.3 * cell_score(tree, i, aspect.id);
      }
    }
  }

  std::unique_ptr<Backend> backend(std::optional<std::filesystem::path> cache = std::nullopt) const {
    BackendConfig cfg;
    auto mock = std::make_unique<MockBackend>(cfg, fixtures);
    if (!cache) return mock;
    return std::make_unique<CachingBackend>(std::move(mock), *cache);
  }

  TrainConfig config() const {
    TrainConfig c;
    c.aggregator = AggregatorKind::linear;
    c.prune_k = 4;
    c.max_layers = 3;
    c.children_per_parent = 4;
    c.seed = 5;
    c.scoring_threads = 2;
    return c;
  }
};

std::set<std::string> names_of(const CriteriaTree& tree, const std::vector<std::string>& ids) {
  std::set<std::string> out;
  for (const auto& id : ids) out.insert(tree.node(id).name);
  return out;
}

// (layer, parent name, name) in feature order; ids depend on selection order.
std::vector<std::string> shape_of(const CriteriaTree& tree) {
  std::vector<std::string> out;
  for (const auto& id : tree.feature_order()) {
    const auto& c = tree.node(id);
    out.push_back(std::to_string(c.layer) + "|" + tree.node(*c.parent_id).name + "|" + c.name);
  }
  return out;
}

std::map<std::string, std::string> bundle_files(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) out[e.path().filename().string()] = read_file(e.path());
  return out;
}

// Wraps a backend and fails every call after the first `budget`.
class FailingBackend : public Backend {
 public:
  FailingBackend(std::unique_ptr<Backend> inner, int budget)
      : Backend(inner->config()), inner_(std::move(inner)), budget_(budget) {}
  std::string complete(const std::string& prompt) override {
    if (calls++ >= budget_) throw TransportError("simulated outage");
    return inner_->complete(prompt);
  }
  std::atomic<int> calls{0};

 private:
  std::unique_ptr<Backend> inner_;
  int budget_;
};

}  // namespace

TEST_CASE("layer 1 comes from expert aspects or one root decomposition") {
  const TopicalWorld w(4);
  auto root = CriteriaTree::create(w.manifest.task_description, 3, 4);
  const auto expert = seed_layer1(root, w.manifest, Layer1Mode::expert_aspects, nullptr, 4);
  std::vector<std::string> names;
  for (const auto& c : expert.nodes_at_layer(1)) names.push_back(c.name);
  CHECK(names == std::vector<std::string>{"Naturalness", "Coherence", "Engagingness", "Groundedness"});

  auto b = w.backend();
  const auto decomposed = seed_layer1(root, w.manifest, Layer1Mode::llm_decomposed, b.get(), 4);
  CHECK(decomposed.nodes_at_layer(1).size() == 4);
  CHECK(decomposed.nodes_at_layer(1)[2].name == "Engagingness");

  DatasetManifest bare = w.manifest;
  bare.aspects.clear();
  CHECK_THROWS_AS(seed_layer1(root, bare, Layer1Mode::expert_aspects, nullptr, 4), ValidationError);
  CHECK_THROWS_AS(seed_layer1(expert, w.manifest, Layer1Mode::expert_aspects, nullptr, 4), ValidationError);

  DatasetManifest summeval;
  summeval.task_description = "text summarization";
  summeval.aspects = {{"coherence", "a"}, {"consistency", "b"}, {"fluency", "c"}, {"relevance", "d"}};
  const auto s = seed_layer1(CriteriaTree::create("text summarization"), summeval, Layer1Mode::expert_aspects,
                             nullptr, 4);
  CHECK(s.nodes_at_layer(1).size() == 4);
  CHECK(s.nodes_at_layer(1)[3].name == "relevance");
}

TEST_CASE("attribution pruning picks the planted layer-2 criteria") {
  const TopicalWorld w(100);
  auto backend = w.backend();
  const auto artifact = train(w.config(), w.manifest, w.samples, *backend);

  REQUIRE(artifact.provenance.size() == 3);
  const auto& l2 = artifact.provenance[1];
  CHECK(l2.decomposed_parents.size() == 4);
  CHECK(l2.criteria_added.size() == 15);
  CHECK(names_of(artifact.tree, l2.selected) == kPlanted);
  CHECK(artifact.feature_ids.size() == 31);
  CHECK(shape_of(artifact.tree) == shape_of(w.tree));
  CHECK(artifact.imputed_cells.empty());

  // Feature count after layer j is the size of every layer so far.
  std::size_t total = 0;
  for (const auto& r : artifact.provenance) {
    total += r.criteria_added.size();
    CHECK(r.importances.feature_ids.size() == total);
    // Selection stays inside the layer just added.
    for (const auto& id : r.selected) {
      CHECK(std::find(r.criteria_added.begin(), r.criteria_added.end(), id) != r.criteria_added.end());
    }
  }
  CHECK(names_of(artifact.tree, artifact.provenance[2].decomposed_parents) == kPlanted);
  for (const auto& gm : artifact.models) CHECK(gm.model.feature_ids == artifact.feature_ids);
  CHECK(artifact.train_scores.values.rows() == 100);
  CHECK(artifact.score_matrix_digest == sha256_hex(artifact.train_scores.to_csv()));
}

TEST_CASE("pruning to nothing stops after fitting the layer's aggregator") {
  const TopicalWorld w(40);
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.prune_k = 0;
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  REQUIRE(artifact.provenance.size() == 2);
  CHECK(artifact.provenance[1].selected.empty());
  CHECK(artifact.feature_ids.size() == 19);
  CHECK(artifact.models.front().model.feature_ids.size() == 19);
}

TEST_CASE("a single layer keeps only the expert aspects") {
  const TopicalWorld w(40);
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.max_layers = 1;
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  CHECK(artifact.feature_ids.size() == 4);
  CHECK(artifact.provenance.size() == 1);
}

TEST_CASE("train fraction subsamples before fitting") {
  const TopicalWorld w(100);
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.max_layers = 2;
  cfg.train_fraction = 0.5;
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  CHECK(artifact.train_scores.values.rows() == 50);
  CHECK(artifact.train_labels.rows() == 50);
  CHECK(artifact.models.front().model.train_mse.size() == 4);
  CHECK_THROWS_AS(train(cfg, w.manifest, {}, *backend), ValidationError);
}

TEST_CASE("iterations past the layer limit do nothing") {
  const TopicalWorld w(10);
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.max_layers = 1;
  auto state = initial_state(w.manifest, w.samples, 1, 4);
  run_iteration(state, 1, *backend, w.samples, w.manifest, cfg);
  const auto before = state.tree.to_json();
  run_iteration(state, 2, *backend, w.samples, w.manifest, cfg);
  CHECK(state.tree.to_json() == before);
  CHECK(state.provenance.size() == 1);
}

TEST_CASE("training is deterministic down to the bundle bytes") {
  const TopicalWorld w(60);
  test::TempDir dir;
  for (int run = 0; run < 3; ++run) {
    auto backend = w.backend();
    auto cfg = w.config();
    cfg.scoring_threads = 1 + run;
    auto artifact = train(cfg, w.manifest, w.samples, *backend);
    artifact.config.scoring_threads = 1;
    save_artifact(artifact, dir / ("run" + std::to_string(run)));
  }
  const auto first = bundle_files(dir / "run0");
  CHECK(first.size() >= 9);
  CHECK(bundle_files(dir / "run1") == first);
  CHECK(bundle_files(dir / "run2") == first);
}

TEST_CASE("replaying the recorded cache reproduces every importance table") {
  const TopicalWorld w(40);
  test::TempDir cache;
  auto live = w.backend(cache.path());
  const auto a = train(w.config(), w.manifest, w.samples, *live);

  BackendConfig replay_cfg;
  replay_cfg.kind = BackendKind::replay;
  replay_cfg.cache_dir = cache.path();
  auto replay = make_backend(replay_cfg);
  const auto b = train(w.config(), w.manifest, w.samples, *replay);
  REQUIRE(a.provenance.size() == b.provenance.size());
  for (std::size_t i = 0; i < a.provenance.size(); ++i) {
    CHECK(a.provenance[i].importances.to_csv() == b.provenance[i].importances.to_csv());
    CHECK(a.provenance[i].selected == b.provenance[i].selected);
  }
}

TEST_CASE("an interrupted run resumes from the checkpoint") {
  const TopicalWorld w(30);
  test::TempDir dir;
  auto cfg = w.config();
  cfg.checkpoint_dir = dir.path();
  cfg.scoring_threads = 1;

  FailingBackend flaky(w.backend(), 200);
  CHECK_THROWS_AS(train(cfg, w.manifest, w.samples, flaky), TransportError);
  REQUIRE(std::filesystem::exists(dir / "scores.partial.json"));

  FailingBackend counted(w.backend(), 1 << 30);
  const auto resumed = train(cfg, w.manifest, w.samples, counted);
  auto fresh_backend = w.backend();
  auto plain = cfg;
  plain.checkpoint_dir.reset();
  FailingBackend full(w.backend(), 1 << 30);
  const auto fresh = train(plain, w.manifest, w.samples, full);
  // 200 calls covered six complete columns of 30 samples.
  CHECK(counted.calls == full.calls - 180);
  CHECK(resumed.train_scores.to_csv() == fresh.train_scores.to_csv());
}

TEST_CASE("unparseable cells are imputed and logged") {
  TopicalWorld w(10);
  const auto& target = *find_by_name(w.tree, "Logical flow");
  const auto prompt = render_evaluation_prompt(w.samples[3], target, w.tree, w.manifest.template_id);
  w.fixtures[MockBackend::prompt_digest(prompt)] = "no idea";
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.max_layers = 2;
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  REQUIRE(artifact.imputed_cells.size() == 1);
  CHECK(artifact.imputed_cells[0].sample_id == w.samples[3].sample_id);
  CHECK(artifact.tree.node(artifact.imputed_cells[0].criterion_id).name == "Logical flow");
  const auto col = artifact.train_scores.column_of(artifact.imputed_cells[0].criterion_id);
  CHECK(artifact.train_scores.values(3, col) == kImputedScore);
  CHECK(artifact.train_scores.imputed(3, col));
}

TEST_CASE("aspect groups get separate models") {
  const TopicalWorld w(40);
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.max_layers = 2;
  cfg.aspect_groups = {{"main", {"Naturalness", "Coherence", "Engagingness"}}, {"grounded", {"Groundedness"}}};
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  REQUIRE(artifact.models.size() == 2);
  CHECK(artifact.models[0].model.aspect_names.size() == 3);
  CHECK(artifact.models[1].model.aspect_names == std::vector<std::string>{"Groundedness"});
  const Matrix pred = artifact.predict(artifact.train_scores.values);
  CHECK(pred.cols() == 4);
  CHECK(pred.col(3) == artifact.models[1].model.predict_batch(artifact.train_scores.values).col(0));

  cfg.aspect_groups = {{"main", {"Naturalness"}}};
  CHECK_THROWS_AS(train(cfg, w.manifest, w.samples, *backend), ValidationError);
}

TEST_CASE("apply scores every criterion and predicts") {
  const TopicalWorld w(60);
  auto backend = w.backend();
  const auto artifact = train(w.config(), w.manifest, w.samples, *backend);
  const std::vector<EvalSample> fresh(w.samples.begin(), w.samples.begin() + 10);
  const auto pred = apply(artifact, fresh, *backend);
  CHECK(pred.values.rows() == 10);
  CHECK(pred.values.cols() == 4);
  CHECK(pred.values.allFinite());
  CHECK(pred.scores.feature_ids == artifact.feature_ids);
  CHECK(pred.to_csv().rfind("sample_id,Naturalness,Coherence,Engagingness,Groundedness\n", 0) == 0);

  // Replay without the cells: the error names the missing cache key.
  test::TempDir empty;
  BackendConfig replay_cfg;
  replay_cfg.kind = BackendKind::replay;
  replay_cfg.cache_dir = empty.path();
  auto replay = make_backend(replay_cfg);
  CHECK_THROWS_AS(apply(artifact, fresh, *replay), ReplayMissError);
}

TEST_CASE("mean baseline artifact averages constant scores") {
  TopicalWorld w(20);
  for (auto& [k, v] : w.fixtures) {
    if (v.rfind("Score", 0) == 0) v = "Score (1-5): 4";
  }
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.aggregator = AggregatorKind::mean_baseline;
  cfg.max_layers = 2;
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  const auto pred = apply(artifact, w.samples, *backend);
  CHECK((pred.values.array() == 4.0).all());
}

TEST_CASE("artifact bundle round trip and tamper detection") {
  const TopicalWorld w(50);
  auto backend = w.backend();
  auto cfg = w.config();
  cfg.aggregator = AggregatorKind::mlp;
  cfg.hyper.mlp_epochs = 20;
  cfg.max_layers = 2;
  const auto artifact = train(cfg, w.manifest, w.samples, *backend);
  test::TempDir dir;
  save_artifact(artifact, dir.path());
  for (const char* f : {"tree.json", "scores.csv", "labels.csv", "config.json", "manifest.json", "provenance.json",
                        "importances_layer1.csv", "importances_layer2.csv"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  CHECK(std::filesystem::exists(dir / "model_0_all.json"));

  const auto loaded = load_artifact(dir.path());
  Rng rng(3);
  Matrix probe(50, static_cast<Eigen::Index>(artifact.feature_ids.size()));
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe(i) = rng.uniform(1, 5);
  CHECK((artifact.predict(probe).array() == loaded.predict(probe).array()).all());
  CHECK(loaded.tree.to_json() == artifact.tree.to_json());
  CHECK(loaded.provenance.size() == artifact.provenance.size());
  CHECK(loaded.provenance[1].importances.importance == artifact.provenance[1].importances.importance);
  CHECK(loaded.provenance[1].selected == artifact.provenance[1].selected);
  CHECK(to_json(loaded.config) == to_json(artifact.config));

  // Flip one byte of every position class in scores.csv.
  const auto original = read_file(dir / "scores.csv");
  for (std::size_t pos : {std::size_t{0}, original.size() / 2, original.size() - 2}) {
    auto bad = original;
    bad[pos] = bad[pos] == '1' ? '2' : '1';
    write_file_atomic(dir / "scores.csv", bad);
    CHECK_THROWS_AS(load_artifact(dir.path()), DigestMismatchError);
  }
  write_file_atomic(dir / "scores.csv", original);
  CHECK_NOTHROW(load_artifact(dir.path()));

  const auto model = read_file(dir / "model_0_all.json");
  write_file_atomic(dir / "model_0_all.json", model + " ");
  CHECK_THROWS_AS(load_artifact(dir.path()), DigestMismatchError);
  write_file_atomic(dir / "model_0_all.json", model);

  std::filesystem::remove(dir / "tree.json");
  CHECK_THROWS_AS(load_artifact(dir.path()), IoError);

  test::TempDir empty;
  CHECK_THROWS_AS(load_artifact(empty.path()), IoError);
  CHECK_THROWS_AS(load_artifact(empty / "missing"), IoError);
}

TEST_CASE("train config json and validation") {
  TrainConfig c;
  c.aspect_groups = {{"g", {"a"}}};
  c.checkpoint_dir = "/tmp/x";
  const auto back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_FALSE(to_json(c).contains("checkpoint_dir"));
  CHECK(c.prune_k == 4);
  CHECK(c.max_layers == 3);
  CHECK(c.children_per_parent == 4);

  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.prune_k = -1; }, [](TrainConfig& t) { t.max_layers = 0; },
           [](TrainConfig& t) { t.test_fraction = 1.0; }, [](TrainConfig& t) { t.train_fraction = 0.0; },
           [](TrainConfig& t) { t.attribution_repeats = 0; }}) {
    TrainConfig t;
    mutate(t);
    CHECK_THROWS_AS(t.validate(), ValidationError);
  }
  CHECK(split_seed(c) != subsample_seed(c));
  CHECK(aggregator_seed(c, 2, 0) != aggregator_seed(c, 3, 0));
  CHECK(aggregator_seed(c, 2, 0) != attribution_seed(c, 2, 0));
}
