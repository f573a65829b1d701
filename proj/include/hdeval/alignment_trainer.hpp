#pragma once

#include "hdeval/aggregators.hpp"
#include "hdeval/attribution.hpp"
#include "hdeval/criteria_tree.hpp"
#include "hdeval/dataset.hpp"
#include "hdeval/score_matrix.hpp"
#include "hdeval/scoring_backend.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hdeval {

enum class Layer1Mode { expert_aspects, llm_decomposed };

std::string to_string(Layer1Mode m);
Layer1Mode layer1_mode_from_string(std::string_view s);

struct TrainConfig {
  int max_layers = kDefaultMaxLayers;
  int children_per_parent = kDefaultMaxChildren;
  int prune_k = 4;
  AggregatorKind aggregator = AggregatorKind::mlp;
  HyperParams hyper;
  AttributionMethod attribution = AttributionMethod::permutation;
  int attribution_repeats = kDefaultPermutationRepeats;
  int shapley_background = kDefaultShapleySamples;
  Layer1Mode layer1_mode = Layer1Mode::expert_aspects;
  // Empty: take the dataset's groups (or one group of every aspect).
  std::vector<AspectGroup> aspect_groups;
  double test_fraction = 0.5;
  double train_fraction = 1.0;
  // Top-level seed; split, aggregator and attribution seeds derive from it.
  std::uint64_t seed = 0;
  int scoring_threads = 4;
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Derived seeds; fixed tags so every module draws from its own stream.
std::uint64_t split_seed(const TrainConfig& c);
std::uint64_t subsample_seed(const TrainConfig& c);
std::uint64_t aggregator_seed(const TrainConfig& c, int layer, std::size_t group);
std::uint64_t attribution_seed(const TrainConfig& c, int layer, std::size_t group);

struct ImputedCell {
  std::string sample_id;
  std::string criterion_id;
};

// What one pass of decompose -> score -> fit -> attribute -> prune did.
struct IterationRecord {
  int layer = 0;
  std::vector<std::string> decomposed_parents;
  std::vector<std::string> criteria_added;
  ImportanceTable importances;  // all features so far x all aspects
  std::map<std::string, double> aggregated_importance;
  std::vector<std::string> selected;  // parents for the next layer
};

nlohmann::json to_json(const IterationRecord& r);

struct GroupModel {
  AspectGroup group;
  AggregatorModel model;
};

// Finalized decomposition plus the aggregators fit on it.
struct AlignmentArtifact {
  DatasetManifest manifest;
  TrainConfig config;
  CriteriaTree tree = CriteriaTree::create("unset");
  std::vector<std::string> feature_ids;
  std::vector<std::string> aspect_names;
  std::vector<GroupModel> models;
  ScoreMatrix train_scores;
  Matrix train_labels;  // train samples x aspects
  std::string score_matrix_digest;
  std::vector<IterationRecord> provenance;
  std::vector<ImputedCell> imputed_cells;

  // Runs the per-group models over a samples x features matrix.
  Matrix predict(const Matrix& x) const;
  void validate() const;
};

// Mutable state of one training run; owned by the trainer.
struct TrainerState {
  CriteriaTree tree = CriteriaTree::create("unset");
  ScoreMatrix scores;
  Matrix labels;
  std::vector<std::string> expand_next;  // parents to decompose at the next layer
  std::vector<GroupModel> models;
  std::vector<IterationRecord> provenance;
  std::vector<ImputedCell> imputed_cells;
  bool finished = false;
};

// Layer-1 criteria from the dataset's expert aspects, or from one
// decomposition of the root.
CriteriaTree seed_layer1(const CriteriaTree& tree, const DatasetManifest& manifest, Layer1Mode mode,
                         Backend* backend, int children_per_parent);

// Scores every sample against each listed criterion and appends the columns.
// Cells fan out over config.scoring_threads; results are order-independent.
void score_criteria(TrainerState& state, const std::vector<Criterion>& criteria,
                    const std::vector<EvalSample>& samples, const DatasetManifest& manifest, Backend& backend,
                    const TrainConfig& config);

TrainerState initial_state(const DatasetManifest& manifest, const std::vector<EvalSample>& train, int max_layers,
                           int max_children);

// One pass for layer j. j == 1 seeds the first layer; every layer-1 node is
// expanded at j == 2; later layers expand only the pruned selection.
void run_iteration(TrainerState& state, int layer, Backend& backend, const std::vector<EvalSample>& train,
                   const DatasetManifest& manifest, const TrainConfig& config);

// Takes the already-split train samples and keeps config.train_fraction of them.
AlignmentArtifact train(const TrainConfig& config, const DatasetManifest& manifest,
                        const std::vector<EvalSample>& train_samples, Backend& backend);

struct Predictions {
  std::vector<std::string> sample_ids;
  std::vector<std::string> aspect_names;
  Matrix values;  // samples x aspects
  ScoreMatrix scores;
  std::vector<ImputedCell> imputed_cells;

  std::string to_csv() const;
};

// Scores new samples on every criterion in feature order, then predicts.
Predictions apply(const AlignmentArtifact& artifact, const std::vector<EvalSample>& samples, Backend& backend);

// Fits one model per aspect group on the given feature subset.
std::vector<GroupModel> fit_groups(AggregatorKind kind, const HyperParams& hyper, const Matrix& x,
                                   const std::vector<std::string>& feature_ids, const Matrix& labels,
                                   const std::vector<std::string>& aspect_names,
                                   const std::vector<AspectGroup>& groups, const TrainConfig& config, int layer);

// Importances of every feature for every aspect, computed group by group on
// the given data and laid out in aspect_names order.
ImportanceTable attribute_groups(const std::vector<GroupModel>& models, const Matrix& x,
                                 const std::vector<std::string>& feature_ids, const Matrix& labels,
                                 const std::vector<std::string>& aspect_names, const TrainConfig& config, int layer);

Matrix predict_groups(const std::vector<GroupModel>& models, const Matrix& x,
                      const std::vector<std::string>& aspect_names);

// Bundle layout: tree.json, model_<group>.json, scores.csv, labels.csv,
// importances_layer<j>.csv, provenance.json, config.json, manifest.json.
void save_artifact(const AlignmentArtifact& artifact, const std::filesystem::path& dir);
// Verifies the score digest and the feature order against the tree.
AlignmentArtifact load_artifact(const std::filesystem::path& dir);

class DigestMismatchError : public Error {
 public:
  using Error::Error;
};

}  // namespace hdeval
