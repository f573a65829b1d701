#pragma once

#include "hdeval/aggregators.hpp"
#include "hdeval/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace hdeval {

enum class AttributionMethod { permutation, shapley };

std::string to_string(AttributionMethod m);
AttributionMethod attribution_method_from_string(std::string_view s);

// Saliency of every feature for every aspect.
struct ImportanceTable {
  std::vector<std::string> feature_ids;
  std::vector<std::string> aspect_names;
  Matrix importance;  // features x aspects
  int repeats = 0;
  std::uint64_t seed = 0;
  AttributionMethod method = AttributionMethod::permutation;

  double at(const std::string& feature_id, const std::string& aspect) const;
  // Columns: feature_id,aspect,method,importance,repeats,seed
  std::string to_csv() const;
  static ImportanceTable from_csv(std::string_view csv);
};

inline constexpr int kDefaultPermutationRepeats = 10;
inline constexpr int kDefaultShapleySamples = 100;

// Mean increase in per-aspect MSE when a feature column is shuffled. Each
// (feature, repeat) shuffle draws from its own sub-seed, so the result does
// not depend on the order features are processed in.
ImportanceTable permutation_importance(const AggregatorModel& model, const TrainingSet& data, int repeats,
                                       std::uint64_t seed);

// Sampled-ordering Shapley values for one input; features absent from a
// coalition take their background value. Orderings are drawn in antithetic
// pairs (a shuffle, then its reverse). Returns features x aspects.
Matrix shapley_explain(const AggregatorModel& model, const Vector& x, const Vector& background, int n_orderings,
                       std::uint64_t seed);

// Global Shapley importance: mean |phi| over `background_size` rows drawn
// from `data` (those rows also define the background means), with
// `n_samples` sampled orderings per row.
ImportanceTable shapley_sampled(const AggregatorModel& model, const TrainingSet& data, int background_size,
                                int n_samples, std::uint64_t seed);

// Collapses the aspect axis with an unweighted mean.
std::map<std::string, double> aggregate_importance(const ImportanceTable& table);

// The k best-scoring candidates, by descending score. `candidates` must be in
// canonical feature order; on equal scores the earlier candidate wins.
std::vector<std::string> select_top_k(const std::vector<std::string>& candidates,
                                      const std::map<std::string, double>& scores, int k);

}  // namespace hdeval
