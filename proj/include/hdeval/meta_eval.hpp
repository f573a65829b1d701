#pragma once

#include "hdeval/alignment_trainer.hpp"
#include "hdeval/correlation.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace hdeval {

struct CorrelationCell {
  std::optional<double> pearson;  // empty when undefined (constant input)
  std::optional<double> spearman;
  int n = 0;
};

struct CorrelationReport {
  std::string label;  // row name in multi-row reports
  std::vector<std::string> aspect_names;
  std::vector<CorrelationCell> cells;
  // Unweighted means over the defined cells.
  std::optional<double> average_pearson;
  std::optional<double> average_spearman;
  nlohmann::json metadata = nlohmann::json::object();

  const CorrelationCell& cell(const std::string& aspect) const;
};

// Per-aspect segment-level correlations. Rows must line up by sample id.
CorrelationReport correlation_report(const std::vector<std::string>& prediction_ids, const Matrix& predictions,
                                     const std::vector<std::string>& label_ids, const Matrix& labels,
                                     const std::vector<std::string>& aspect_names);

// Fraction of groups whose predicted ordering matches the human ordering on
// every pair: a prediction tie only matches a label tie. Groups of fewer than
// two candidates are skipped with a warning.
double ranking_accuracy(const std::vector<std::string>& group_ids, const std::vector<std::string>& sample_ids,
                        const Vector& predictions, const Vector& labels);

enum class AblationMode { full, drop_layer3, drop_layers23, drop_layers123, mean_aggregator };

std::string to_string(AblationMode m);
AblationMode ablation_mode_from_string(std::string_view s);
// The four ablations, without `full`.
std::vector<AblationMode> all_ablations();

// Held-out data for ablations and comparisons: per-criterion scores in the
// artifact's feature order and the human labels.
struct TestSet {
  ScoreMatrix scores;
  Matrix labels;  // samples x artifact aspects
};

// Refits on the stored train scores with the columns the mode keeps, then
// reports test correlations. drop_layers123 reads each aspect straight off
// the layer-1 criterion of the same name (mean of layer 1 when none matches).
CorrelationReport run_ablation(const AlignmentArtifact& artifact, const TestSet& test, AblationMode mode);

// Refits each aggregator kind on every stored criterion score.
std::vector<CorrelationReport> compare_aggregators(const AlignmentArtifact& artifact, const TestSet& test,
                                                   const std::vector<AggregatorKind>& kinds);

enum class ReportFormat { csv, table, json };

ReportFormat report_format_from_string(std::string_view s);

// One row per report; every report must share the same aspects.
std::string format_reports(const std::vector<CorrelationReport>& reports, ReportFormat format);

}  // namespace hdeval
