#pragma once

#include "hdeval/common.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace hdeval {

// Samples x criteria matrix of LLM-assigned scores, plus a mask of cells that
// were imputed after repeated parse failures.
struct ScoreMatrix {
  std::vector<std::string> sample_ids;
  std::vector<std::string> feature_ids;
  Matrix values;
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> imputed;

  static ScoreMatrix empty(std::vector<std::string> sample_ids);

  Eigen::Index column_of(std::string_view feature_id) const;
  void append_column(std::string feature_id, const Vector& column,
                     const Eigen::Matrix<bool, Eigen::Dynamic, 1>& imputed_column);
  // Columns in the given order.
  Matrix select(const std::vector<std::string>& feature_ids) const;

  // "sample_id,<feature ids...>" header, one row per sample, shortest
  // round-trip decimals. The imputed mask is not part of the CSV.
  std::string to_csv() const;
  static ScoreMatrix from_csv(std::string_view csv);
};

}  // namespace hdeval
