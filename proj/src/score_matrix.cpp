#include "hdeval/score_matrix.hpp"

#include "hdeval/util.hpp"

#include <algorithm>

namespace hdeval {

ScoreMatrix ScoreMatrix::empty(std::vector<std::string> sample_ids) {
  ScoreMatrix m;
  m.values.resize(static_cast<Eigen::Index>(sample_ids.size()), 0);
  m.imputed.resize(static_cast<Eigen::Index>(sample_ids.size()), 0);
  m.sample_ids = std::move(sample_ids);
  return m;
}

Eigen::Index ScoreMatrix::column_of(std::string_view feature_id) const {
  auto it = std::find(feature_ids.begin(), feature_ids.end(), feature_id);
  if (it == feature_ids.end()) throw NotFoundError("score matrix has no column '" + std::string(feature_id) + "'");
  return it - feature_ids.begin();
}

void ScoreMatrix::append_column(std::string feature_id, const Vector& column,
                                const Eigen::Matrix<bool, Eigen::Dynamic, 1>& imputed_column) {
  if (column.size() != values.rows() || imputed_column.size() != values.rows()) {
    throw DimensionError("column length does not match the sample count");
  }
  if (std::find(feature_ids.begin(), feature_ids.end(), feature_id) != feature_ids.end()) {
    throw ValidationError("duplicate score column '" + feature_id + "'");
  }
  values.conservativeResize(Eigen::NoChange, values.cols() + 1);
  values.col(values.cols() - 1) = column;
  imputed.conservativeResize(Eigen::NoChange, imputed.cols() + 1);
  imputed.col(imputed.cols() - 1) = imputed_column;
  feature_ids.push_back(std::move(feature_id));
}

Matrix ScoreMatrix::select(const std::vector<std::string>& ids) const {
  Matrix out(values.rows(), static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = values.col(column_of(ids[j]));
  return out;
}

std::string ScoreMatrix::to_csv() const {
  std::string out = "sample_id";
  for (const auto& f : feature_ids) out += "," + f;
  out += "\n";
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    out += sample_ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < values.cols(); ++j) out += "," + format_double(values(i, j));
    out += "\n";
  }
  return out;
}

ScoreMatrix ScoreMatrix::from_csv(std::string_view csv) {
  std::vector<std::vector<std::string>> rows;
  std::size_t start = 0;
  while (start < csv.size()) {
    auto nl = csv.find('\n', start);
    auto line = csv.substr(start, nl == std::string_view::npos ? csv.npos : nl - start);
    start = nl == std::string_view::npos ? csv.size() : nl + 1;
    if (!line.empty()) rows.push_back(split_csv_line(line));
  }
  if (rows.empty() || rows.front().empty() || rows.front().front() != "sample_id") {
    throw ParseError("score CSV must start with a sample_id header");
  }
  ScoreMatrix m;
  m.feature_ids.assign(rows.front().begin() + 1, rows.front().end());
  const auto n = static_cast<Eigen::Index>(rows.size() - 1);
  const auto d = static_cast<Eigen::Index>(m.feature_ids.size());
  m.values.resize(n, d);
  m.imputed = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, d, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i + 1)];
    if (static_cast<Eigen::Index>(row.size()) != d + 1) {
      throw ParseError("score CSV row " + std::to_string(i + 2) + " has the wrong number of fields");
    }
    m.sample_ids.push_back(row[0]);
    for (Eigen::Index j = 0; j < d; ++j) m.values(i, j) = parse_double(row[static_cast<std::size_t>(j + 1)]);
  }
  return m;
}

}  // namespace hdeval
