#include "hdeval/meta_eval.hpp"

#include "hdeval/util.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

namespace hdeval {

const CorrelationCell& CorrelationReport::cell(const std::string& aspect) const {
  auto it = std::find(aspect_names.begin(), aspect_names.end(), aspect);
  if (it == aspect_names.end()) throw NotFoundError("report has no aspect '" + aspect + "'");
  return cells[static_cast<std::size_t>(it - aspect_names.begin())];
}

namespace {

std::optional<double> mean_of(const std::vector<std::optional<double>>& xs) {
  double sum = 0;
  int n = 0;
  for (const auto& x : xs) {
    if (x) {
      sum += *x;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

template <typename F>
std::optional<double> defined_or_empty(F&& f) {
  try {
    return f();
  } catch (const UndefinedCorrelation&) {
    return std::nullopt;
  }
}

}  // namespace

CorrelationReport correlation_report(const std::vector<std::string>& prediction_ids, const Matrix& predictions,
                                     const std::vector<std::string>& label_ids, const Matrix& labels,
                                     const std::vector<std::string>& aspect_names) {
  if (prediction_ids != label_ids) throw ValidationError("prediction and label sample ids are misaligned");
  const auto n = static_cast<Eigen::Index>(prediction_ids.size());
  const auto p = static_cast<Eigen::Index>(aspect_names.size());
  if (predictions.rows() != n || labels.rows() != n) throw DimensionError("row count differs from the sample ids");
  if (predictions.cols() != p || labels.cols() != p) throw DimensionError("column count differs from the aspects");
  if (n < 2) throw ValidationError("correlation report needs at least two samples");

  CorrelationReport report;
  report.aspect_names = aspect_names;
  std::vector<std::optional<double>> rs, rhos;
  for (Eigen::Index a = 0; a < p; ++a) {
    CorrelationCell c;
    c.n = static_cast<int>(n);
    c.pearson = defined_or_empty([&] { return pearson(predictions.col(a), labels.col(a)); });
    c.spearman = defined_or_empty([&] { return spearman(predictions.col(a), labels.col(a)); });
    if (!c.pearson) {
      log_event("undefined_correlation", {{"aspect", aspect_names[static_cast<std::size_t>(a)]}});
    }
    rs.push_back(c.pearson);
    rhos.push_back(c.spearman);
    report.cells.push_back(c);
  }
  report.average_pearson = mean_of(rs);
  report.average_spearman = mean_of(rhos);
  return report;
}

double ranking_accuracy(const std::vector<std::string>& group_ids, const std::vector<std::string>& sample_ids,
                        const Vector& predictions, const Vector& labels) {
  const auto n = group_ids.size();
  if (sample_ids.size() != n || static_cast<std::size_t>(predictions.size()) != n ||
      static_cast<std::size_t>(labels.size()) != n) {
    throw DimensionError("ranking inputs differ in length");
  }
  std::map<std::string, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[group_ids[i]].push_back(static_cast<Eigen::Index>(i));

  auto sign = [](double d) { return (d > 0) - (d < 0); };
  int counted = 0, matched = 0;
  for (const auto& [gid, members] : groups) {
    if (members.size() < 2) {
      log_event("ranking_group_skipped", {{"group_id", gid}, {"size", members.size()}});
      continue;
    }
    ++counted;
    bool ok = true;
    for (std::size_t i = 0; i < members.size() && ok; ++i) {
      for (std::size_t j = i + 1; j < members.size() && ok; ++j) {
        const auto a = members[i], b = members[j];
        ok = sign(predictions(a) - predictions(b)) == sign(labels(a) - labels(b));
      }
    }
    matched += ok;
  }
  if (counted == 0) throw ValidationError("no group has two or more candidates");
  return static_cast<double>(matched) / counted;
}

std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::drop_layer3: return "drop_layer3";
    case AblationMode::drop_layers23: return "drop_layers23";
    case AblationMode::drop_layers123: return "drop_layers123";
    case AblationMode::mean_aggregator: return "mean_aggregator";
  }
  return "full";
}

AblationMode ablation_mode_from_string(std::string_view s) {
  for (auto m : {AblationMode::full, AblationMode::drop_layer3, AblationMode::drop_layers23,
                 AblationMode::drop_layers123, AblationMode::mean_aggregator}) {
    if (s == to_string(m)) return m;
  }
  throw ValidationError("unknown ablation mode '" + std::string(s) + "'");
}

std::vector<AblationMode> all_ablations() {
  return {AblationMode::drop_layer3, AblationMode::drop_layers23, AblationMode::drop_layers123,
          AblationMode::mean_aggregator};
}

namespace {

void check_test(const AlignmentArtifact& artifact, const TestSet& test) {
  if (artifact.train_scores.values.rows() == 0 || artifact.train_scores.feature_ids != artifact.feature_ids) {
    throw ValidationError("artifact provenance lacks the full train score matrix");
  }
  if (test.labels.rows() != static_cast<Eigen::Index>(test.scores.sample_ids.size()) ||
      test.labels.cols() != static_cast<Eigen::Index>(artifact.aspect_names.size())) {
    throw DimensionError("test labels do not match the test scores and aspects");
  }
}

int fit_layer(const AlignmentArtifact& artifact) {
  return artifact.provenance.empty() ? 1 : artifact.provenance.back().layer;
}

std::vector<AspectGroup> artifact_groups(const AlignmentArtifact& artifact) {
  std::vector<AspectGroup> groups;
  for (const auto& gm : artifact.models) groups.push_back(gm.group);
  return groups;
}

Matrix refit_predict(const AlignmentArtifact& artifact, const TestSet& test, AggregatorKind kind,
                     const std::vector<std::string>& keep) {
  const auto models =
      fit_groups(kind, artifact.config.hyper, artifact.train_scores.select(keep), keep, artifact.train_labels,
                 artifact.aspect_names, artifact_groups(artifact), artifact.config, fit_layer(artifact));
  return predict_groups(models, test.scores.select(keep), artifact.aspect_names);
}

CorrelationReport finish(const AlignmentArtifact& artifact, const TestSet& test, const Matrix& pred,
                         std::string label) {
  auto report =
      correlation_report(test.scores.sample_ids, pred, test.scores.sample_ids, test.labels, artifact.aspect_names);
  report.label = std::move(label);
  report.metadata = {{"dataset", artifact.manifest.name},
                     {"artifact_digest", artifact.score_matrix_digest},
                     {"split", "test"},
                     {"n_test", test.scores.sample_ids.size()}};
  return report;
}

}  // namespace

CorrelationReport run_ablation(const AlignmentArtifact& artifact, const TestSet& test, AblationMode mode) {
  check_test(artifact, test);
  auto up_to = [&](int layer) {
    std::vector<std::string> keep;
    for (const auto& id : artifact.feature_ids) {
      if (artifact.tree.node(id).layer <= layer) keep.push_back(id);
    }
    return keep;
  };
  Matrix pred;
  switch (mode) {
    case AblationMode::full:
      pred = artifact.predict(test.scores.select(artifact.feature_ids));
      break;
    case AblationMode::drop_layer3:
    case AblationMode::drop_layers23: {
      const auto keep = up_to(mode == AblationMode::drop_layer3 ? 2 : 1);
      pred = keep == artifact.feature_ids ? artifact.predict(test.scores.select(keep))
                                          : refit_predict(artifact, test, artifact.config.aggregator, keep);
      break;
    }
    case AblationMode::drop_layers123: {
      const auto layer1 = up_to(1);
      const Matrix x = test.scores.select(layer1);
      pred.resize(x.rows(), static_cast<Eigen::Index>(artifact.aspect_names.size()));
      for (std::size_t a = 0; a < artifact.aspect_names.size(); ++a) {
        auto it = std::find_if(layer1.begin(), layer1.end(),
                               [&](const auto& id) { return artifact.tree.node(id).name == artifact.aspect_names[a]; });
        pred.col(static_cast<Eigen::Index>(a)) =
            it != layer1.end() ? Vector(x.col(it - layer1.begin())) : Vector(x.rowwise().mean());
      }
      break;
    }
    case AblationMode::mean_aggregator:
      pred = refit_predict(artifact, test, AggregatorKind::mean_baseline, artifact.feature_ids);
      break;
  }
  return finish(artifact, test, pred, to_string(mode));
}

std::vector<CorrelationReport> compare_aggregators(const AlignmentArtifact& artifact, const TestSet& test,
                                                   const std::vector<AggregatorKind>& kinds) {
  check_test(artifact, test);
  std::vector<CorrelationReport> out;
  for (auto kind : kinds) {
    out.push_back(finish(artifact, test, refit_predict(artifact, test, kind, artifact.feature_ids), to_string(kind)));
  }
  return out;
}

ReportFormat report_format_from_string(std::string_view s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "table") return ReportFormat::table;
  if (s == "json") return ReportFormat::json;
  throw ValidationError("unknown report format '" + std::string(s) + "'");
}

namespace {

std::string fixed3(const std::optional<double>& v, const char* missing) {
  if (!v) return missing;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::string format_reports(const std::vector<CorrelationReport>& reports, ReportFormat format) {
  if (reports.empty()) return format == ReportFormat::json ? "[]\n" : "";
  const auto& aspects = reports.front().aspect_names;
  for (const auto& r : reports) {
    if (r.aspect_names != aspects) throw ValidationError("reports disagree on aspects");
  }

  if (format == ReportFormat::json) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : reports) {
      nlohmann::json cells = nlohmann::json::object();
      for (std::size_t a = 0; a < aspects.size(); ++a) {
        cells[aspects[a]] = {{"pearson_r", opt_json(r.cells[a].pearson)},
                             {"spearman_rho", opt_json(r.cells[a].spearman)},
                             {"n", r.cells[a].n}};
      }
      out.push_back({{"label", r.label},
                     {"aspects", cells},
                     {"average", {{"pearson_r", opt_json(r.average_pearson)},
                                  {"spearman_rho", opt_json(r.average_spearman)}}},
                     {"metadata", r.metadata}});
    }
    return out.dump(2) + "\n";
  }

  if (format == ReportFormat::csv) {
    std::string out = "label";
    for (const auto& a : aspects) out += "," + a + "_r," + a + "_rho";
    out += ",average_r,average_rho,n\n";
    auto cell = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    for (const auto& r : reports) {
      out += r.label;
      for (const auto& c : r.cells) out += "," + cell(c.pearson) + "," + cell(c.spearman);
      out += "," + cell(r.average_pearson) + "," + cell(r.average_spearman) + "," +
             std::to_string(r.cells.empty() ? 0 : r.cells.front().n) + "\n";
    }
    return out;
  }

  // Aligned text table: aspect names on the first header line, r / rho below.
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports) {
    std::vector<std::string> row{r.label};
    for (const auto& c : r.cells) {
      row.push_back(fixed3(c.pearson, "-"));
      row.push_back(fixed3(c.spearman, "-"));
    }
    row.push_back(fixed3(r.average_pearson, "-"));
    row.push_back(fixed3(r.average_spearman, "-"));
    rows.push_back(std::move(row));
  }
  std::vector<std::string> groups = aspects;
  groups.push_back("Average");
  std::size_t label_w = 6;
  for (const auto& r : reports) label_w = std::max(label_w, r.label.size());
  std::vector<std::size_t> group_w;
  for (const auto& g : groups) group_w.push_back(std::max<std::size_t>(g.size(), 13));

  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  auto lpad = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  std::string out = pad("Method", label_w);
  for (std::size_t g = 0; g < groups.size(); ++g) out += " | " + pad(groups[g], group_w[g]);
  out += "\n" + pad("", label_w);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto half = (group_w[g] - 1) / 2;
    out += " | " + lpad("r", half) + " " + lpad("rho", group_w[g] - half - 1);
  }
  out += "\n" + std::string(label_w, '-');
  for (std::size_t g = 0; g < groups.size(); ++g) out += "-+-" + std::string(group_w[g], '-');
  out += "\n";
  for (const auto& row : rows) {
    out += pad(row[0], label_w);
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto half = (group_w[g] - 1) / 2;
      out += " | " + lpad(row[1 + 2 * g], half) + " " + lpad(row[2 + 2 * g], group_w[g] - half - 1);
    }
    out += "\n";
  }
  return out;
}

}  // namespace hdeval
