#include "hdeval/alignment_trainer.hpp"
#include "hdeval/util.hpp"

#include <algorithm>

namespace hdeval {

namespace {

std::string safe_name(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

std::string model_file(std::size_t index, const AspectGroup& g) {
  return "model_" + std::to_string(index) + "_" + safe_name(g.name) + ".json";
}

std::string pretty(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json read_json(const std::filesystem::path& p) {
  try {
    return nlohmann::json::parse(read_file(p));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

ScoreMatrix labels_as_matrix(const std::vector<std::string>& sample_ids, const std::vector<std::string>& aspects,
                             const Matrix& labels) {
  ScoreMatrix m;
  m.sample_ids = sample_ids;
  m.feature_ids = aspects;
  m.values = labels;
  m.imputed = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(labels.rows(), labels.cols(), false);
  return m;
}

}  // namespace

void save_artifact(const AlignmentArtifact& artifact, const std::filesystem::path& dir) {
  artifact.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json digests = nlohmann::json::object();
  auto emit = [&](const std::string& name, const std::string& content) {
    write_file_atomic(dir / name, content);
    digests[name] = sha256_hex(content);
  };
  const std::string scores_csv = artifact.train_scores.to_csv();
  const std::string labels_csv =
      labels_as_matrix(artifact.train_scores.sample_ids, artifact.aspect_names, artifact.train_labels).to_csv();

  emit("tree.json", pretty(artifact.tree.to_json()));
  emit("scores.csv", scores_csv);
  emit("labels.csv", labels_csv);
  emit("config.json", pretty(to_json(artifact.config)));
  emit("manifest.json", pretty(to_json(artifact.manifest)));

  nlohmann::json models = nlohmann::json::array();
  for (std::size_t g = 0; g < artifact.models.size(); ++g) {
    const auto& gm = artifact.models[g];
    const auto file = model_file(g, gm.group);
    emit(file, pretty(gm.model.to_json()));
    models.push_back({{"group", gm.group.name}, {"aspects", gm.group.aspects}, {"file", file}});
  }
  nlohmann::json iterations = nlohmann::json::array();
  for (const auto& r : artifact.provenance) {
    emit("importances_layer" + std::to_string(r.layer) + ".csv", r.importances.to_csv());
    iterations.push_back(to_json(r));
  }
  nlohmann::json imputed = nlohmann::json::array();
  for (const auto& c : artifact.imputed_cells) {
    imputed.push_back({{"sample_id", c.sample_id}, {"criterion_id", c.criterion_id}});
  }
  const nlohmann::json provenance = {{"feature_ids", artifact.feature_ids},
                                     {"aspect_names", artifact.aspect_names},
                                     {"score_matrix_digest", artifact.score_matrix_digest},
                                     {"labels_digest", sha256_hex(labels_csv)},
                                     {"train_fraction", artifact.config.train_fraction},
                                     {"test_fraction", artifact.config.test_fraction},
                                     {"seed", artifact.config.seed},
                                     {"n_train", artifact.train_scores.sample_ids.size()},
                                     {"models", models},
                                     {"iterations", iterations},
                                     {"imputed_cells", imputed},
                                     {"file_digests", digests}};
  write_file_atomic(dir / "provenance.json", pretty(provenance));
}

AlignmentArtifact load_artifact(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("artifact directory not found: " + dir.string());
  AlignmentArtifact a;
  const auto provenance = read_json(dir / "provenance.json");
  try {
    for (const auto& [name, digest] : provenance.at("file_digests").items()) {
      if (sha256_hex(read_file(dir / name)) != digest.get<std::string>()) {
        throw DigestMismatchError(name + " does not match the digest recorded in provenance.json");
      }
    }
    a.tree = CriteriaTree::from_json(read_json(dir / "tree.json"));
    a.config = train_config_from_json(read_json(dir / "config.json"));
    a.manifest = manifest_from_json(read_json(dir / "manifest.json"));

    const std::string scores_csv = read_file(dir / "scores.csv");
    a.score_matrix_digest = provenance.at("score_matrix_digest").get<std::string>();
    if (sha256_hex(scores_csv) != a.score_matrix_digest) {
      throw DigestMismatchError("scores.csv does not match the digest recorded in provenance.json");
    }
    const std::string labels_csv = read_file(dir / "labels.csv");
    if (sha256_hex(labels_csv) != provenance.at("labels_digest").get<std::string>()) {
      throw DigestMismatchError("labels.csv does not match the digest recorded in provenance.json");
    }
    a.train_scores = ScoreMatrix::from_csv(scores_csv);
    const auto labels = ScoreMatrix::from_csv(labels_csv);
    a.train_labels = labels.values;
    if (labels.sample_ids != a.train_scores.sample_ids) throw ValidationError("labels and scores disagree on samples");

    a.feature_ids = provenance.at("feature_ids").get<std::vector<std::string>>();
    a.aspect_names = provenance.at("aspect_names").get<std::vector<std::string>>();
    if (labels.feature_ids != a.aspect_names) throw ValidationError("labels.csv columns do not match the aspects");

    for (const auto& m : provenance.at("models")) {
      GroupModel gm{{m.at("group").get<std::string>(), m.at("aspects").get<std::vector<std::string>>()},
                    AggregatorModel::from_json(read_json(dir / m.at("file").get<std::string>()))};
      a.models.push_back(std::move(gm));
    }
    for (const auto& c : provenance.at("imputed_cells")) {
      a.imputed_cells.push_back({c.at("sample_id").get<std::string>(), c.at("criterion_id").get<std::string>()});
      const auto row = std::find(a.train_scores.sample_ids.begin(), a.train_scores.sample_ids.end(),
                                 a.imputed_cells.back().sample_id);
      if (row != a.train_scores.sample_ids.end()) {
        a.train_scores.imputed(row - a.train_scores.sample_ids.begin(),
                               a.train_scores.column_of(a.imputed_cells.back().criterion_id)) = true;
      }
    }
    for (const auto& it : provenance.at("iterations")) {
      IterationRecord r;
      r.layer = it.at("layer").get<int>();
      r.decomposed_parents = it.at("decomposed_parents").get<std::vector<std::string>>();
      r.criteria_added = it.at("criteria_added").get<std::vector<std::string>>();
      r.aggregated_importance = it.at("aggregated_importance").get<std::map<std::string, double>>();
      r.selected = it.at("selected").get<std::vector<std::string>>();
      r.importances = ImportanceTable::from_csv(read_file(dir / it.at("importances_file").get<std::string>()));
      a.provenance.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("provenance.json: " + std::string(e.what()));
  }
  a.validate();
  return a;
}

}  // namespace hdeval
