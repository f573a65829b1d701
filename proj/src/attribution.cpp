#include "hdeval/attribution.hpp"

#include "hdeval/random.hpp"
#include "hdeval/util.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

namespace hdeval {

std::string to_string(AttributionMethod m) { return m == AttributionMethod::shapley ? "shapley" : "permutation"; }

AttributionMethod attribution_method_from_string(std::string_view s) {
  if (s == "permutation") return AttributionMethod::permutation;
  if (s == "shapley") return AttributionMethod::shapley;
  throw ValidationError("unknown attribution method '" + std::string(s) + "'");
}

double ImportanceTable::at(const std::string& feature_id, const std::string& aspect) const {
  auto f = std::find(feature_ids.begin(), feature_ids.end(), feature_id);
  auto a = std::find(aspect_names.begin(), aspect_names.end(), aspect);
  if (f == feature_ids.end() || a == aspect_names.end()) throw NotFoundError("no importance for " + feature_id);
  return importance(f - feature_ids.begin(), a - aspect_names.begin());
}

std::string ImportanceTable::to_csv() const {
  std::string out = "feature_id,aspect,method,importance,repeats,seed\n";
  for (std::size_t f = 0; f < feature_ids.size(); ++f) {
    for (std::size_t a = 0; a < aspect_names.size(); ++a) {
      out += feature_ids[f] + "," + aspect_names[a] + "," + to_string(method) + "," +
             format_double(importance(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(a))) + "," +
             std::to_string(repeats) + "," + std::to_string(seed) + "\n";
    }
  }
  return out;
}

ImportanceTable ImportanceTable::from_csv(std::string_view csv) {
  ImportanceTable t;
  std::vector<std::tuple<std::string, std::string, double>> cells;
  std::size_t start = 0;
  bool header = true;
  while (start < csv.size()) {
    auto nl = csv.find('\n', start);
    auto line = csv.substr(start, nl == std::string_view::npos ? csv.npos : nl - start);
    start = nl == std::string_view::npos ? csv.size() : nl + 1;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (header) {
      if (f != std::vector<std::string>{"feature_id", "aspect", "method", "importance", "repeats", "seed"}) {
        throw ParseError("importance CSV has an unexpected header");
      }
      header = false;
      continue;
    }
    if (f.size() != 6) throw ParseError("importance CSV row has the wrong number of fields");
    if (std::find(t.feature_ids.begin(), t.feature_ids.end(), f[0]) == t.feature_ids.end()) t.feature_ids.push_back(f[0]);
    if (std::find(t.aspect_names.begin(), t.aspect_names.end(), f[1]) == t.aspect_names.end()) {
      t.aspect_names.push_back(f[1]);
    }
    t.method = attribution_method_from_string(f[2]);
    t.repeats = std::stoi(f[4]);
    t.seed = std::stoull(f[5]);
    cells.emplace_back(f[0], f[1], parse_double(f[3]));
  }
  t.importance = Matrix::Zero(static_cast<Eigen::Index>(t.feature_ids.size()),
                              static_cast<Eigen::Index>(t.aspect_names.size()));
  for (const auto& [fid, aspect, v] : cells) {
    const auto fi = std::find(t.feature_ids.begin(), t.feature_ids.end(), fid) - t.feature_ids.begin();
    const auto ai = std::find(t.aspect_names.begin(), t.aspect_names.end(), aspect) - t.aspect_names.begin();
    t.importance(fi, ai) = v;
  }
  return t;
}

namespace {

// FNV-1a; stable across platforms, unlike std::hash.
std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void check_matches(const AggregatorModel& model, const TrainingSet& data) {
  data.validate();
  if (data.feature_ids != model.feature_ids) throw DimensionError("data features differ from the model's");
  if (data.aspect_names != model.aspect_names) throw DimensionError("data aspects differ from the model's");
}

}  // namespace

ImportanceTable permutation_importance(const AggregatorModel& model, const TrainingSet& data, int repeats,
                                       std::uint64_t seed) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  check_matches(model, data);
  const Matrix base_pred = model.predict_batch(data.x);
  const Eigen::RowVectorXd base_mse = (base_pred - data.y).array().square().colwise().mean();

  ImportanceTable table;
  table.feature_ids = data.feature_ids;
  table.aspect_names = data.aspect_names;
  table.importance = Matrix::Zero(data.x.cols(), data.y.cols());
  table.repeats = repeats;
  table.seed = seed;
  table.method = AttributionMethod::permutation;

  const auto n = static_cast<std::size_t>(data.x.rows());
  Matrix shuffled = data.x;
  for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
    const auto feature_hash = stable_hash(data.feature_ids[static_cast<std::size_t>(j)]);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(data.y.cols());
    for (int r = 0; r < repeats; ++r) {
      std::vector<Eigen::Index> perm(n);
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      Rng rng(derive_seed(seed, {feature_hash, static_cast<std::uint64_t>(r)}));
      rng.shuffle(std::span<Eigen::Index>(perm));
      for (std::size_t i = 0; i < n; ++i) shuffled(static_cast<Eigen::Index>(i), j) = data.x(perm[i], j);
      const Matrix pred = model.predict_batch(shuffled);
      acc += (pred - data.y).array().square().colwise().mean().matrix() - base_mse;
    }
    shuffled.col(j) = data.x.col(j);
    table.importance.row(j) = acc / static_cast<double>(repeats);
  }
  return table;
}

Matrix shapley_explain(const AggregatorModel& model, const Vector& x, const Vector& background, int n_orderings,
                       std::uint64_t seed) {
  if (n_orderings < 1) throw ValidationError("n_orderings must be >= 1");
  const auto d = static_cast<std::size_t>(x.size());
  if (background.size() != x.size()) throw DimensionError("background and input differ in length");
  const auto p = static_cast<Eigen::Index>(model.aspect_names.size());
  Matrix phi = Matrix::Zero(x.size(), p);
  const Vector base = model.predict(background);
  std::vector<Eigen::Index> order(d);
  Rng rng(seed);
  for (int s = 0; s < n_orderings; ++s) {
    // Antithetic pairs: every odd ordering is the previous one reversed.
    if (s % 2 == 0) {
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      rng.shuffle(std::span<Eigen::Index>(order));
    } else {
      std::reverse(order.begin(), order.end());
    }
    Vector z = background;
    Vector prev = base;
    for (auto f : order) {
      z(f) = x(f);
      Vector cur = model.predict(z);
      phi.row(f) += (cur - prev).transpose();
      prev = std::move(cur);
    }
  }
  return phi / static_cast<double>(n_orderings);
}

ImportanceTable shapley_sampled(const AggregatorModel& model, const TrainingSet& data, int background_size,
                                int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("n_samples must be >= 1");
  check_matches(model, data);
  const auto n = static_cast<std::size_t>(data.x.rows());
  if (background_size < 1 || static_cast<std::size_t>(background_size) > n) {
    throw ValidationError("background_size must lie in [1, n_rows]");
  }
  std::vector<Eigen::Index> rows(n);
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  Rng pick(derive_seed(seed, {0xbac6}));
  pick.shuffle(std::span<Eigen::Index>(rows));
  rows.resize(static_cast<std::size_t>(background_size));
  std::sort(rows.begin(), rows.end());

  Vector background = Vector::Zero(data.x.cols());
  for (auto r : rows) background += data.x.row(r).transpose();
  background /= static_cast<double>(rows.size());

  ImportanceTable table;
  table.feature_ids = data.feature_ids;
  table.aspect_names = data.aspect_names;
  table.importance = Matrix::Zero(data.x.cols(), data.y.cols());
  table.repeats = n_samples;
  table.seed = seed;
  table.method = AttributionMethod::shapley;
  for (auto r : rows) {
    const Matrix phi = shapley_explain(model, data.x.row(r).transpose(), background, n_samples,
                                       derive_seed(seed, {static_cast<std::uint64_t>(r)}));
    table.importance += phi.cwiseAbs();
  }
  table.importance /= static_cast<double>(rows.size());
  return table;
}

std::map<std::string, double> aggregate_importance(const ImportanceTable& table) {
  std::map<std::string, double> out;
  for (std::size_t f = 0; f < table.feature_ids.size(); ++f) {
    out[table.feature_ids[f]] = table.importance.row(static_cast<Eigen::Index>(f)).mean();
  }
  return out;
}

std::vector<std::string> select_top_k(const std::vector<std::string>& candidates,
                                      const std::map<std::string, double>& scores, int k) {
  if (k < 0) throw ValidationError("k must be >= 0");
  std::vector<std::pair<std::string, double>> ranked;
  for (const auto& c : candidates) {
    auto it = scores.find(c);
    if (it == scores.end()) throw NotFoundError("candidate '" + c + "' has no score");
    ranked.emplace_back(c, it->second);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(std::min(ranked.size(), static_cast<std::size_t>(k)));
  std::vector<std::string> out;
  for (auto& [id, _] : ranked) out.push_back(std::move(id));
  return out;
}

}  // namespace hdeval
