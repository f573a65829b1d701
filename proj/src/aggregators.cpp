#include "hdeval/aggregators.hpp"

#include "hdeval/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace hdeval {

std::string to_string(AggregatorKind kind) {
  switch (kind) {
    case AggregatorKind::mean_baseline: return "mean_baseline";
    case AggregatorKind::linear: return "linear";
    case AggregatorKind::tree: return "tree";
    case AggregatorKind::forest: return "forest";
    case AggregatorKind::mlp: return "mlp";
  }
  return "mean_baseline";
}

AggregatorKind aggregator_kind_from_string(std::string_view s) {
  if (s == "mean_baseline" || s == "mean") return AggregatorKind::mean_baseline;
  if (s == "linear" || s == "lr") return AggregatorKind::linear;
  if (s == "tree" || s == "dt") return AggregatorKind::tree;
  if (s == "forest" || s == "rf") return AggregatorKind::forest;
  if (s == "mlp" || s == "nn") return AggregatorKind::mlp;
  throw ValidationError("unknown aggregator kind '" + std::string(s) + "'");
}

nlohmann::json to_json(const HyperParams& h) {
  return {{"ridge_lambda", h.ridge_lambda},         {"tree_max_depth", h.tree_max_depth},
          {"tree_min_samples_leaf", h.tree_min_samples_leaf}, {"forest_trees", h.forest_trees},
          {"forest_max_features", h.forest_max_features},     {"mlp_hidden", h.mlp_hidden},
          {"mlp_learning_rate", h.mlp_learning_rate},         {"mlp_epochs", h.mlp_epochs},
          {"mlp_batch_size", h.mlp_batch_size}};
}

HyperParams hyper_params_from_json(const nlohmann::json& j) {
  HyperParams h;
  h.ridge_lambda = j.value("ridge_lambda", h.ridge_lambda);
  h.tree_max_depth = j.value("tree_max_depth", h.tree_max_depth);
  h.tree_min_samples_leaf = j.value("tree_min_samples_leaf", h.tree_min_samples_leaf);
  h.forest_trees = j.value("forest_trees", h.forest_trees);
  h.forest_max_features = j.value("forest_max_features", h.forest_max_features);
  h.mlp_hidden = j.value("mlp_hidden", h.mlp_hidden);
  h.mlp_learning_rate = j.value("mlp_learning_rate", h.mlp_learning_rate);
  h.mlp_epochs = j.value("mlp_epochs", h.mlp_epochs);
  h.mlp_batch_size = j.value("mlp_batch_size", h.mlp_batch_size);
  return h;
}

void TrainingSet::validate() const {
  if (x.rows() < 1) throw ValidationError("training set has no samples");
  if (x.rows() != y.rows()) throw DimensionError("X and Y row counts differ");
  if (static_cast<std::size_t>(x.cols()) != feature_ids.size()) {
    throw DimensionError("feature_ids does not match the columns of X");
  }
  if (static_cast<std::size_t>(y.cols()) != aspect_names.size() || y.cols() < 1) {
    throw DimensionError("aspect_names does not match the columns of Y");
  }
  if (!x.allFinite()) throw ValidationError("X contains non-finite values");
  if (!y.allFinite()) throw ValidationError("Y contains non-finite values");
}

TrainingSet select_features(const TrainingSet& data, const std::vector<std::string>& feature_ids) {
  TrainingSet out;
  out.y = data.y;
  out.aspect_names = data.aspect_names;
  out.feature_ids = feature_ids;
  out.x.resize(data.x.rows(), static_cast<Eigen::Index>(feature_ids.size()));
  for (std::size_t j = 0; j < feature_ids.size(); ++j) {
    auto it = std::find(data.feature_ids.begin(), data.feature_ids.end(), feature_ids[j]);
    if (it == data.feature_ids.end()) throw NotFoundError("feature '" + feature_ids[j] + "' not in training set");
    out.x.col(static_cast<Eigen::Index>(j)) = data.x.col(it - data.feature_ids.begin());
  }
  return out;
}

TrainingSet select_aspects(const TrainingSet& data, const std::vector<std::string>& aspects) {
  TrainingSet out;
  out.x = data.x;
  out.feature_ids = data.feature_ids;
  out.aspect_names = aspects;
  out.y.resize(data.y.rows(), static_cast<Eigen::Index>(aspects.size()));
  for (std::size_t t = 0; t < aspects.size(); ++t) {
    auto it = std::find(data.aspect_names.begin(), data.aspect_names.end(), aspects[t]);
    if (it == data.aspect_names.end()) throw NotFoundError("aspect '" + aspects[t] + "' not in training set");
    out.y.col(static_cast<Eigen::Index>(t)) = data.y.col(it - data.aspect_names.begin());
  }
  return out;
}

namespace detail {

// Ridge with an unpenalised intercept, solved on centred data.
LinearParams fit_ridge(const Matrix& x, const Matrix& y, double lambda) {
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Matrix xc = x.rowwise() - x_mean;
  const Matrix yc = y.rowwise() - y_mean;
  Matrix gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  LinearParams p;
  p.weights = gram.ldlt().solve(xc.transpose() * yc);
  p.intercepts = (y_mean - x_mean * p.weights).transpose();
  return p;
}

namespace {

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  double score = 0.0;  // S_L^2/n_L + S_R^2/n_R, larger is better
};

class CartBuilder {
 public:
  CartBuilder(const Matrix& x, const Vector& y, int max_depth, int min_leaf, int max_features, std::uint64_t seed)
      : x_(x), y_(y), max_depth_(max_depth), min_leaf_(std::max(1, min_leaf)), max_features_(max_features), rng_(seed) {}

  RegressionTree build(std::vector<Eigen::Index> rows) {
    tree_.nodes.clear();
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<Eigen::Index> rows, int depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0.0, sum_sq = 0.0;
    for (auto r : rows) {
      sum += y_(r);
      sum_sq += y_(r) * y_(r);
    }
    const double n = static_cast<double>(rows.size());
    tree_.nodes[id].value = sum / n;
    const double sse = sum_sq - sum * sum / n;
    if (depth >= max_depth_ || rows.size() < 2 * static_cast<std::size_t>(min_leaf_) || sse <= 1e-12 * n) return id;

    const auto split = best_split(rows, sum);
    // Reject splits that do not reduce the squared error.
    if (split.feature < 0 || split.score - sum * sum / n <= 1e-12) return id;

    std::vector<Eigen::Index> left, right;
    for (auto r : rows) (x_(r, split.feature) <= split.threshold ? left : right).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    tree_.nodes[id].feature = split.feature;
    tree_.nodes[id].threshold = split.threshold;
    const int l = grow(std::move(left), depth + 1);
    const int r = grow(std::move(right), depth + 1);
    tree_.nodes[id].left = l;
    tree_.nodes[id].right = r;
    return id;
  }

  std::vector<int> candidate_features() {
    const int d = static_cast<int>(x_.cols());
    std::vector<int> all(d);
    std::iota(all.begin(), all.end(), 0);
    if (max_features_ <= 0 || max_features_ >= d) return all;
    rng_.shuffle(std::span<int>(all));
    all.resize(max_features_);
    std::sort(all.begin(), all.end());
    return all;
  }

  SplitChoice best_split(std::vector<Eigen::Index>& rows, double total) {
    SplitChoice best;
    best.score = -1.0;
    const std::size_t n = rows.size();
    for (int f : candidate_features()) {
      std::stable_sort(rows.begin(), rows.end(), [&](auto a, auto b) { return x_(a, f) < x_(b, f); });
      double left_sum = 0.0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += y_(rows[i]);
        const std::size_t n_left = i + 1, n_right = n - n_left;
        const double lo = x_(rows[i], f), hi = x_(rows[i + 1], f);
        if (lo == hi || n_left < static_cast<std::size_t>(min_leaf_) ||
            n_right < static_cast<std::size_t>(min_leaf_)) {
          continue;
        }
        const double right_sum = total - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(n_left) +
                             right_sum * right_sum / static_cast<double>(n_right);
        if (score > best.score + 1e-12) {
          best = {f, lo + 0.5 * (hi - lo), score};
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const Vector& y_;
  int max_depth_;
  int min_leaf_;
  int max_features_;
  Rng rng_;
  RegressionTree tree_;
};

}  // namespace

RegressionTree fit_cart(const Matrix& x, const Vector& y, const std::vector<Eigen::Index>& rows, int max_depth,
                        int min_samples_leaf, int max_features, std::uint64_t seed) {
  if (rows.empty()) throw ValidationError("cannot grow a tree on zero rows");
  return CartBuilder(x, y, max_depth, min_samples_leaf, max_features, seed).build(rows);
}

MlpParams mlp_init(Eigen::Index n_in, const std::vector<int>& hidden, Eigen::Index n_out, std::uint64_t seed) {
  Rng rng(seed);
  MlpParams p;
  std::vector<Eigen::Index> sizes{n_in};
  for (int h : hidden) {
    if (h < 1) throw ValidationError("hidden layer sizes must be >= 1");
    sizes.push_back(h);
  }
  sizes.push_back(n_out);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double bound = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l + 1]));
    Matrix w(sizes[l + 1], sizes[l]);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    Vector b(sizes[l + 1]);
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

Matrix mlp_forward(const MlpParams& p, const Matrix& x) {
  // Column-major activations: features x samples.
  Matrix a = x.transpose();
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    Matrix z = (p.weights[l] * a).colwise() + p.biases[l];
    a = l + 1 < p.weights.size() ? Matrix(z.cwiseMax(0.0)) : std::move(z);
  }
  return a.transpose();
}

double mlp_loss(const MlpParams& p, const Matrix& x, const Matrix& y) {
  return (mlp_forward(p, x) - y).squaredNorm() / static_cast<double>(y.size());
}

MlpParams mlp_gradient(const MlpParams& p, const Matrix& x, const Matrix& y) {
  const std::size_t layers = p.weights.size();
  std::vector<Matrix> acts{x.transpose()};
  std::vector<Matrix> pre;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = (p.weights[l] * acts.back()).colwise() + p.biases[l];
    pre.push_back(z);
    acts.push_back(l + 1 < layers ? Matrix(z.cwiseMax(0.0)) : z);
  }
  MlpParams g;
  g.weights.resize(layers);
  g.biases.resize(layers);
  Matrix delta = (acts.back() - y.transpose()) * (2.0 / static_cast<double>(y.size()));
  for (std::size_t l = layers; l-- > 0;) {
    g.weights[l] = delta * acts[l].transpose();
    g.biases[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (p.weights[l].transpose() * delta).cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return g;
}

MlpParams mlp_train(const Matrix& x, const Matrix& y, const HyperParams& hyper, std::uint64_t seed,
                    std::vector<double>* loss_log) {
  MlpParams p = mlp_init(x.cols(), hyper.mlp_hidden, y.cols(), derive_seed(seed, {1}));
  // Start the output bias at the label mean.
  p.biases.back() = y.colwise().mean().transpose();

  MlpParams m, v;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    m.weights.push_back(Matrix::Zero(p.weights[l].rows(), p.weights[l].cols()));
    m.biases.push_back(Vector::Zero(p.biases[l].size()));
  }
  v = m;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const double lr = hyper.mlp_learning_rate;
  const Eigen::Index n = x.rows();
  const Eigen::Index batch = std::max<Eigen::Index>(1, std::min<Eigen::Index>(hyper.mlp_batch_size, n));

  Rng rng(derive_seed(seed, {2}));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  if (loss_log) loss_log->push_back(mlp_loss(p, x, y));
  long step = 0;
  for (int epoch = 0; epoch < hyper.mlp_epochs; ++epoch) {
    rng.shuffle(std::span<Eigen::Index>(order));
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      Matrix xb(len, x.cols()), yb(len, y.cols());
      for (Eigen::Index i = 0; i < len; ++i) {
        xb.row(i) = x.row(order[static_cast<std::size_t>(start + i)]);
        yb.row(i) = y.row(order[static_cast<std::size_t>(start + i)]);
      }
      const MlpParams g = mlp_gradient(p, xb, yb);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto update = [&](auto& param, auto& mom, auto& vel, const auto& grad) {
        mom = beta1 * mom + (1.0 - beta1) * grad;
        vel = beta2 * vel + (1.0 - beta2) * grad.cwiseProduct(grad);
        param.array() -= lr * (mom.array() / c1) / ((vel.array() / c2).sqrt() + eps);
      };
      for (std::size_t l = 0; l < p.weights.size(); ++l) {
        update(p.weights[l], m.weights[l], v.weights[l], g.weights[l]);
        update(p.biases[l], m.biases[l], v.biases[l], g.biases[l]);
      }
    }
    if (loss_log) loss_log->push_back(mlp_loss(p, x, y));
  }
  return p;
}

}  // namespace detail

AggregatorModel fit(AggregatorKind kind, const TrainingSet& data, const HyperParams& hyper, std::uint64_t seed) {
  data.validate();
  AggregatorModel model;
  model.kind = kind;
  model.feature_ids = data.feature_ids;
  model.aspect_names = data.aspect_names;
  model.seed = seed;
  model.hyper = hyper;
  const Eigen::Index n = data.x.rows();
  const Eigen::Index d = data.x.cols();

  switch (kind) {
    case AggregatorKind::mean_baseline:
      model.params = MeanParams{};
      break;
    case AggregatorKind::linear:
      if (hyper.ridge_lambda < 0.0) throw ValidationError("ridge_lambda must be >= 0");
      model.params = detail::fit_ridge(data.x, data.y, hyper.ridge_lambda);
      break;
    case AggregatorKind::tree:
    case AggregatorKind::forest: {
      const bool forest = kind == AggregatorKind::forest;
      const int n_trees = forest ? hyper.forest_trees : 1;
      if (n_trees < 1) throw ValidationError("forest_trees must be >= 1");
      const int max_features =
          forest ? (hyper.forest_max_features > 0 ? hyper.forest_max_features
                                                  : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d)))))
                 : 0;
      TreeEnsemble ens;
      for (Eigen::Index t = 0; t < data.y.cols(); ++t) {
        const Vector target = data.y.col(t);
        std::vector<RegressionTree> trees;
        for (int k = 0; k < n_trees; ++k) {
          const auto tree_seed = derive_seed(seed, {static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(k)});
          std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
          if (forest) {
            Rng boot(derive_seed(tree_seed, {7}));
            for (auto& r : rows) r = static_cast<Eigen::Index>(boot.below(static_cast<std::uint64_t>(n)));
          } else {
            std::iota(rows.begin(), rows.end(), Eigen::Index{0});
          }
          trees.push_back(detail::fit_cart(data.x, target, rows, hyper.tree_max_depth, hyper.tree_min_samples_leaf,
                                           max_features, tree_seed));
        }
        ens.per_aspect.push_back(std::move(trees));
      }
      model.params = std::move(ens);
      break;
    }
    case AggregatorKind::mlp:
      if (hyper.mlp_epochs < 0) throw ValidationError("mlp_epochs must be >= 0");
      model.params = detail::mlp_train(data.x, data.y, hyper, seed);
      break;
  }
  model.train_mse = evaluate_mse(model, data);
  return model;
}

Vector AggregatorModel::predict(const Eigen::Ref<const Vector>& x) const {
  if (static_cast<std::size_t>(x.size()) != feature_ids.size()) {
    throw DimensionError("expected " + std::to_string(feature_ids.size()) + " features, got " +
                         std::to_string(x.size()));
  }
  if (!x.allFinite()) throw ValidationError("feature vector contains non-finite values");
  const auto p = static_cast<Eigen::Index>(aspect_names.size());
  return std::visit(
      [&](const auto& params) -> Vector {
        using T = std::decay_t<decltype(params)>;
        if constexpr (std::is_same_v<T, MeanParams>) {
          return Vector::Constant(p, x.mean());
        } else if constexpr (std::is_same_v<T, LinearParams>) {
          return params.weights.transpose() * x + params.intercepts;
        } else if constexpr (std::is_same_v<T, TreeEnsemble>) {
          Vector out(p);
          for (Eigen::Index t = 0; t < p; ++t) {
            const auto& trees = params.per_aspect[static_cast<std::size_t>(t)];
            double acc = 0.0;
            for (const auto& tree : trees) acc += tree.predict(x);
            out(t) = acc / static_cast<double>(trees.size());
          }
          return out;
        } else {
          return detail::mlp_forward(params, x.transpose()).transpose();
        }
      },
      params);
}

Matrix AggregatorModel::predict_batch(const Matrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != feature_ids.size()) {
    throw DimensionError("expected " + std::to_string(feature_ids.size()) + " feature columns, got " +
                         std::to_string(x.cols()));
  }
  Matrix out(x.rows(), static_cast<Eigen::Index>(aspect_names.size()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i) = predict(x.row(i).transpose()).transpose();
  return out;
}

Vector evaluate_mse(const AggregatorModel& model, const TrainingSet& data) {
  data.validate();
  if (data.feature_ids != model.feature_ids) throw DimensionError("training set features differ from the model's");
  if (data.aspect_names != model.aspect_names) throw DimensionError("training set aspects differ from the model's");
  const Matrix err = model.predict_batch(data.x) - data.y;
  return err.array().square().colwise().mean().transpose();
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) row[static_cast<std::size_t>(j)] = m(i, j);
    rows.push_back(row);
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  Matrix m(j.at("rows").get<Eigen::Index>(), j.at("cols").get<Eigen::Index>());
  const auto& rows = j.at("data");
  if (static_cast<Eigen::Index>(rows.size()) != m.rows()) throw ParseError("matrix row count mismatch");
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const auto row = rows.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != m.cols()) throw ParseError("matrix column count mismatch");
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = row[static_cast<std::size_t>(k)];
  }
  return m;
}

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

nlohmann::json tree_to_json(const RegressionTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                     {"value", n.value}});
  }
  return nodes;
}

RegressionTree tree_from_json(const nlohmann::json& j) {
  RegressionTree tree;
  for (const auto& n : j) {
    tree.nodes.push_back({n.at("feature").get<int>(), n.at("threshold").get<double>(), n.at("left").get<int>(),
                          n.at("right").get<int>(), n.at("value").get<double>()});
  }
  const int size = static_cast<int>(tree.nodes.size());
  if (size == 0) throw ParseError("empty tree");
  for (const auto& n : tree.nodes) {
    if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= size || n.right >= size)) {
      throw ParseError("tree node has out-of-range children");
    }
  }
  return tree;
}

}  // namespace

nlohmann::json AggregatorModel::to_json() const {
  nlohmann::json params_json = std::visit(
      [](const auto& p) -> nlohmann::json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MeanParams>) {
          return nlohmann::json::object();
        } else if constexpr (std::is_same_v<T, LinearParams>) {
          // weights: row-major, one row per feature.
          return {{"weights", matrix_to_json(p.weights)}, {"intercepts", vector_to_json(p.intercepts)}};
        } else if constexpr (std::is_same_v<T, TreeEnsemble>) {
          nlohmann::json aspects = nlohmann::json::array();
          for (const auto& trees : p.per_aspect) {
            nlohmann::json list = nlohmann::json::array();
            for (const auto& t : trees) list.push_back(tree_to_json(t));
            aspects.push_back(list);
          }
          return {{"trees", aspects}};
        } else {
          nlohmann::json layers = nlohmann::json::array();
          for (std::size_t l = 0; l < p.weights.size(); ++l) {
            layers.push_back({{"weights", matrix_to_json(p.weights[l])}, {"biases", vector_to_json(p.biases[l])}});
          }
          return {{"layers", layers}};
        }
      },
      params);
  return {{"kind", hdeval::to_string(kind)},
          {"feature_ids", feature_ids},
          {"aspect_names", aspect_names},
          {"seed", seed},
          {"hyper", hdeval::to_json(hyper)},
          {"train_mse", vector_to_json(train_mse)},
          {"parameters", params_json}};
}

AggregatorModel AggregatorModel::from_json(const nlohmann::json& j) {
  try {
    AggregatorModel m;
    m.kind = aggregator_kind_from_string(j.at("kind").get<std::string>());
    m.feature_ids = j.at("feature_ids").get<std::vector<std::string>>();
    m.aspect_names = j.at("aspect_names").get<std::vector<std::string>>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.hyper = hyper_params_from_json(j.at("hyper"));
    m.train_mse = vector_from_json(j.at("train_mse"));
    const auto& p = j.at("parameters");
    const auto n_features = static_cast<Eigen::Index>(m.feature_ids.size());
    const auto n_aspects = static_cast<Eigen::Index>(m.aspect_names.size());
    switch (m.kind) {
      case AggregatorKind::mean_baseline:
        m.params = MeanParams{};
        break;
      case AggregatorKind::linear: {
        LinearParams lp{matrix_from_json(p.at("weights")), vector_from_json(p.at("intercepts"))};
        if (lp.weights.rows() != n_features || lp.weights.cols() != n_aspects || lp.intercepts.size() != n_aspects) {
          throw ParseError("linear parameters do not match feature/aspect counts");
        }
        m.params = std::move(lp);
        break;
      }
      case AggregatorKind::tree:
      case AggregatorKind::forest: {
        TreeEnsemble ens;
        for (const auto& trees : p.at("trees")) {
          std::vector<RegressionTree> list;
          for (const auto& t : trees) list.push_back(tree_from_json(t));
          if (list.empty()) throw ParseError("aspect with no trees");
          for (const auto& t : list) {
            for (const auto& node : t.nodes) {
              if (node.feature >= n_features) throw ParseError("tree splits on an unknown feature");
            }
          }
          ens.per_aspect.push_back(std::move(list));
        }
        if (static_cast<Eigen::Index>(ens.per_aspect.size()) != n_aspects) {
          throw ParseError("tree ensemble does not cover every aspect");
        }
        m.params = std::move(ens);
        break;
      }
      case AggregatorKind::mlp: {
        MlpParams mp;
        for (const auto& layer : p.at("layers")) {
          mp.weights.push_back(matrix_from_json(layer.at("weights")));
          mp.biases.push_back(vector_from_json(layer.at("biases")));
        }
        if (mp.weights.empty() || mp.weights.front().cols() != n_features || mp.weights.back().rows() != n_aspects) {
          throw ParseError("mlp layers do not match feature/aspect counts");
        }
        m.params = std::move(mp);
        break;
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("aggregator model json: ") + e.what());
  }
}

}  // namespace hdeval
