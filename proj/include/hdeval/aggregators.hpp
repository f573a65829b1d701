#pragma once

#include "hdeval/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace hdeval {

enum class AggregatorKind { mean_baseline, linear, tree, forest, mlp };

std::string to_string(AggregatorKind kind);
// Accepts both the long names and the CLI short forms (mean, lr, dt, rf, nn).
AggregatorKind aggregator_kind_from_string(std::string_view s);

struct HyperParams {
  double ridge_lambda = 1e-6;
  int tree_max_depth = 6;
  int tree_min_samples_leaf = 5;
  int forest_trees = 100;
  int forest_max_features = 0;  // 0: ceil(sqrt(n_features))
  std::vector<int> mlp_hidden = {64};
  double mlp_learning_rate = 1e-3;
  int mlp_epochs = 500;
  int mlp_batch_size = 32;
};

nlohmann::json to_json(const HyperParams& h);
HyperParams hyper_params_from_json(const nlohmann::json& j);

// Rows are samples. X holds criterion scores, Y human aspect labels.
struct TrainingSet {
  Matrix x;
  Matrix y;
  std::vector<std::string> feature_ids;
  std::vector<std::string> aspect_names;

  void validate() const;
};

// Keeps only the listed feature columns, in the given order.
TrainingSet select_features(const TrainingSet& data, const std::vector<std::string>& feature_ids);
// Keeps only the listed aspect columns, in the given order.
TrainingSet select_aspects(const TrainingSet& data, const std::vector<std::string>& aspects);

struct LinearParams {
  Matrix weights;  // features x aspects
  Vector intercepts;
};

struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  template <typename Derived>
  double predict(const Eigen::MatrixBase<Derived>& x) const {
    int i = 0;
    while (nodes[i].feature >= 0) {
      i = x(nodes[i].feature) <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    }
    return nodes[i].value;
  }
};

// One list of trees per aspect; a single tree per aspect for the `tree` kind.
struct TreeEnsemble {
  std::vector<std::vector<RegressionTree>> per_aspect;
};

// Dense layers; weights[l] is out x in. ReLU on hidden layers, identity output.
struct MlpParams {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

struct MeanParams {};

using ModelParams = std::variant<MeanParams, LinearParams, TreeEnsemble, MlpParams>;

class AggregatorModel {
 public:
  AggregatorKind kind = AggregatorKind::mean_baseline;
  std::vector<std::string> feature_ids;
  std::vector<std::string> aspect_names;
  std::uint64_t seed = 0;
  HyperParams hyper;
  Vector train_mse;
  ModelParams params;

  // Unclamped prediction, one value per aspect.
  Vector predict(const Eigen::Ref<const Vector>& x) const;
  // Row-wise predict over a samples x features matrix.
  Matrix predict_batch(const Matrix& x) const;

  nlohmann::json to_json() const;
  static AggregatorModel from_json(const nlohmann::json& j);
};

AggregatorModel fit(AggregatorKind kind, const TrainingSet& data, const HyperParams& hyper, std::uint64_t seed);

// Per-aspect mean squared error of the model on `data`.
Vector evaluate_mse(const AggregatorModel& model, const TrainingSet& data);

// Exposed pieces of the individual learners, for tests and diagnostics.
namespace detail {

LinearParams fit_ridge(const Matrix& x, const Matrix& y, double lambda);
RegressionTree fit_cart(const Matrix& x, const Vector& y, const std::vector<Eigen::Index>& rows, int max_depth,
                        int min_samples_leaf, int max_features, std::uint64_t seed);

MlpParams mlp_init(Eigen::Index n_in, const std::vector<int>& hidden, Eigen::Index n_out, std::uint64_t seed);
Matrix mlp_forward(const MlpParams& p, const Matrix& x);
// Mean over all cells of the squared error.
double mlp_loss(const MlpParams& p, const Matrix& x, const Matrix& y);
// Gradient of mlp_loss with respect to every weight and bias.
MlpParams mlp_gradient(const MlpParams& p, const Matrix& x, const Matrix& y);
// Adam on mini-batches; `loss_log` (optional) receives the full-data loss
// before training and after every epoch.
MlpParams mlp_train(const Matrix& x, const Matrix& y, const HyperParams& hyper, std::uint64_t seed,
                    std::vector<double>* loss_log = nullptr);

}  // namespace detail

}  // namespace hdeval
