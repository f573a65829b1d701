#pragma once

// Slow, loop-based reference implementations used to check the library.

#include "hdeval/aggregators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace hdeval::oracle {

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  long double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<long double>(n);
  mb /= static_cast<long double>(n);
  long double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  return static_cast<double>(sab / std::sqrt(saa * sbb));
}

// Average ranks by counting: 1 + #smaller + (#equal - 1) / 2.
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double smaller = 0, equal = 0;
    for (double w : v) {
      if (w < v[i]) smaller += 1;
      if (w == v[i]) equal += 1;
    }
    r[i] = 1.0 + smaller + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(ranks(a), ranks(b));
}

inline double mse(const AggregatorModel& model, const Matrix& x, const Matrix& y, Eigen::Index aspect) {
  long double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    const double d = model.predict(xi)(aspect) - y(i, aspect);
    s += static_cast<long double>(d) * d;
  }
  return static_cast<double>(s / static_cast<long double>(x.rows()));
}

// Expected permutation importance over every ordering of each column
// (features x aspects). Only feasible for a handful of rows.
inline Matrix exhaustive_permutation_importance(const AggregatorModel& model, const Matrix& x, const Matrix& y) {
  Matrix out = Matrix::Zero(x.cols(), y.cols());
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index a = 0; a < y.cols(); ++a) {
      const double base = mse(model, x, y, a);
      std::iota(perm.begin(), perm.end(), Eigen::Index{0});
      long double total = 0;
      long count = 0;
      do {
        Matrix xs = x;
        for (Eigen::Index i = 0; i < x.rows(); ++i) xs(i, j) = x(perm[static_cast<std::size_t>(i)], j);
        total += mse(model, xs, y, a) - base;
        ++count;
      } while (std::next_permutation(perm.begin(), perm.end()));
      out(j, a) = static_cast<double>(total / count);
    }
  }
  return out;
}

// Exact Shapley values by enumerating every coalition; absent features take
// their background value. Returns features x aspects.
inline Matrix exact_shapley(const AggregatorModel& model, const Vector& x, const Vector& background) {
  const auto d = static_cast<int>(x.size());
  const auto p = static_cast<Eigen::Index>(model.aspect_names.size());
  auto value = [&](unsigned mask) {
    Vector z = background;
    for (int f = 0; f < d; ++f) {
      if (mask & (1u << f)) z(f) = x(f);
    }
    return Vector(model.predict(z));
  };
  auto fact = [](int k) {
    double r = 1;
    for (int i = 2; i <= k; ++i) r *= i;
    return r;
  };
  Matrix phi = Matrix::Zero(d, p);
  for (int f = 0; f < d; ++f) {
    for (unsigned mask = 0; mask < (1u << d); ++mask) {
      if (mask & (1u << f)) continue;
      const int s = __builtin_popcount(mask);
      const double w = fact(s) * fact(d - s - 1) / fact(d);
      phi.row(f) += w * (value(mask | (1u << f)) - value(mask)).transpose();
    }
  }
  return phi;
}

// Pairwise sign agreement inside each group; a group counts only when every
// pair agrees.
inline double ranking_accuracy(const std::vector<std::string>& groups, const std::vector<double>& pred,
                               const std::vector<double>& label) {
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  auto sign = [](double v) { return (v > 0) - (v < 0); };
  int valid = 0, correct = 0;
  for (const auto& [g, idx] : members) {
    if (idx.size() < 2) continue;
    ++valid;
    bool ok = true;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        if (sign(pred[idx[a]] - pred[idx[b]]) != sign(label[idx[a]] - label[idx[b]])) ok = false;
      }
    }
    correct += ok;
  }
  return static_cast<double>(correct) / valid;
}

// Largest relative error between the analytic MLP gradient and central
// differences of the loss. Errors are measured against max(|a|, |n|, floor).
inline double mlp_gradient_error(MlpParams p, const Matrix& x, const Matrix& y, double h = 1e-6,
                                 double floor = 1e-6) {
  const MlpParams g = detail::mlp_gradient(p, x, y);
  double worst = 0;
  auto check = [&](double analytic, double& param) {
    const double saved = param;
    param = saved + h;
    const double up = detail::mlp_loss(p, x, y);
    param = saved - h;
    const double down = detail::mlp_loss(p, x, y);
    param = saved;
    const double numeric = (up - down) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
    worst = std::max(worst, rel);
  };
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) check(g.weights[l](i), p.weights[l](i));
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) check(g.biases[l](i), p.biases[l](i));
  }
  return worst;
}

}  // namespace hdeval::oracle
