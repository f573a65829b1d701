#pragma once

#include "hdeval/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace hdeval {

// Thrown when a coefficient has no value (a constant input vector).
class UndefinedCorrelation : public Error {
 public:
  using Error::Error;
};

namespace detail {

template <typename DerivedA, typename DerivedB>
void check_pair(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b) {
  if (a.size() != b.size()) throw DimensionError("correlation inputs differ in length");
  if (a.size() < 2) throw ValidationError("correlation needs at least two observations");
}

}  // namespace detail

// Sample Pearson correlation, two-pass (centred) for stability. Result is
// clamped into [-1, 1] to absorb rounding.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar pearson(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  detail::check_pair(a, b);
  if (a.minCoeff() == a.maxCoeff() || b.minCoeff() == b.maxCoeff()) {
    throw UndefinedCorrelation("pearson undefined for a constant vector");
  }
  const auto ca = (a.derived().array() - a.derived().mean()).eval();
  const auto cb = (b.derived().array().template cast<Scalar>() - Scalar(b.derived().mean())).eval();
  const Scalar saa = (ca * ca).sum();
  const Scalar sbb = (cb * cb).sum();
  if (saa == Scalar(0) || sbb == Scalar(0)) throw UndefinedCorrelation("pearson undefined for a constant vector");
  const Scalar r = (ca * cb).sum() / std::sqrt(saa * sbb);
  return std::clamp(r, Scalar(-1), Scalar(1));
}

// 1-based fractional ranks; tied values share the mean of their rank span.
template <typename Derived>
VectorX<double> average_ranks(const Eigen::DenseBase<Derived>& v) {
  const auto n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return v(i) < v(j); });
  VectorX<double> ranks(n);
  for (Eigen::Index start = 0; start < n;) {
    Eigen::Index end = start + 1;
    while (end < n && v(order[static_cast<std::size_t>(end)]) == v(order[static_cast<std::size_t>(start)])) ++end;
    const double mean_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (Eigen::Index k = start; k < end; ++k) ranks(order[static_cast<std::size_t>(k)]) = mean_rank;
    start = end;
  }
  return ranks;
}

// Spearman's rho: Pearson on average ranks.
template <typename DerivedA, typename DerivedB>
double spearman(const Eigen::DenseBase<DerivedA>& a, const Eigen::DenseBase<DerivedB>& b) {
  detail::check_pair(a, b);
  return pearson(average_ranks(a), average_ranks(b));
}

}  // namespace hdeval
