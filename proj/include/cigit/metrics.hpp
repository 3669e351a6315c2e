#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cigit/assignment.hpp"
#include "cigit/error.hpp"
#include "cigit/linalg.hpp"

namespace cigit {

struct MetricPair {
  double acc = 0.0;
  double nmi = 0.0;
};

namespace detail {

/// Dense contingency table of two labelings after compacting each label set
/// to 0..k-1 (in increasing label order).
struct Contingency {
  Matrix counts;  // pred x truth
  std::size_t n = 0;
};

template <class L>
std::vector<Index> compact(std::span<const L> labels, Index& k) {
  std::map<L, Index> ids;
  for (const auto& l : labels) ids.emplace(l, 0);
  k = 0;
  for (auto& [label, id] : ids) id = k++;
  std::vector<Index> out;
  out.reserve(labels.size());
  for (const auto& l : labels) out.push_back(ids[l]);
  return out;
}

template <class L>
Contingency contingency(std::span<const L> pred, std::span<const L> truth) {
  if (pred.size() != truth.size())
    throw InvalidArgument("label vectors differ in length (" + std::to_string(pred.size()) +
                          " vs " + std::to_string(truth.size()) + ")");
  Index kp = 0, kt = 0;
  const auto p = compact(pred, kp);
  const auto t = compact(truth, kt);
  Contingency c{Matrix::Zero(kp, kt), pred.size()};
  for (std::size_t i = 0; i < p.size(); ++i) c.counts(p[i], t[i]) += 1.0;
  return c;
}

}  // namespace detail

/// Fraction of agreements under the best one-to-one cluster-to-class mapping
/// (Hungarian matching). Surplus predicted clusters match nothing.
template <class L>
double clustering_accuracy(std::span<const L> pred, std::span<const L> truth) {
  const auto c = detail::contingency(pred, truth);
  if (c.n == 0) return 0.0;
  const auto match = max_weight_matching(c.counts);
  double hits = 0.0;
  for (Index r = 0; r < c.counts.rows(); ++r)
    if (match[static_cast<std::size_t>(r)] >= 0) hits += c.counts(r, match[static_cast<std::size_t>(r)]);
  return hits / static_cast<double>(c.n);
}

inline double clustering_accuracy(const Labels& pred, const Labels& truth) {
  return clustering_accuracy(std::span<const std::int64_t>(pred), std::span<const std::int64_t>(truth));
}

/// Mutual information normalized by sqrt(H(pred) H(truth)). Two single-cluster
/// partitions count as identical (1); otherwise a zero entropy gives 0.
template <class L>
double nmi(std::span<const L> pred, std::span<const L> truth) {
  const auto c = detail::contingency(pred, truth);
  if (c.n == 0) return 0.0;
  const double n = static_cast<double>(c.n);
  const Vector rows = c.counts.rowwise().sum();
  const RowVector cols = c.counts.colwise().sum();
  auto entropy = [n](const auto& v) {
    double h = 0.0;
    for (Index i = 0; i < v.size(); ++i)
      if (v[i] > 0) h -= (v[i] / n) * std::log(v[i] / n);
    return h;
  };
  const double hp = entropy(rows), ht = entropy(cols);
  if (hp <= 0.0 || ht <= 0.0) return (hp <= 0.0 && ht <= 0.0) ? 1.0 : 0.0;
  double mi = 0.0;
  for (Index i = 0; i < c.counts.rows(); ++i)
    for (Index j = 0; j < c.counts.cols(); ++j) {
      const double nij = c.counts(i, j);
      if (nij > 0) mi += (nij / n) * std::log(nij * n / (rows[i] * cols[j]));
    }
  return std::clamp(mi / std::sqrt(hp * ht), 0.0, 1.0);
}

inline double nmi(const Labels& pred, const Labels& truth) {
  return nmi(std::span<const std::int64_t>(pred), std::span<const std::int64_t>(truth));
}

inline MetricPair score(const Labels& pred, const Labels& truth) {
  return {clustering_accuracy(pred, truth), nmi(pred, truth)};
}

}  // namespace cigit
