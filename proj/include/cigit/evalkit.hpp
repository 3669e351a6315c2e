#pragma once

// Evaluation protocol: single-modality and imputation baselines plus the
// ablation runner. Metrics live in metrics.hpp.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "cigit/clusterhead.hpp"
#include "cigit/dataio.hpp"
#include "cigit/error.hpp"
#include "cigit/metrics.hpp"
#include "cigit/random.hpp"
#include "cigit/trainer.hpp"

namespace cigit {

struct SingleModalityScores {
  std::optional<MetricPair> img;
  std::optional<MetricPair> txt;
};

/// k-means on each modality's present rows, scored on those rows only.
/// A modality with fewer than K present rows is skipped.
inline SingleModalityScores single_modality_scores(const IncompleteDataset& ds, Index K, int restarts,
                                                   std::uint64_t seed, std::ostream* warn = &std::cerr) {
  ds.validate();
  if (!ds.labels) throw InvalidArgument("single-modality baseline needs ground-truth labels");
  SingleModalityScores out;
  auto run = [&](const Matrix& X, const std::vector<Index>& rows, const char* name) -> std::optional<MetricPair> {
    if (static_cast<Index>(rows.size()) < K) {
      if (warn) *warn << "warning: skipping " << name << " modality: " << rows.size() << " present rows < K\n";
      return std::nullopt;
    }
    const auto km = kmeans(gather_rows(X, rows), K, restarts, derive_seed(seed, name));
    Labels truth;
    truth.reserve(rows.size());
    for (auto r : rows) truth.push_back((*ds.labels)[static_cast<std::size_t>(r)]);
    return score(km.labels, truth);
  };
  out.img = run(ds.img, ds.mask.rows_with_img(), "bestsm.img");
  out.txt = run(ds.txt, ds.mask.rows_with_txt(), "bestsm.txt");
  return out;
}

/// BestSM: the better (by ACC) of the two single-modality results.
inline MetricPair best_single_modality(const IncompleteDataset& ds, Index K, int restarts,
                                       std::uint64_t seed, std::ostream* warn = &std::cerr) {
  const auto s = single_modality_scores(ds, K, restarts, seed, warn);
  if (!s.img && !s.txt) throw InvalidArgument("no modality has at least K present rows");
  if (!s.txt) return *s.img;
  if (!s.img) return *s.txt;
  return s.img->acc >= s.txt->acc ? *s.img : *s.txt;
}

enum class ImputeStrategy { zero, mean };

inline ImputeStrategy parse_impute_strategy(const std::string& s) {
  if (s == "zero") return ImputeStrategy::zero;
  if (s == "mean") return ImputeStrategy::mean;
  throw InvalidArgument("unknown imputation strategy '" + s + "'");
}

/// Concatenated [img | txt] table with absent blocks filled by zeros or by the
/// column means of the present rows.
inline Matrix impute(const IncompleteDataset& ds, ImputeStrategy strategy) {
  ds.validate();
  const auto n = static_cast<Index>(ds.n());
  Matrix out(n, ds.d_img() + ds.d_txt());
  out.leftCols(ds.d_img()) = ds.img;
  out.rightCols(ds.d_txt()) = ds.txt;
  auto fill = [&](const Matrix& X, Index offset, bool (PresenceMask::*has)(std::size_t) const) {
    RowVector value = RowVector::Zero(X.cols());
    if (strategy == ImputeStrategy::mean) {
      Index count = 0;
      for (Index i = 0; i < n; ++i)
        if ((ds.mask.*has)(static_cast<std::size_t>(i))) {
          value += X.row(i);
          ++count;
        }
      if (count > 0) value /= static_cast<double>(count);
    }
    for (Index i = 0; i < n; ++i)
      if (!(ds.mask.*has)(static_cast<std::size_t>(i))) out.block(i, offset, 1, X.cols()) = value;
  };
  fill(ds.img, 0, &PresenceMask::has_img);
  fill(ds.txt, ds.d_img(), &PresenceMask::has_txt);
  return out;
}

/// Imputation baseline: fill, concatenate, k-means, score every instance.
inline MetricPair impute_baseline(const IncompleteDataset& ds, ImputeStrategy strategy, Index K,
                                  int restarts, std::uint64_t seed) {
  if (!ds.labels) throw InvalidArgument("imputation baseline needs ground-truth labels");
  const auto km = kmeans(impute(ds, strategy), K, restarts, derive_seed(seed, "impute"));
  return score(km.labels, *ds.labels);
}

/// Trains the requested variant on `ds` and scores its inferred clustering.
inline MetricPair ablation_run(const IncompleteDataset& ds, const TrainConfig& cfg, Variant variant) {
  if (!ds.labels) throw InvalidArgument("ablation runs need ground-truth labels");
  const TrainedModel model = train(ds, apply_variant(cfg, variant));
  const auto r = infer(model, ds);
  return {*r.acc, *r.nmi};
}

}  // namespace cigit
