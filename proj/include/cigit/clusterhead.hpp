#pragma once

// Student-t soft assignment, sharpened target distribution, KL consistency
// losses with their gradients, k-means, and hard assignment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cigit/encoders.hpp"
#include "cigit/error.hpp"
#include "cigit/linalg.hpp"
#include "cigit/random.hpp"

namespace cigit {

/// Floor applied inside every logarithm.
inline constexpr double kLogFloor = 1e-12;

struct Centroids {
  Matrix mu;  // K x d
  Modality modality = Modality::fus;
  double dof = 1.0;

  Index K() const noexcept { return mu.rows(); }
};

/// Squared Euclidean distances between every row of Z and every centroid.
inline Matrix squared_distances(const Matrix& Z, const Matrix& mu) {
  Matrix d(Z.rows(), mu.rows());
  for (Index i = 0; i < Z.rows(); ++i)
    for (Index k = 0; k < mu.rows(); ++k) d(i, k) = (Z.row(i) - mu.row(k)).squaredNorm();
  return d;
}

/// q_nk proportional to (1 + |z_n - mu_k|^2 / dof)^(-(dof+1)/2).
inline Matrix soft_assign(const Matrix& Z, const Centroids& c) {
  if (c.K() < 2) throw InvalidArgument("soft assignment needs at least two centroids");
  if (Z.cols() != c.mu.cols())
    throw InvalidArgument("representation width " + std::to_string(Z.cols()) +
                          " does not match centroid width " + std::to_string(c.mu.cols()));
  detail::require(c.dof > 0.0, "degrees of freedom must be positive");
  const double expo = -(c.dof + 1.0) / 2.0;
  Matrix logu = squared_distances(Z, c.mu).unaryExpr(
      [&](double d2) { return expo * std::log1p(d2 / c.dof); });
  Matrix Q(Z.rows(), c.K());
  for (Index i = 0; i < Z.rows(); ++i) {
    const double mx = logu.row(i).maxCoeff();
    Q.row(i) = (logu.row(i).array() - mx).exp().matrix();
    Q.row(i) /= Q.row(i).sum();
  }
  return Q;
}

/// p_nk = (q_nk^2 / f_k) / sum_k' (q_nk'^2 / f_k'), with f_k = sum_n q_nk.
/// Throws DegenerateCluster when some f_k is zero.
inline Matrix target_distribution(const Matrix& Q) {
  const RowVector f = Q.colwise().sum();
  for (Index k = 0; k < f.size(); ++k)
    if (!(f[k] > 0.0)) throw DegenerateCluster(static_cast<std::size_t>(k));
  Matrix P = Q.array().square().rowwise() / f.array();
  for (Index i = 0; i < P.rows(); ++i) {
    const double s = P.row(i).sum();
    if (!(s > 0.0) || !std::isfinite(s)) {
      Index k = 0;
      Q.row(i).maxCoeff(&k);
      throw DegenerateCluster(static_cast<std::size_t>(k));
    }
    P.row(i) /= s;
  }
  return P;
}

/// KL(P || Q) summed over all rows and clusters.
inline double kl_divergence(const Matrix& P, const Matrix& Q) {
  if (P.rows() != Q.rows() || P.cols() != Q.cols())
    throw InvalidArgument("KL divergence needs equally shaped matrices");
  double kl = 0.0;
  for (Index i = 0; i < P.size(); ++i) {
    const double p = P.data()[i];
    if (p <= 0.0) continue;
    kl += p * (std::log(std::max(p, kLogFloor)) - std::log(std::max(Q.data()[i], kLogFloor)));
  }
  return kl;
}

/// KL(P_m || Q_m) + alpha * KL(P_fus || Q_fus).
inline double encoder_loss(const Matrix& Q_m, const Matrix& P_m, const Matrix& Q_fus,
                           const Matrix& P_fus, double alpha) {
  detail::require(alpha >= 0.0, "alpha must be non-negative");
  const double own = kl_divergence(P_m, Q_m);
  if (alpha == 0.0) return own;
  return own + alpha * kl_divergence(P_fus, Q_fus);
}

struct KlGradient {
  Matrix dZ;   // n x d
  Matrix dMu;  // K x d
};

/// Gradient of KL(P || soft_assign(Z, c)) w.r.t. Z and the centroids, with P
/// held constant.
inline KlGradient kl_gradient(const Matrix& Z, const Centroids& c, const Matrix& P) {
  const Matrix Q = soft_assign(Z, c);
  if (P.rows() != Z.rows() || P.cols() != c.K())
    throw InvalidArgument("target distribution shape does not match the soft assignment");
  const double dof = c.dof;
  const double scale = (dof + 1.0) / dof;
  const Matrix D = squared_distances(Z, c.mu);
  KlGradient g{Matrix::Zero(Z.rows(), Z.cols()), Matrix::Zero(c.K(), Z.cols())};
  for (Index i = 0; i < Z.rows(); ++i) {
    for (Index k = 0; k < c.K(); ++k) {
      const double w = scale * (P(i, k) - Q(i, k)) / (1.0 + D(i, k) / dof);
      const RowVector diff = Z.row(i) - c.mu.row(k);
      g.dZ.row(i) += w * diff;
      g.dMu.row(k) -= w * diff;
    }
  }
  return g;
}

/// Row-wise argmax; ties go to the lowest index.
inline Labels hard_assign(const Matrix& Q) {
  Labels out(static_cast<std::size_t>(Q.rows()));
  for (Index i = 0; i < Q.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < Q.cols(); ++k)
      if (Q(i, k) > Q(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means

struct KMeansResult {
  Matrix centroids;
  Labels labels;
  double wcss = 0.0;
};

inline constexpr int kLloydMaxIters = 300;

/// Lloyd iterations from the given centroids. Empty clusters are re-seeded at
/// the point farthest from its current centroid.
inline KMeansResult lloyd(const Matrix& Z, Matrix centroids, int max_iters = kLloydMaxIters) {
  const Index n = Z.rows(), K = centroids.rows();
  detail::require(n >= K && K >= 1, "k-means needs at least K points");
  detail::require(Z.cols() == centroids.cols(), "centroid width does not match data");
  Labels labels(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));

  auto assign = [&] {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      // Ties keep the current label, so a reseeded point stays put.
      const auto u = static_cast<std::size_t>(i);
      Index best = labels[u] >= 0 ? labels[u] : 0;
      double bd = labels[u] >= 0 ? (Z.row(i) - centroids.row(best)).squaredNorm()
                                 : std::numeric_limits<double>::infinity();
      for (Index k = 0; k < K; ++k) {
        const double d = (Z.row(i) - centroids.row(k)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      dist[u] = bd;
      if (labels[u] != best) {
        labels[u] = best;
        changed = true;
      }
    }
    return changed;
  };

  assign();
  for (int it = 0; it < max_iters; ++it) {
    Matrix sums = Matrix::Zero(K, Z.cols());
    std::vector<Index> counts(static_cast<std::size_t>(K), 0);
    for (Index i = 0; i < n; ++i) {
      const auto k = labels[static_cast<std::size_t>(i)];
      sums.row(k) += Z.row(i);
      ++counts[static_cast<std::size_t>(k)];
    }
    for (Index k = 0; k < K; ++k) {
      if (counts[static_cast<std::size_t>(k)] > 0) {
        centroids.row(k) = sums.row(k) / static_cast<double>(counts[static_cast<std::size_t>(k)]);
        continue;
      }
      // Farthest point among clusters that can spare one.
      Index far = -1;
      double fd = -1.0;
      for (Index i = 0; i < n; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (counts[static_cast<std::size_t>(labels[u])] > 1 && dist[u] > fd) {
          fd = dist[u];
          far = i;
        }
      }
      if (far < 0) continue;
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(far)])];
      labels[static_cast<std::size_t>(far)] = k;
      dist[static_cast<std::size_t>(far)] = 0.0;
      counts[static_cast<std::size_t>(k)] = 1;
      centroids.row(k) = Z.row(far);
    }
    if (!assign()) break;
  }

  KMeansResult r{std::move(centroids), std::move(labels), 0.0};
  for (Index i = 0; i < n; ++i)
    r.wcss += (Z.row(i) - r.centroids.row(r.labels[static_cast<std::size_t>(i)])).squaredNorm();
  return r;
}

/// k-means++ seeding.
inline Matrix kmeanspp_seed(const Matrix& Z, Index K, Rng& rng) {
  const Index n = Z.rows();
  Matrix c(K, Z.cols());
  std::vector<bool> taken(static_cast<std::size_t>(n), false);
  std::uniform_int_distribution<Index> first(0, n - 1);
  Index pick = first(rng);
  c.row(0) = Z.row(pick);
  taken[static_cast<std::size_t>(pick)] = true;
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (Z.row(i) - c.row(0)).squaredNorm();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (Index k = 1; k < K; ++k) {
    double total = 0.0;
    for (double v : d2) total += v;
    pick = -1;
    if (total > 0.0) {
      double r = u(rng) * total;
      for (Index i = 0; i < n; ++i) {
        r -= d2[static_cast<std::size_t>(i)];
        if (r <= 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          pick = i;
          break;
        }
      }
      if (pick < 0)  // rounding left r slightly positive
        for (Index i = n; i-- > 0;)
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            pick = i;
            break;
          }
    } else {
      for (Index i = 0; i < n && pick < 0; ++i)
        if (!taken[static_cast<std::size_t>(i)]) pick = i;
    }
    c.row(k) = Z.row(pick);
    taken[static_cast<std::size_t>(pick)] = true;
    for (Index i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], (Z.row(i) - c.row(k)).squaredNorm());
  }
  return c;
}

/// Best of `restarts` k-means++ / Lloyd runs by within-cluster sum of squares.
/// Restart r draws from its own sub-seed, so the result does not depend on
/// the order restarts are evaluated in.
inline KMeansResult kmeans(const Matrix& Z, Index K, int restarts, std::uint64_t seed) {
  detail::require(K >= 1, "K must be positive");
  detail::require(Z.rows() >= K, "k-means needs at least K points");
  detail::require(restarts >= 1, "k-means needs at least one restart");
  KMeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();
  for (int r = 0; r < restarts; ++r) {
    Rng rng = make_rng(seed, "kmeans", static_cast<std::uint64_t>(r));
    KMeansResult run = lloyd(Z, kmeanspp_seed(Z, K, rng));
    if (run.wcss < best.wcss) best = std::move(run);
  }
  return best;
}

}  // namespace cigit
