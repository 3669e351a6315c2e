#pragma once

// Independent reference computations for the tests. Plain loops over nested
// vectors; nothing here calls into the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat soft_assign(const Mat& Z, const Mat& mu, double dof = 1.0) {
  Mat Q(Z.size(), std::vector<double>(mu.size()));
  for (std::size_t i = 0; i < Z.size(); ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < mu.size(); ++k) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < Z[i].size(); ++j) d2 += (Z[i][j] - mu[k][j]) * (Z[i][j] - mu[k][j]);
      Q[i][k] = std::pow(1.0 + d2 / dof, -(dof + 1.0) / 2.0);
      total += Q[i][k];
    }
    for (auto& q : Q[i]) q /= total;
  }
  return Q;
}

inline Mat target(const Mat& Q) {
  const std::size_t K = Q[0].size();
  std::vector<double> f(K, 0.0);
  for (const auto& row : Q)
    for (std::size_t k = 0; k < K; ++k) f[k] += row[k];
  Mat P = Q;
  for (auto& row : P) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += (row[k] = row[k] * row[k] / f[k]);
    for (auto& v : row) v /= s;
  }
  return P;
}

inline double kl(const Mat& P, const Mat& Q) {
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i)
    for (std::size_t k = 0; k < P[i].size(); ++k)
      if (P[i][k] > 0) s += P[i][k] * std::log(P[i][k] / std::max(Q[i][k], 1e-12));
  return s;
}

inline double encoder_loss(const Mat& Qm, const Mat& Pm, const Mat& Qf, const Mat& Pf, double alpha) {
  return kl(Pm, Qm) + alpha * kl(Pf, Qf);
}

inline double generator_loss(const std::vector<double>& D, const Mat& fake, const Mat& real, double mu,
                             bool nonsaturating = true) {
  double adv = 0.0, sim = 0.0;
  for (double d : D) adv -= nonsaturating ? std::log(d) : std::log(1.0 - d);
  for (std::size_t i = 0; i < fake.size(); ++i)
    for (std::size_t j = 0; j < fake[i].size(); ++j) sim += (fake[i][j] - real[i][j]) * (fake[i][j] - real[i][j]);
  const double b = static_cast<double>(fake.size());
  return adv / b + mu * sim / b;
}

inline double discriminator_loss(const std::vector<double>& real, const std::vector<double>& fake) {
  double r = 0.0, f = 0.0;
  for (double d : real) r += std::log(d);
  for (double d : fake) f += std::log(1.0 - d);
  return -(r / static_cast<double>(real.size()) + f / static_cast<double>(fake.size()));
}

/// Exhaustive ACC: every injective map from predicted labels to true labels
/// (extra predicted labels map to nothing).
inline double brute_force_acc(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& truth) {
  std::vector<std::int64_t> P(pred), T(truth);
  std::sort(P.begin(), P.end());
  P.erase(std::unique(P.begin(), P.end()), P.end());
  std::sort(T.begin(), T.end());
  T.erase(std::unique(T.begin(), T.end()), T.end());
  // Targets padded with "unmatched" slots so every predicted label can map.
  std::vector<std::int64_t> slots(T);
  const std::int64_t none = std::numeric_limits<std::int64_t>::min();
  while (slots.size() < P.size()) slots.push_back(none);
  std::sort(slots.begin(), slots.end());
  std::size_t best = 0;
  do {
    std::map<std::int64_t, std::int64_t> map;
    for (std::size_t i = 0; i < P.size(); ++i) map[P[i]] = slots[i];
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += map[pred[i]] == truth[i];
    best = std::max(best, hits);
  } while (std::next_permutation(slots.begin(), slots.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

/// MI / sqrt(H1 H2) straight from counts.
inline double direct_nmi(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  const double n = static_cast<double>(a.size());
  std::map<std::int64_t, double> ca, cb;
  std::map<std::pair<std::int64_t, std::int64_t>, double> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ca[a[i]] += 1;
    cb[b[i]] += 1;
    cab[{a[i], b[i]}] += 1;
  }
  double ha = 0, hb = 0, mi = 0;
  for (auto& [k, c] : ca) ha -= c / n * std::log(c / n);
  for (auto& [k, c] : cb) hb -= c / n * std::log(c / n);
  for (auto& [k, c] : cab) mi += c / n * std::log((c / n) / ((ca[k.first] / n) * (cb[k.second] / n)));
  if (ha == 0 && hb == 0) return 1.0;
  if (ha == 0 || hb == 0) return 0.0;
  return mi / std::sqrt(ha * hb);
}

/// Relative error used by the gradient checks.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)});
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  static std::mt19937_64 rng(std::random_device{}());
  auto dir = std::filesystem::temp_directory_path() / ("cigit_" + tag + "_" + std::to_string(rng()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
