#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cigit/clusterhead.hpp"
#include "cigit/dataio.hpp"
#include "cigit/metrics.hpp"
#include "oracles.hpp"

using namespace cigit;

namespace {

Matrix from(const oracle::Mat& m) {
  Matrix out(static_cast<Index>(m.size()), static_cast<Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = m[i][j];
  return out;
}

oracle::Mat to(const Matrix& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return out;
}

Matrix random_matrix(Index r, Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

Matrix random_stochastic(Index r, Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  for (Index i = 0; i < r; ++i) m.row(i) /= m.row(i).sum();
  return m;
}

}  // namespace

TEST(SoftAssign, TwoCentroidExample) {
  const Matrix Q = soft_assign(Matrix::Zero(1, 2), {(Matrix(2, 2) << 0, 0, 1, 0).finished()});
  EXPECT_NEAR(Q(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(Q(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(SoftAssign, EquidistantIsUniform) {
  Matrix mu(4, 2);
  mu << 1, 0, -1, 0, 0, 1, 0, -1;
  const Matrix Q = soft_assign(Matrix::Zero(1, 2), {mu});
  for (Index k = 0; k < 4; ++k) EXPECT_NEAR(Q(0, k), 0.25, 1e-15);
}

TEST(SoftAssign, TranslationInvariant) {
  std::mt19937_64 rng(1);
  const Matrix Z = random_matrix(5, 3, rng), mu = random_matrix(3, 3, rng);
  const RowVector t = random_matrix(1, 3, rng, 10.0);
  const Matrix a = soft_assign(Z, {mu});
  const Matrix b = soft_assign(Z.rowwise() + t, {mu.rowwise() + t});
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SoftAssign, MatchesScalarOracle) {
  std::mt19937_64 rng(2);
  for (double dof : {1.0, 1.0, 1.0, 0.5, 3.0}) {
    const Matrix Z = random_matrix(6, 4, rng), mu = random_matrix(3, 4, rng);
    const Matrix Q = soft_assign(Z, {mu, Modality::fus, dof});
    EXPECT_LT((Q - from(oracle::soft_assign(to(Z), to(mu), dof))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SoftAssign, FarPointsStayFinite) {
  Matrix mu(2, 1);
  mu << 0, 1;
  const Matrix Q = soft_assign(Matrix::Constant(1, 1, 1e150), {mu});
  EXPECT_TRUE(Q.allFinite());
  EXPECT_NEAR(Q.row(0).sum(), 1.0, 1e-12);
}

TEST(SoftAssign, Errors) {
  EXPECT_THROW(soft_assign(Matrix::Zero(1, 2), {Matrix::Zero(1, 2)}), InvalidArgument);
  EXPECT_THROW(soft_assign(Matrix::Zero(1, 3), {Matrix::Zero(2, 2)}), InvalidArgument);
  EXPECT_THROW(soft_assign(Matrix::Zero(1, 2), {Matrix::Zero(2, 2), Modality::img, 0.0}), InvalidArgument);
}

TEST(TargetDistribution, HandExample) {
  const Matrix Q = (Matrix(2, 2) << 0.9, 0.1, 0.5, 0.5).finished();
  const Matrix P = target_distribution(Q);
  // Row 1: (0.81/1.4, 0.01/0.6), normalized.
  const double a = 0.81 / 1.4, b = 0.01 / 0.6;
  EXPECT_NEAR(P(0, 0), a / (a + b), 1e-15);
  EXPECT_NEAR(P(0, 0), 0.972, 5e-4);
  EXPECT_NEAR(P(0, 1), 0.028, 5e-4);
  EXPECT_NEAR(P(1, 0), 0.3, 1e-15);
  EXPECT_NEAR(P(1, 1), 0.7, 1e-15);
}

TEST(TargetDistribution, SingleRowIsAFixedPoint) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 1000; ++t) {
    const Matrix Q = random_stochastic(1, 4, rng);
    EXPECT_LT((target_distribution(Q) - Q).cwiseAbs().maxCoeff(), 1e-12);
  }
  const Matrix Q = (Matrix(1, 2) << 0.8, 0.2).finished();
  EXPECT_LT((target_distribution(Q) - Q).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TargetDistribution, OneHotRowsAreFixed) {
  const Matrix Q = (Matrix(3, 3) << 1, 0, 0, 0, 0, 1, 0, 1, 0).finished();
  EXPECT_EQ(target_distribution(Q), Q);
}

TEST(TargetDistribution, SharpensSymmetricBatches) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    // Rows [a, 1-a] and [1-a, a] give uniform cluster frequencies.
    const double a = std::uniform_real_distribution<double>(0.51, 0.99)(rng);
    const Matrix Q = (Matrix(2, 2) << a, 1 - a, 1 - a, a).finished();
    const Matrix P = target_distribution(Q);
    EXPECT_GE(P(0, 0), Q(0, 0));
    EXPECT_GE(P(1, 1), Q(1, 1));
  }
}

TEST(TargetDistribution, MatchesOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 5; ++t) {
    const Matrix Q = random_stochastic(7, 3, rng);
    EXPECT_LT((target_distribution(Q) - from(oracle::target(to(Q)))).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(TargetDistribution, EmptyClusterIsDegenerate) {
  const Matrix Q = (Matrix(2, 3) << 0.5, 0.5, 0.0, 0.2, 0.8, 0.0).finished();
  try {
    target_distribution(Q);
    FAIL();
  } catch (const DegenerateCluster& e) {
    EXPECT_EQ(e.cluster(), 2u);
  }
}

TEST(Simplex, RowsSumToOneOverRandomDraws) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<Index> K(2, 6), n(1, 8), d(1, 5);
  for (int t = 0; t < 1000; ++t) {
    const Index k = K(rng), dd = d(rng);
    const Matrix Q = soft_assign(random_matrix(n(rng), dd, rng, 3.0), {random_matrix(k, dd, rng, 3.0)});
    const Matrix P = target_distribution(Q);
    for (Index i = 0; i < Q.rows(); ++i) {
      ASSERT_NEAR(Q.row(i).sum(), 1.0, 1e-6);
      ASSERT_NEAR(P.row(i).sum(), 1.0, 1e-6);
    }
    ASSERT_GE(Q.minCoeff(), 0.0);
    ASSERT_GE(P.minCoeff(), 0.0);
  }
}

TEST(KlDivergence, NonNegativeAndZeroOnlyAtEquality) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 1000; ++t) {
    const Matrix P = random_stochastic(3, 4, rng), Q = random_stochastic(3, 4, rng);
    EXPECT_GT(kl_divergence(P, Q), 0.0);
    EXPECT_NEAR(kl_divergence(P, P), 0.0, 1e-9);
  }
}

TEST(KlDivergence, ZeroQIsFloored) {
  const Matrix P = (Matrix(1, 2) << 1.0, 0.0).finished();
  const Matrix Q = (Matrix(1, 2) << 0.0, 1.0).finished();
  EXPECT_NEAR(kl_divergence(P, Q), -std::log(1e-12), 1e-9);
  EXPECT_THROW(kl_divergence(P, Matrix::Ones(2, 2)), InvalidArgument);
}

TEST(EncoderLoss, HandExamples) {
  const Matrix P = (Matrix(1, 2) << 1.0, 0.0).finished();
  const Matrix Q = (Matrix(1, 2) << 0.5, 0.5).finished();
  EXPECT_NEAR(encoder_loss(Q, P, Q, P, 0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(encoder_loss(Q, Q, Q, Q, 1.0), 0.0, 1e-15);
  EXPECT_NEAR(encoder_loss(Q, P, Q, P, 0.5), 1.5 * std::log(2.0), 1e-15);
  // alpha = 0 ignores the fused pair.
  const Matrix junk = (Matrix(1, 2) << 0.9, 0.1).finished();
  EXPECT_EQ(encoder_loss(Q, P, Q, P, 0.0), encoder_loss(Q, P, junk, P, 0.0));
  EXPECT_THROW(encoder_loss(Q, P, Q, P, -1.0), InvalidArgument);
}

TEST(EncoderLoss, MatchesOracle) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const Matrix Qm = random_stochastic(5, 3, rng), Pm = random_stochastic(5, 3, rng);
    const Matrix Qf = random_stochastic(5, 3, rng), Pf = random_stochastic(5, 3, rng);
    const double alpha = 0.25 * t;
    EXPECT_NEAR(encoder_loss(Qm, Pm, Qf, Pf, alpha), oracle::encoder_loss(to(Qm), to(Pm), to(Qf), to(Pf), alpha), 1e-12);
  }
}

TEST(EncoderLoss, GradientWithRespectToRepresentations) {
  // L(Z_img) = KL(P_img || Q(Z_img)) + alpha KL(P_fus || Q((1-beta) Z_img + beta Z_txt)),
  // targets fixed.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    std::mt19937_64 rng(seed);
    const Index n = 4, d = 3, K = 3;
    const double alpha = 0.7, beta = 0.4;
    Matrix Zi = random_matrix(n, d, rng);
    const Matrix Zt = random_matrix(n, d, rng);
    const Centroids ci{random_matrix(K, d, rng), Modality::img};
    const Centroids cf{random_matrix(K, d, rng), Modality::fus};
    const Matrix Pi = random_stochastic(n, K, rng), Pf = random_stochastic(n, K, rng);
    auto loss = [&](const Matrix& z) {
      const Matrix zf = (1 - beta) * z + beta * Zt;
      return encoder_loss(soft_assign(z, ci), Pi, soft_assign(zf, cf), Pf, alpha);
    };
    const Matrix Zf = (1 - beta) * Zi + beta * Zt;
    const Matrix grad = kl_gradient(Zi, ci, Pi).dZ + alpha * (1 - beta) * kl_gradient(Zf, cf, Pf).dZ;
    const double h = 1e-5;
    for (Index i = 0; i < Zi.size(); ++i) {
      const double keep = Zi.data()[i];
      Zi.data()[i] = keep + h;
      const double up = loss(Zi);
      Zi.data()[i] = keep - h;
      const double down = loss(Zi);
      Zi.data()[i] = keep;
      ASSERT_LT(oracle::rel_err(grad.data()[i], (up - down) / (2 * h)), 1e-4) << "seed " << seed;
    }
  }
}

TEST(KlGradient, CentroidGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Matrix Z = random_matrix(5, 3, rng);
    Centroids c{random_matrix(3, 3, rng)};
    const Matrix P = random_stochastic(5, 3, rng);
    const Matrix g = kl_gradient(Z, c, P).dMu;
    const double h = 1e-5;
    for (Index i = 0; i < c.mu.size(); ++i) {
      const double keep = c.mu.data()[i];
      c.mu.data()[i] = keep + h;
      const double up = kl_divergence(P, soft_assign(Z, c));
      c.mu.data()[i] = keep - h;
      const double down = kl_divergence(P, soft_assign(Z, c));
      c.mu.data()[i] = keep;
      ASSERT_LT(oracle::rel_err(g.data()[i], (up - down) / (2 * h)), 1e-4);
    }
  }
}

TEST(HardAssign, ArgmaxAndTies) {
  const Matrix Q = (Matrix(2, 3) << 0.1, 0.7, 0.2, 0.5, 0.5, 0.0).finished();
  EXPECT_EQ(hard_assign(Q), (Labels{1, 0}));
}

TEST(HardAssign, ColumnPermutationPermutesLabels) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 100; ++t) {
    const Matrix Q = random_stochastic(10, 4, rng);
    std::vector<Index> perm(4);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix Qp(10, 4);
    for (Index k = 0; k < 4; ++k) Qp.col(k) = Q.col(perm[static_cast<std::size_t>(k)]);
    const auto a = hard_assign(Q), b = hard_assign(Qp);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(perm[static_cast<std::size_t>(b[i])], a[i]);
  }
}

TEST(HardAssign, InvariantToMonotoneRowRescaling) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 100; ++t) {
    const Matrix Q = random_stochastic(6, 3, rng);
    const Matrix R = Q.unaryExpr([](double v) { return std::exp(3.0 * v) + 2.0; });
    EXPECT_EQ(hard_assign(Q), hard_assign(R));
  }
}

TEST(KMeans, TwoSeparatedPairs) {
  Matrix Z(4, 2);
  Z << 0, 0, 0, 1, 10, 10, 10, 11;
  const auto km = kmeans(Z, 2, 5, 1);
  EXPECT_NEAR(km.wcss, 1.0, 1e-12);  // 2 pairs x 2 points x 0.25
  Matrix c = km.centroids;
  if (c(0, 0) > c(1, 0)) c.row(0).swap(c.row(1));
  EXPECT_NEAR(c(0, 1), 0.5, 1e-12);
  EXPECT_NEAR(c(1, 1), 10.5, 1e-12);
}

TEST(KMeans, KEqualsN) {
  std::mt19937_64 rng(11);
  const Matrix Z = random_matrix(6, 3, rng);
  const auto km = kmeans(Z, 6, 3, 1);
  EXPECT_NEAR(km.wcss, 0.0, 1e-24);
}

TEST(KMeans, RecoversBlobs) {
  const auto ds = synth_paired_blobs(3, 300, 8, 6, 0.1, 21);
  const auto km = kmeans(ds.img, 3, 20, 2);
  EXPECT_GE(clustering_accuracy(km.labels, *ds.labels), 0.95);
}

TEST(KMeans, DeterministicAndValidated) {
  std::mt19937_64 rng(12);
  const Matrix Z = random_matrix(40, 3, rng);
  const auto a = kmeans(Z, 4, 5, 9), b = kmeans(Z, 4, 5, 9);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.centroids, b.centroids);
  EXPECT_THROW(kmeans(Z, 41, 5, 9), InvalidArgument);
  EXPECT_THROW(kmeans(Z, 4, 0, 9), InvalidArgument);
}

TEST(KMeans, DuplicatePointsDoNotLeaveEmptyClusters) {
  Matrix Z = Matrix::Zero(10, 2);
  Z.row(9) << 5, 5;
  const auto km = lloyd(Z, (Matrix(3, 2) << 100, 100, 0, 0, 5, 5).finished());
  std::vector<int> counts(3, 0);
  for (auto l : km.labels) ++counts[static_cast<std::size_t>(l)];
  for (int c : counts) EXPECT_GT(c, 0);
}
