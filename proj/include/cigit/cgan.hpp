#pragma once

// Subspace conditional clustering GAN: generators that synthesize one
// modality's subspace rows from the other's, and discriminators conditioned on
// soft cluster assignments with a minibatch-discrimination block.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cigit/clusterhead.hpp"
#include "cigit/error.hpp"
#include "cigit/linalg.hpp"
#include "cigit/nn.hpp"
#include "cigit/random.hpp"

namespace cigit {

/// Generator prior: Gaussian block followed by a one-hot cluster block.
struct NoiseSpec {
  Index d_gauss = 32;
  Index K = 2;

  Index total() const noexcept { return d_gauss + K; }
};

/// Rows of [g ~ N(0, I) || onehot(label)].
inline Matrix sample_noise(Index batch, const NoiseSpec& spec, const Labels& cond_labels, Rng& rng) {
  detail::require(spec.d_gauss >= 1, "d_gauss must be at least 1");
  detail::require(static_cast<Index>(cond_labels.size()) == batch,
                  "one conditioning label per noise row is required");
  Matrix z = Matrix::Zero(batch, spec.total());
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Index i = 0; i < batch; ++i) {
    const auto label = cond_labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= spec.K)
      throw InvalidArgument("conditioning label " + std::to_string(label) + " outside [0, " +
                            std::to_string(spec.K) + ")");
    for (Index j = 0; j < spec.d_gauss; ++j) z(i, j) = gauss(rng);
    z(i, spec.d_gauss + label) = 1.0;
  }
  return z;
}

/// Noise rows with the Gaussian block at its mean. Used wherever generation
/// must be a deterministic function of the conditioning row.
inline Matrix mean_noise(const NoiseSpec& spec, const Labels& cond_labels) {
  Matrix z = Matrix::Zero(static_cast<Index>(cond_labels.size()), spec.total());
  for (std::size_t i = 0; i < cond_labels.size(); ++i) {
    const auto label = cond_labels[i];
    if (label < 0 || label >= spec.K) throw InvalidArgument("conditioning label out of range");
    z(static_cast<Index>(i), spec.d_gauss + label) = 1.0;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Minibatch discrimination

/// Learned projection for minibatch discrimination: `kernel` maps a d-wide
/// row to B kernels of C dims each.
struct MinibatchKernel {
  Matrix kernel;  // d x (B*C)
  Index B = 0;
  Index C = 0;
};

struct MinibatchCache {
  Matrix M;    // b x (B*C)
  Matrix sim;  // (b*b) x B: exp(-|M_i - M_j|_1) per kernel, row i*b+j
};

/// Appends sum_j exp(-|M_i,k - M_j,k|_1) for each kernel k to every row.
/// The sum includes j = i, so a single-row batch gets the constant 1.
inline Matrix minibatch_features(const Matrix& X, const MinibatchKernel& mk,
                                 MinibatchCache* cache = nullptr) {
  if (mk.B == 0) return X;
  detail::require(mk.kernel.rows() == X.cols() && mk.kernel.cols() == mk.B * mk.C,
                  "minibatch kernel shape does not match input");
  const Index b = X.rows(), B = mk.B, C = mk.C, W = B * C;
  Matrix M = X * mk.kernel;
  Matrix sim(b * b, B);
  Matrix out(b, X.cols() + B);
  out.leftCols(X.cols()) = X;
  out.rightCols(B).setConstant(1.0);  // self term
  const double* m = M.data();
  for (Index i = 0; i < b; ++i) {
    sim.row(i * b + i).setOnes();
    for (Index j = i + 1; j < b; ++j) {
      const double* mi = m + i * W;
      const double* mj = m + j * W;
      for (Index k = 0; k < B; ++k) {
        double l1 = 0.0;
        for (Index c = 0; c < C; ++c) l1 += std::abs(mi[k * C + c] - mj[k * C + c]);
        const double e = std::exp(-l1);
        sim(i * b + j, k) = e;
        sim(j * b + i, k) = e;
        out(i, X.cols() + k) += e;
        out(j, X.cols() + k) += e;
      }
    }
  }
  if (cache) {
    cache->M = std::move(M);
    cache->sim = std::move(sim);
  }
  return out;
}

/// Backward of minibatch_features. Accumulates dL/dkernel; returns dL/dX.
inline Matrix minibatch_backward(const Matrix& X, const MinibatchKernel& mk,
                                 const MinibatchCache& cache, const Matrix& dOut, Matrix& dKernel) {
  if (mk.B == 0) return dOut;
  const Index d = X.cols(), b = X.rows(), B = mk.B, C = mk.C, W = B * C;
  const Matrix g = dOut.rightCols(B);
  Matrix dM = Matrix::Zero(b, W);
  const double* m = cache.M.data();
  double* dm = dM.data();
  for (Index i = 0; i < b; ++i) {
    for (Index j = i + 1; j < b; ++j) {
      for (Index k = 0; k < B; ++k) {
        // s_ij enters both o_ik and o_jk.
        const double w = (g(i, k) + g(j, k)) * cache.sim(i * b + j, k);
        for (Index c = 0; c < C; ++c) {
          const Index col = k * C + c;
          const double diff = m[i * W + col] - m[j * W + col];
          const double step = diff > 0.0 ? w : (diff < 0.0 ? -w : 0.0);
          dm[i * W + col] -= step;
          dm[j * W + col] += step;
        }
      }
    }
  }
  dKernel += X.transpose() * dM;
  Matrix dX = dOut.leftCols(d);
  dX += dM * mk.kernel.transpose();
  return dX;
}

// ---------------------------------------------------------------------------
// Discriminator: [rep || q] -> Dense+LeakyReLU -> minibatch block ->
// Dense+LeakyReLU -> Dense -> sigmoid.

struct DiscriminatorParams {
  NetParams trunk;  // [d_sub + K, h1]
  MinibatchKernel minibatch;
  NetParams head;  // [h1 + B, h2, 1], linear output

  Index input_dim() const { return trunk.spec.input_dim(); }
  bool all_finite() const {
    return trunk.all_finite() && head.all_finite() && minibatch.kernel.allFinite();
  }
};

struct DiscriminatorShape {
  Index d_sub = 128;
  Index K = 2;
  Index trunk_width = 128;
  Index head_width = 128;
  Index kernels = 32;     // B
  Index kernel_dim = 16;  // C
  double slope = 0.01;
};

inline DiscriminatorParams init_discriminator(const DiscriminatorShape& s, std::uint64_t seed) {
  DiscriminatorParams d;
  MLPSpec trunk{{s.d_sub + s.K, s.trunk_width}, s.slope, {}, true};
  MLPSpec head{{s.trunk_width + s.kernels, s.head_width, 1}, s.slope, {}, false};
  d.trunk = init_params(trunk, derive_seed(seed, "disc.trunk"));
  d.head = init_params(head, derive_seed(seed, "disc.head"));
  d.minibatch.B = s.kernels;
  d.minibatch.C = s.kernel_dim;
  d.minibatch.kernel.resize(s.trunk_width, s.kernels * s.kernel_dim);
  Rng rng = make_rng(seed, "disc.minibatch");
  std::normal_distribution<double> gauss(0.0, 0.1);
  for (Index i = 0; i < d.minibatch.kernel.size(); ++i) d.minibatch.kernel.data()[i] = gauss(rng);
  return d;
}

struct DiscriminatorCache {
  Matrix input;
  MLPCache trunk;
  Matrix h;
  MinibatchCache minibatch;
  MLPCache head;
  Vector prob;
};

struct DiscriminatorGrads {
  NetGrads trunk;
  Matrix dKernel;
  NetGrads head;

  static DiscriminatorGrads zeros_like(const DiscriminatorParams& d) {
    return {NetGrads::zeros_like(d.trunk),
            Matrix::Zero(d.minibatch.kernel.rows(), d.minibatch.kernel.cols()),
            NetGrads::zeros_like(d.head)};
  }
};

inline double sigmoid(double a) {
  return a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
}

/// Probabilities are kept strictly inside (0, 1).
inline constexpr double kProbClamp = 1e-12;

/// Discriminator forward on pre-concatenated [rep || q] rows.
inline Vector discriminator_forward(const DiscriminatorParams& d, const Matrix& input,
                                    DiscriminatorCache* cache = nullptr) {
  if (input.cols() != d.input_dim())
    throw InvalidArgument("discriminator expects width " + std::to_string(d.input_dim()) +
                          ", got " + std::to_string(input.cols()));
  MLPCache trunk_cache, head_cache;
  MinibatchCache mb_cache;
  Matrix h = forward(d.trunk, input, Mode::eval, cache ? &trunk_cache : nullptr);
  Matrix feats = minibatch_features(h, d.minibatch, cache ? &mb_cache : nullptr);
  Matrix logit = forward(d.head, feats, Mode::eval, cache ? &head_cache : nullptr);
  Vector prob(input.rows());
  for (Index i = 0; i < prob.size(); ++i)
    prob[i] = std::clamp(sigmoid(logit(i, 0)), kProbClamp, 1.0 - kProbClamp);
  if (cache) {
    cache->input = input;
    cache->trunk = std::move(trunk_cache);
    cache->h = std::move(h);
    cache->minibatch = std::move(mb_cache);
    cache->head = std::move(head_cache);
    cache->prob = prob;
  }
  return prob;
}

/// Backward from dL/dlogit. Accumulates parameter gradients; returns dL/dinput.
inline Matrix discriminator_backward(const DiscriminatorParams& d, const DiscriminatorCache& cache,
                                     const Vector& dlogit, DiscriminatorGrads& grads) {
  Matrix g = dlogit;
  Matrix dfeats = backward(d.head, cache.head, g, grads.head);
  Matrix dh = minibatch_backward(cache.h, d.minibatch, cache.minibatch, dfeats, grads.dKernel);
  return backward(d.trunk, cache.trunk, dh, grads.trunk);
}

inline std::vector<std::span<double>> parameter_views(DiscriminatorParams& d) {
  auto v = parameter_views(d.trunk);
  v.emplace_back(d.minibatch.kernel.data(), static_cast<std::size_t>(d.minibatch.kernel.size()));
  auto h = parameter_views(d.head);
  v.insert(v.end(), h.begin(), h.end());
  return v;
}

inline std::vector<std::span<double>> gradient_views(DiscriminatorGrads& g) {
  auto v = gradient_views(g.trunk);
  v.emplace_back(g.dKernel.data(), static_cast<std::size_t>(g.dKernel.size()));
  auto h = gradient_views(g.head);
  v.insert(v.end(), h.begin(), h.end());
  return v;
}

inline void round_to_float(DiscriminatorParams& d) {
  round_to_float(d.trunk);
  round_to_float(d.head);
  round_to_float(d.minibatch.kernel);
}

// ---------------------------------------------------------------------------
// Generator/discriminator pair

enum class Direction { img_to_txt, txt_to_img };

inline const char* to_string(Direction d) {
  return d == Direction::img_to_txt ? "img_to_txt" : "txt_to_img";
}

struct GanPair {
  Direction direction = Direction::img_to_txt;
  NoiseSpec noise;
  NetParams gen;  // [noise + d_sub, hidden..., d_sub], BN on every layer
  DiscriminatorParams disc;

  Index d_sub() const { return gen.spec.output_dim(); }
};

inline MLPSpec generator_spec(const NoiseSpec& noise, Index d_sub, const std::vector<Index>& hidden,
                              double slope = 0.01) {
  MLPSpec spec;
  spec.layer_dims.push_back(noise.total() + d_sub);
  spec.layer_dims.insert(spec.layer_dims.end(), hidden.begin(), hidden.end());
  spec.layer_dims.push_back(d_sub);
  spec.slope = slope;
  spec.batchnorm.assign(spec.num_layers(), true);
  spec.validate();
  return spec;
}

inline Matrix generator_input(const Matrix& noise, const Matrix& cond_rep) {
  detail::require(noise.rows() == cond_rep.rows(), "noise and condition row counts differ");
  Matrix in(noise.rows(), noise.cols() + cond_rep.cols());
  in.leftCols(noise.cols()) = noise;
  in.rightCols(cond_rep.cols()) = cond_rep;
  return in;
}

/// Generator forward on [noise || cond_rep].
inline Matrix generate(const GanPair& pair, const Matrix& noise, const Matrix& cond_rep,
                       Mode mode = Mode::eval, MLPCache* cache = nullptr) {
  if (cond_rep.cols() != pair.d_sub())
    throw InvalidArgument("conditioning rows must have width d_sub = " + std::to_string(pair.d_sub()));
  if (noise.cols() != pair.noise.total())
    throw InvalidArgument("noise rows must have width " + std::to_string(pair.noise.total()));
  return forward(pair.gen, generator_input(noise, cond_rep), mode, cache);
}

inline Matrix discriminator_input(const Matrix& rep, const Matrix& q) {
  detail::require(rep.rows() == q.rows(), "representation and assignment row counts differ");
  Matrix in(rep.rows(), rep.cols() + q.cols());
  in.leftCols(rep.cols()) = rep;
  in.rightCols(q.cols()) = q;
  return in;
}

/// Probability that each [rep || q] row is real.
inline Vector discriminate(const GanPair& pair, const Matrix& rep, const Matrix& q) {
  for (Index i = 0; i < q.rows(); ++i)
    if (std::abs(q.row(i).sum() - 1.0) > 1e-6 || (q.row(i).array() < 0.0).any())
      throw InvalidArgument("conditioning assignment row " + std::to_string(i) +
                            " is not a probability vector");
  return discriminator_forward(pair.disc, discriminator_input(rep, q));
}

// ---------------------------------------------------------------------------
// Losses

enum class GeneratorLossForm { nonsaturating, as_printed };

/// Adversarial term plus mu * |fake - real|_F^2 / b.
///
/// nonsaturating: -mean log D(fake).  as_printed: -mean log(1 - D(fake)), taken
/// literally; it decreases as the discriminator rejects the fakes.
inline double generator_loss(const Vector& disc_out_fake, const Matrix& fake, const Matrix& real_target,
                             double mu, GeneratorLossForm form = GeneratorLossForm::nonsaturating) {
  detail::require(fake.rows() == real_target.rows() && fake.cols() == real_target.cols(),
                  "fake and real batches must have the same shape");
  detail::require(disc_out_fake.size() == fake.rows(), "one discriminator output per fake row");
  detail::require(mu >= 0.0, "mu must be non-negative");
  const double b = static_cast<double>(fake.rows());
  double adv = 0.0;
  for (Index i = 0; i < disc_out_fake.size(); ++i) {
    const double p = disc_out_fake[i];
    adv += form == GeneratorLossForm::nonsaturating ? -std::log(std::max(p, kLogFloor))
                                                    : -std::log(std::max(1.0 - p, kLogFloor));
  }
  adv /= b;
  if (mu == 0.0) return adv;
  return adv + mu * (fake - real_target).squaredNorm() / b;
}

struct GeneratorLossGrad {
  Vector dlogit;  // w.r.t. the discriminator logit of each fake row
  Matrix dfake;   // w.r.t. fake rows through the similarity term only
};

inline GeneratorLossGrad generator_loss_grad(const Vector& disc_out_fake, const Matrix& fake,
                                             const Matrix& real_target, double mu,
                                             GeneratorLossForm form = GeneratorLossForm::nonsaturating) {
  const double b = static_cast<double>(fake.rows());
  GeneratorLossGrad g;
  g.dlogit.resize(disc_out_fake.size());
  for (Index i = 0; i < disc_out_fake.size(); ++i) {
    const double p = disc_out_fake[i];
    // d(-log s(a))/da = s - 1 ; d(-log(1 - s(a)))/da = s
    g.dlogit[i] = (form == GeneratorLossForm::nonsaturating ? p - 1.0 : p) / b;
  }
  g.dfake = (2.0 * mu / b) * (fake - real_target);
  return g;
}

/// -[mean log D(real) + mean log(1 - D(fake))].
inline double discriminator_loss(const Vector& disc_real, const Vector& disc_fake) {
  detail::require(disc_real.size() > 0 && disc_fake.size() > 0, "empty discriminator batch");
  double r = 0.0, f = 0.0;
  for (Index i = 0; i < disc_real.size(); ++i) r += std::log(std::max(disc_real[i], kLogFloor));
  for (Index i = 0; i < disc_fake.size(); ++i) f += std::log(std::max(1.0 - disc_fake[i], kLogFloor));
  return -(r / static_cast<double>(disc_real.size()) + f / static_cast<double>(disc_fake.size()));
}

/// dL/dlogit for the real and fake batches of discriminator_loss.
inline std::pair<Vector, Vector> discriminator_loss_grad(const Vector& disc_real, const Vector& disc_fake) {
  Vector dr = (disc_real.array() - 1.0) / static_cast<double>(disc_real.size());
  Vector df = disc_fake.array() / static_cast<double>(disc_fake.size());
  return {dr, df};
}

}  // namespace cigit
