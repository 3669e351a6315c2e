#pragma once

#include <array>
#include <string>
#include <vector>

#include "cigit/dataio.hpp"
#include "cigit/error.hpp"
#include "cigit/linalg.hpp"
#include "cigit/nn.hpp"

namespace cigit {

enum class Modality : int { img = 0, txt = 1, fus = 2 };

/// Encoder layer plan: input -> hidden... -> d_sub, LeakyReLU everywhere, no BN.
inline MLPSpec encoder_spec(Index input_dim, const std::vector<Index>& hidden, Index d_sub,
                            double slope = 0.01) {
  MLPSpec spec;
  spec.layer_dims.push_back(input_dim);
  spec.layer_dims.insert(spec.layer_dims.end(), hidden.begin(), hidden.end());
  spec.layer_dims.push_back(d_sub);
  spec.slope = slope;
  spec.validate();
  return spec;
}

/// Maps feature rows into the subspace. Pure; sentinel rows are encoded like
/// any other row and it is up to the caller to ignore them.
inline Matrix encode(const NetParams& params, const Matrix& X) { return forward(params, X, Mode::eval); }

/// Gradients of sum(dZ .* encode(params, X)) w.r.t. params (accumulated) and X (returned).
inline Matrix encode_backward(const NetParams& params, const Matrix& X, const Matrix& dZ,
                              NetGrads& grads) {
  MLPCache cache;
  forward(params, X, Mode::eval, &cache);
  return backward(params, cache, dZ, grads);
}

/// (1 - beta) * z_img + beta * z_txt.
inline RowVector fuse(const RowVector& z_img, const RowVector& z_txt, double beta) {
  if (z_img.size() != z_txt.size())
    throw InvalidArgument("cannot fuse rows of width " + std::to_string(z_img.size()) + " and " +
                          std::to_string(z_txt.size()));
  detail::require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  return (1.0 - beta) * z_img + beta * z_txt;
}

/// Subspace representations of every instance plus per-modality centroids.
struct SubspaceState {
  Matrix Z_img, Z_txt, Z_fus;
  Matrix fake_img;  // generated image-subspace rows (from text)
  Matrix fake_txt;  // generated text-subspace rows (from image)
  std::array<Matrix, 3> centroids;  // indexed by Modality

  const Matrix& centroid(Modality m) const { return centroids[static_cast<int>(m)]; }
  Matrix& centroid(Modality m) { return centroids[static_cast<int>(m)]; }
};

/// Per-row weights of the real representations inside the fused one, i.e.
/// dZ_fus/dZ_img and dZ_fus/dZ_txt for each instance.
struct FusionWeights {
  Vector img;
  Vector txt;
};

inline FusionWeights fusion_weights(const PresenceMask& mask, double beta) {
  const auto n = static_cast<Index>(mask.size());
  FusionWeights w{Vector::Zero(n), Vector::Zero(n)};
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    if (mask.has_img(k)) w.img[i] = 1.0 - beta;
    if (mask.has_txt(k)) w.txt[i] = beta;
  }
  return w;
}

/// Fusion with generated representations.
///
/// Complete rows: (1-b) z_img + b z_txt + eta_img fake_img + eta_txt fake_txt.
/// Text absent:   (1-b) z_img + b fake_txt.
/// Image absent:  (1-b) fake_img + b z_txt.
/// The real representation of an absent modality is never read.
inline Matrix fuse_with_fakes(const SubspaceState& s, const PresenceMask& mask, double beta,
                              double eta_img, double eta_txt) {
  const auto n = static_cast<Index>(mask.size());
  detail::require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
  detail::require(eta_img >= 0.0 && eta_txt >= 0.0, "eta weights must be non-negative");
  const Index d = s.Z_img.cols();
  for (const Matrix* m : {&s.Z_img, &s.Z_txt, &s.fake_img, &s.fake_txt})
    detail::require(m->rows() == n && m->cols() == d, "subspace matrices must be n x d_sub");

  Matrix out(n, d);
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const bool img = mask.has_img(k), txt = mask.has_txt(k);
    if (img && txt) {
      out.row(i) = (1.0 - beta) * s.Z_img.row(i) + beta * s.Z_txt.row(i);
      if (eta_img != 0.0) out.row(i) += eta_img * s.fake_img.row(i);
      if (eta_txt != 0.0) out.row(i) += eta_txt * s.fake_txt.row(i);
    } else if (img) {
      out.row(i) = (1.0 - beta) * s.Z_img.row(i) + beta * s.fake_txt.row(i);
    } else if (txt) {
      out.row(i) = (1.0 - beta) * s.fake_img.row(i) + beta * s.Z_txt.row(i);
    } else {
      throw InvalidArgument("instance " + std::to_string(i) + " has no modality");
    }
  }
  return out;
}

}  // namespace cigit
