#pragma once

#include "cigit/dataio.hpp"
#include "cigit/trainer.hpp"

namespace fixture {

/// Narrow networks and few iterations; enough to exercise every phase quickly.
inline cigit::TrainConfig tiny_config(std::uint64_t seed = 1, int iters = 5) {
  cigit::TrainConfig c;
  c.d_sub = 8;
  c.enc_hidden = {12};
  c.gen_hidden = {12};
  c.disc_trunk = 8;
  c.disc_head = 8;
  c.mb_kernels = 4;
  c.mb_kernel_dim = 3;
  c.d_gauss = 4;
  c.batch_size = 32;
  c.max_iters = iters;
  c.restarts = 3;
  c.seed = seed;
  return c;
}

/// Three well-separated blobs, 20 image and 10 text features.
inline cigit::IncompleteDataset blobs(std::size_t n = 120, std::uint64_t seed = 7) {
  return cigit::synth_paired_blobs(3, n, 20, 10, 0.1, seed);
}

inline cigit::IncompleteDataset masked_blobs(double p, std::size_t n = 120, std::uint64_t seed = 7) {
  const auto ds = blobs(n, seed);
  return cigit::apply_mask(ds, cigit::make_missing_mask(n, p, 0.5, seed + 100));
}

}  // namespace fixture
