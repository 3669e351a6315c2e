#pragma once

// Alternating optimization: encoders -> generators -> discriminators ->
// fusion refresh and centroid recomputation, repeated for a fixed number of
// outer iterations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigit/assignment.hpp"
#include "cigit/cgan.hpp"
#include "cigit/clusterhead.hpp"
#include "cigit/dataio.hpp"
#include "cigit/encoders.hpp"
#include "cigit/error.hpp"
#include "cigit/linalg.hpp"
#include "cigit/metrics.hpp"
#include "cigit/nn.hpp"
#include "cigit/random.hpp"

namespace cigit {

enum class Variant { full, no_gan, no_kl };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_gan: return "no_gan";
    case Variant::no_kl: return "no_kl";
  }
  return "full";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "no_gan") return Variant::no_gan;
  if (s == "no_kl") return Variant::no_kl;
  throw InvalidArgument("unknown variant '" + s + "' (expected full, no_gan or no_kl)");
}

inline const char* to_string(GeneratorLossForm f) {
  return f == GeneratorLossForm::nonsaturating ? "nonsaturating" : "as_printed";
}

inline GeneratorLossForm parse_generator_loss_form(const std::string& s) {
  if (s == "nonsaturating") return GeneratorLossForm::nonsaturating;
  if (s == "as_printed") return GeneratorLossForm::as_printed;
  throw InvalidArgument("unknown generator loss form '" + s + "'");
}

struct TrainConfig {
  std::int64_t K = 0;  // 0: take it from the dataset
  Index d_sub = 128;
  double beta = 0.5;
  double alpha = 1.0;
  double eta_img = 0.1;
  double eta_txt = 0.1;
  double mu = 1.0;
  double delta = 1.0;
  double lr = 1e-3;
  double gan_lr = 3e-3;
  double momentum = 0.9;
  Index batch_size = 64;
  int max_iters = 200;
  int enc_steps = 1;
  int gen_steps = 1;
  int disc_steps = 1;
  int target_refresh_epochs = 1;
  Index d_gauss = 32;
  std::uint64_t seed = 0;
  GeneratorLossForm generator_loss_form = GeneratorLossForm::nonsaturating;
  int restarts = 20;
  bool freeze_fused_centroids_in_enc_step = false;
  double slope = 0.01;
  std::vector<Index> enc_hidden{128, 128};
  std::vector<Index> gen_hidden{128, 128};
  Index disc_trunk = 64;
  Index disc_head = 64;
  Index mb_kernels = 32;
  Index mb_kernel_dim = 16;
  Variant variant = Variant::full;

  void validate() const {
    detail::require(K == 0 || K >= 2, "K must be at least 2");
    detail::require(d_sub >= 1, "d_sub must be positive");
    detail::require(beta >= 0.0 && beta <= 1.0, "beta must lie in [0, 1]");
    detail::require(alpha >= 0.0 && eta_img >= 0.0 && eta_txt >= 0.0 && mu >= 0.0,
                    "alpha, eta and mu must be non-negative");
    detail::require(delta > 0.0, "delta must be positive");
    detail::require(lr > 0.0 && gan_lr > 0.0, "learning rates must be positive");
    detail::require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
    detail::require(batch_size >= 1, "batch size must be positive");
    detail::require(max_iters >= 1, "at least one outer iteration is required");
    detail::require(enc_steps >= 0 && gen_steps >= 0 && disc_steps >= 0, "step counts must be non-negative");
    detail::require(target_refresh_epochs >= 1, "target_refresh_epochs must be at least 1");
    detail::require(d_gauss >= 1, "d_gauss must be at least 1");
    detail::require(restarts >= 1, "restarts must be at least 1");
  }
};

/// The ablations, expressed as configuration changes.
inline TrainConfig apply_variant(TrainConfig cfg, Variant v) {
  cfg.variant = v;
  switch (v) {
    case Variant::full:
      break;
    case Variant::no_gan:
      cfg.eta_img = cfg.eta_txt = 0.0;
      cfg.gen_steps = cfg.disc_steps = 0;
      break;
    case Variant::no_kl:
      cfg.alpha = 0.0;
      cfg.enc_steps = 0;
      break;
  }
  return cfg;
}

inline nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["K"] = c.K;
  j["d_sub"] = c.d_sub;
  j["beta"] = c.beta;
  j["alpha"] = c.alpha;
  j["eta_img"] = c.eta_img;
  j["eta_txt"] = c.eta_txt;
  j["mu"] = c.mu;
  j["delta"] = c.delta;
  j["lr"] = c.lr;
  j["gan_lr"] = c.gan_lr;
  j["momentum"] = c.momentum;
  j["batch_size"] = c.batch_size;
  j["max_iters"] = c.max_iters;
  j["enc_steps"] = c.enc_steps;
  j["gen_steps"] = c.gen_steps;
  j["disc_steps"] = c.disc_steps;
  j["target_refresh_epochs"] = c.target_refresh_epochs;
  j["d_gauss"] = c.d_gauss;
  j["seed"] = c.seed;
  j["generator_loss_form"] = to_string(c.generator_loss_form);
  j["restarts"] = c.restarts;
  j["freeze_fused_centroids_in_enc_step"] = c.freeze_fused_centroids_in_enc_step;
  j["slope"] = c.slope;
  j["enc_hidden"] = c.enc_hidden;
  j["gen_hidden"] = c.gen_hidden;
  j["disc_trunk"] = c.disc_trunk;
  j["disc_head"] = c.disc_head;
  j["mb_kernels"] = c.mb_kernels;
  j["mb_kernel_dim"] = c.mb_kernel_dim;
  j["variant"] = to_string(c.variant);
  return j;
}

/// Overlays the keys present in `j` onto `base`. Unknown keys are rejected.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw InvalidArgument("configuration must be a JSON object");
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const auto& v = it.value();
      if (k == "K") base.K = v.get<std::int64_t>();
      else if (k == "d_sub") base.d_sub = v.get<Index>();
      else if (k == "beta") base.beta = v.get<double>();
      else if (k == "alpha") base.alpha = v.get<double>();
      else if (k == "eta_img") base.eta_img = v.get<double>();
      else if (k == "eta_txt") base.eta_txt = v.get<double>();
      else if (k == "mu") base.mu = v.get<double>();
      else if (k == "delta") base.delta = v.get<double>();
      else if (k == "lr") base.lr = v.get<double>();
      else if (k == "gan_lr") base.gan_lr = v.get<double>();
      else if (k == "momentum") base.momentum = v.get<double>();
      else if (k == "batch_size") base.batch_size = v.get<Index>();
      else if (k == "max_iters") base.max_iters = v.get<int>();
      else if (k == "enc_steps") base.enc_steps = v.get<int>();
      else if (k == "gen_steps") base.gen_steps = v.get<int>();
      else if (k == "disc_steps") base.disc_steps = v.get<int>();
      else if (k == "target_refresh_epochs") base.target_refresh_epochs = v.get<int>();
      else if (k == "d_gauss") base.d_gauss = v.get<Index>();
      else if (k == "seed") base.seed = v.get<std::uint64_t>();
      else if (k == "generator_loss_form") base.generator_loss_form = parse_generator_loss_form(v.get<std::string>());
      else if (k == "restarts") base.restarts = v.get<int>();
      else if (k == "freeze_fused_centroids_in_enc_step") base.freeze_fused_centroids_in_enc_step = v.get<bool>();
      else if (k == "slope") base.slope = v.get<double>();
      else if (k == "enc_hidden") base.enc_hidden = v.get<std::vector<Index>>();
      else if (k == "gen_hidden") base.gen_hidden = v.get<std::vector<Index>>();
      else if (k == "disc_trunk") base.disc_trunk = v.get<Index>();
      else if (k == "disc_head") base.disc_head = v.get<Index>();
      else if (k == "mb_kernels") base.mb_kernels = v.get<Index>();
      else if (k == "mb_kernel_dim") base.mb_kernel_dim = v.get<Index>();
      else if (k == "variant") base.variant = parse_variant(v.get<std::string>());
      else throw InvalidArgument("unknown configuration key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("configuration value has the wrong type: ") + e.what());
  }
  return base;
}

struct LossRecord {
  int iter;
  std::string phase;
  double loss;
};

struct TrainedModel {
  TrainConfig cfg;
  NetParams enc_img, enc_txt;
  GanPair g12;  // image -> text, discriminator D1
  GanPair g21;  // text -> image, discriminator D2
  SubspaceState state;
  std::vector<LossRecord> history;
  Labels final_labels;

  Index K() const { return state.centroid(Modality::fus).rows(); }

  std::vector<double> losses(const std::string& phase) const {
    std::vector<double> out;
    for (const auto& r : history)
      if (r.phase == phase) out.push_back(r.loss);
    return out;
  }
};

struct ClusteringResult {
  Labels labels;
  Matrix Q_fus;
  Matrix Z_fus;
  std::optional<double> acc;
  std::optional<double> nmi;
};

namespace detail {

inline std::int64_t resolve_K(const IncompleteDataset& ds, const TrainConfig& cfg) {
  const std::int64_t K = cfg.K != 0 ? cfg.K : ds.K.value_or(0);
  if (K < 2) throw InvalidArgument("cluster count K is unknown; set it in the configuration");
  if (ds.K && *ds.K != K) throw InvalidArgument("configured K differs from the dataset's K");
  return K;
}

/// Permutes the rows of `mu` so that clustering `Z` with it agrees as much as
/// possible with `reference` labels.
inline Matrix align_centroids(const Matrix& mu, const Matrix& Z, const Labels& reference) {
  const Index K = mu.rows();
  Matrix contingency = Matrix::Zero(K, K);  // reference x candidate
  const Labels own = hard_assign(-squared_distances(Z, mu));
  for (std::size_t i = 0; i < own.size(); ++i) contingency(reference[i], own[i]) += 1.0;
  const auto match = max_weight_matching(contingency);
  Matrix out(K, mu.cols());
  for (Index r = 0; r < K; ++r) out.row(r) = mu.row(match[static_cast<std::size_t>(r)]);
  return out;
}

inline Labels nearest_centroid(const Matrix& Z, const Matrix& mu) {
  return hard_assign(-squared_distances(Z, mu));
}

}  // namespace detail

/// Subspace representations, generated counterparts and their fusion for the
/// rows of `ds`. Generation uses the mean of the Gaussian prior so the result
/// is a deterministic, row-wise function of the data.
inline void refresh_state(const TrainedModel& model, const IncompleteDataset& ds, SubspaceState& s) {
  const auto& cfg = model.cfg;
  const auto n = static_cast<Index>(ds.n());
  const Index d = cfg.d_sub;
  const auto img_rows = ds.mask.rows_with_img();
  const auto txt_rows = ds.mask.rows_with_txt();

  s.Z_img = Matrix::Zero(n, d);
  s.Z_txt = Matrix::Zero(n, d);
  s.fake_img = Matrix::Zero(n, d);
  s.fake_txt = Matrix::Zero(n, d);
  if (!img_rows.empty()) {
    const Matrix z = encode(model.enc_img, gather_rows(ds.img, img_rows));
    const Labels cond = hard_assign(soft_assign(z, {s.centroid(Modality::img), Modality::img, cfg.delta}));
    scatter_rows(s.Z_img, z, img_rows);
    scatter_rows(s.fake_txt, generate(model.g12, mean_noise(model.g12.noise, cond), z), img_rows);
  }
  if (!txt_rows.empty()) {
    const Matrix z = encode(model.enc_txt, gather_rows(ds.txt, txt_rows));
    const Labels cond = hard_assign(soft_assign(z, {s.centroid(Modality::txt), Modality::txt, cfg.delta}));
    scatter_rows(s.Z_txt, z, txt_rows);
    scatter_rows(s.fake_img, generate(model.g21, mean_noise(model.g21.noise, cond), z), txt_rows);
  }
  s.Z_fus = fuse_with_fakes(s, ds.mask, cfg.beta, cfg.eta_img, cfg.eta_txt);
}

/// Untrained model: Xavier-initialized networks, centroids from k-means on
/// the encoded complete instances (aligned across modalities).
inline TrainedModel initialize(const IncompleteDataset& ds, const TrainConfig& cfg_in) {
  ds.validate();
  cfg_in.validate();
  TrainedModel model;
  model.cfg = cfg_in;
  auto& cfg = model.cfg;
  cfg.K = detail::resolve_K(ds, cfg);
  const Index K = cfg.K;

  const auto complete = ds.mask.complete_rows();
  if (static_cast<Index>(complete.size()) < K)
    throw InitializationError("only " + std::to_string(complete.size()) +
                              " complete instances for K = " + std::to_string(K));

  model.enc_img = init_params(encoder_spec(ds.d_img(), cfg.enc_hidden, cfg.d_sub, cfg.slope),
                              derive_seed(cfg.seed, "enc.img"));
  model.enc_txt = init_params(encoder_spec(ds.d_txt(), cfg.enc_hidden, cfg.d_sub, cfg.slope),
                              derive_seed(cfg.seed, "enc.txt"));
  const NoiseSpec noise{cfg.d_gauss, K};
  const DiscriminatorShape dshape{cfg.d_sub, K, cfg.disc_trunk, cfg.disc_head, cfg.mb_kernels,
                                  cfg.mb_kernel_dim, cfg.slope};
  const MLPSpec gspec = generator_spec(noise, cfg.d_sub, cfg.gen_hidden, cfg.slope);
  model.g12 = {Direction::img_to_txt, noise, init_params(gspec, derive_seed(cfg.seed, "gen.12")),
               init_discriminator(dshape, derive_seed(cfg.seed, "disc.1"))};
  model.g21 = {Direction::txt_to_img, noise, init_params(gspec, derive_seed(cfg.seed, "gen.21")),
               init_discriminator(dshape, derive_seed(cfg.seed, "disc.2"))};

  const Matrix zi = encode(model.enc_img, gather_rows(ds.img, complete));
  const Matrix zt = encode(model.enc_txt, gather_rows(ds.txt, complete));
  const Matrix zf = (1.0 - cfg.beta) * zi + cfg.beta * zt;
  if (!zi.allFinite() || !zt.allFinite()) throw InitializationError("non-finite initial encodings");

  const KMeansResult km_img = kmeans(zi, K, cfg.restarts, derive_seed(cfg.seed, "init.kmeans.img"));
  const KMeansResult km_txt = kmeans(zt, K, cfg.restarts, derive_seed(cfg.seed, "init.kmeans.txt"));
  const KMeansResult km_fus = kmeans(zf, K, cfg.restarts, derive_seed(cfg.seed, "init.kmeans.fus"));
  auto& s = model.state;
  s.centroid(Modality::fus) = km_fus.centroids;
  s.centroid(Modality::img) = detail::align_centroids(km_img.centroids, zi, km_fus.labels);
  s.centroid(Modality::txt) = detail::align_centroids(km_txt.centroids, zt, km_fus.labels);

  refresh_state(model, ds, s);
  return model;
}

namespace detail {

class Trainer {
 public:
  Trainer(const IncompleteDataset& ds, TrainedModel& model)
      : ds_(ds),
        m_(model),
        cfg_(model.cfg),
        rng_(make_rng(cfg_.seed, "train")),
        img_rows_(ds.mask.rows_with_img()),
        txt_rows_(ds.mask.rows_with_txt()),
        complete_(ds.mask.complete_rows()),
        all_rows_(ds.n()),
        weights_(fusion_weights(ds.mask, cfg_.beta)),
        opt_enc_img_(cfg_.lr, cfg_.momentum),
        opt_enc_txt_(cfg_.lr, cfg_.momentum),
        opt_mu_img_(cfg_.lr, cfg_.momentum),
        opt_mu_txt_(cfg_.lr, cfg_.momentum),
        opt_mu_fus_(cfg_.lr, cfg_.momentum),
        opt_g12_(cfg_.gan_lr, cfg_.momentum),
        opt_g21_(cfg_.gan_lr, cfg_.momentum),
        opt_d1_(cfg_.gan_lr, cfg_.momentum),
        opt_d2_(cfg_.gan_lr, cfg_.momentum) {}

  void run() {
    std::iota(all_rows_.begin(), all_rows_.end(), Index{0});
    for (int it = 0; it < cfg_.max_iters; ++it) {
      iter_ = it;
      const bool refresh = it % cfg_.target_refresh_epochs == 0;
      if (refresh) refresh_targets();
      for (int s = 0; s < cfg_.enc_steps; ++s) encoder_step();
      for (int s = 0; s < cfg_.gen_steps; ++s) {
        generator_step(m_.g12, "gen_12");
        generator_step(m_.g21, "gen_21");
      }
      for (int s = 0; s < cfg_.disc_steps; ++s) {
        discriminator_step(m_.g12, "disc_1");
        discriminator_step(m_.g21, "disc_2");
      }
      refresh_state(m_, ds_, m_.state);
      if ((it + 1) % cfg_.target_refresh_epochs == 0) recompute_centroids();
      check_finite();
    }
  }

 private:
  Centroids centroids(Modality m) const { return {m_.state.centroid(m), m, cfg_.delta}; }

  void refresh_targets() {
    const auto& s = m_.state;
    const auto n = static_cast<Index>(ds_.n());
    P_img_ = Matrix::Zero(n, m_.K());
    P_txt_ = Matrix::Zero(n, m_.K());
    try {
      if (!img_rows_.empty())
        scatter_rows(P_img_, target_distribution(soft_assign(gather_rows(s.Z_img, img_rows_), centroids(Modality::img))), img_rows_);
      if (!txt_rows_.empty())
        scatter_rows(P_txt_, target_distribution(soft_assign(gather_rows(s.Z_txt, txt_rows_), centroids(Modality::txt))), txt_rows_);
      P_fus_ = target_distribution(soft_assign(s.Z_fus, centroids(Modality::fus)));
    } catch (const DegenerateCluster& e) {
      throw CollapseAbort("target distribution", iter_, e.cluster());
    }
  }

  std::vector<Index> sample(const std::vector<Index>& pool, Index count) {
    std::vector<Index> picked = pool;
    const auto take = static_cast<std::size_t>(std::min<Index>(count, static_cast<Index>(pool.size())));
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> u(i, picked.size() - 1);
      std::swap(picked[i], picked[u(rng_)]);
    }
    picked.resize(take);
    return picked;
  }

  void record(const char* phase, double loss) {
    if (!std::isfinite(loss)) throw NumericAbort(phase, iter_, loss);
    m_.history.push_back({iter_, phase, loss});
  }

  void encoder_step() {
    auto& s = m_.state;
    const auto batch = sample(all_rows_, cfg_.batch_size);
    const auto b = static_cast<Index>(batch.size());
    const Index d = cfg_.d_sub;

    // Present rows per modality, as positions within the batch.
    std::vector<Index> bi, bt, ri, rt;
    for (Index j = 0; j < b; ++j) {
      const auto row = static_cast<std::size_t>(batch[static_cast<std::size_t>(j)]);
      if (ds_.mask.has_img(row)) { bi.push_back(j); ri.push_back(batch[static_cast<std::size_t>(j)]); }
      if (ds_.mask.has_txt(row)) { bt.push_back(j); rt.push_back(batch[static_cast<std::size_t>(j)]); }
    }
    const Matrix Xi = gather_rows(ds_.img, ri), Xt = gather_rows(ds_.txt, rt);
    const Matrix Zi = encode(m_.enc_img, Xi), Zt = encode(m_.enc_txt, Xt);

    // Fused rows: live real terms plus detached generated terms.
    Matrix Zf = Matrix::Zero(b, d);
    for (Index j = 0; j < b; ++j) {
      const Index row = batch[static_cast<std::size_t>(j)];
      const auto r = static_cast<std::size_t>(row);
      const bool hi = ds_.mask.has_img(r), ht = ds_.mask.has_txt(r);
      if (hi && ht) {
        Zf.row(j) = cfg_.eta_img * s.fake_img.row(row) + cfg_.eta_txt * s.fake_txt.row(row);
      } else if (hi) {
        Zf.row(j) = cfg_.beta * s.fake_txt.row(row);
      } else {
        Zf.row(j) = (1.0 - cfg_.beta) * s.fake_img.row(row);
      }
    }
    for (std::size_t k = 0; k < bi.size(); ++k) Zf.row(bi[k]) += weights_.img[ri[k]] * Zi.row(static_cast<Index>(k));
    for (std::size_t k = 0; k < bt.size(); ++k) Zf.row(bt[k]) += weights_.txt[rt[k]] * Zt.row(static_cast<Index>(k));

    const Matrix Pf = gather_rows(P_fus_, batch);
    const Centroids cf = centroids(Modality::fus);
    const double kl_fus = kl_divergence(Pf, soft_assign(Zf, cf)) / static_cast<double>(b);
    KlGradient gf = kl_gradient(Zf, cf, Pf);
    gf.dZ /= static_cast<double>(b);
    gf.dMu /= static_cast<double>(b);

    auto modality_step = [&](Modality mod, NetParams& enc, SgdMomentum& opt, SgdMomentum& opt_mu,
                             const Matrix& X, const Matrix& Z, const std::vector<Index>& pos,
                             const std::vector<Index>& rows, const Matrix& P_full,
                             const Vector& w, const char* phase) {
      if (pos.empty()) return;
      const double cnt = static_cast<double>(pos.size());
      const Matrix P = gather_rows(P_full, rows);
      const Centroids c = centroids(mod);
      const double loss = kl_divergence(P, soft_assign(Z, c)) / cnt + cfg_.alpha * kl_fus;
      record(phase, loss);
      KlGradient g = kl_gradient(Z, c, P);
      Matrix dZ = g.dZ / cnt;
      if (cfg_.alpha != 0.0)
        for (std::size_t k = 0; k < pos.size(); ++k)
          dZ.row(static_cast<Index>(k)) += cfg_.alpha * w[rows[k]] * gf.dZ.row(pos[k]);
      NetGrads grads = NetGrads::zeros_like(enc);
      encode_backward(enc, X, dZ, grads);
      opt.step(parameter_views(enc), gradient_views(grads));
      Matrix dMu = g.dMu / cnt;
      Matrix& mu = m_.state.centroid(mod);
      opt_mu.step(std::vector<std::span<double>>{{mu.data(), static_cast<std::size_t>(mu.size())}},
                  std::vector<std::span<double>>{{dMu.data(), static_cast<std::size_t>(dMu.size())}});
    };
    modality_step(Modality::img, m_.enc_img, opt_enc_img_, opt_mu_img_, Xi, Zi, bi, ri, P_img_, weights_.img, "enc_img");
    modality_step(Modality::txt, m_.enc_txt, opt_enc_txt_, opt_mu_txt_, Xt, Zt, bt, rt, P_txt_, weights_.txt, "enc_txt");

    if (cfg_.alpha != 0.0 && !cfg_.freeze_fused_centroids_in_enc_step) {
      Matrix dMu = cfg_.alpha * gf.dMu;
      Matrix& mu = s.centroid(Modality::fus);
      opt_mu_fus_.step(std::vector<std::span<double>>{{mu.data(), static_cast<std::size_t>(mu.size())}},
                       std::vector<std::span<double>>{{dMu.data(), static_cast<std::size_t>(dMu.size())}});
    }
  }

  struct PairData {
    Matrix cond;    // source-modality subspace rows
    Matrix real;    // target-modality subspace rows
    Matrix q_cond;  // soft assignment of the source rows
    Matrix q_real;  // soft assignment of the target rows
  };

  PairData pair_batch(const GanPair& pair) {
    const auto batch = sample(complete_, cfg_.batch_size);
    const bool fwd = pair.direction == Direction::img_to_txt;
    const Matrix zi = encode(m_.enc_img, gather_rows(ds_.img, batch));
    const Matrix zt = encode(m_.enc_txt, gather_rows(ds_.txt, batch));
    PairData p;
    p.cond = fwd ? zi : zt;
    p.real = fwd ? zt : zi;
    p.q_cond = soft_assign(p.cond, centroids(fwd ? Modality::img : Modality::txt));
    p.q_real = soft_assign(p.real, centroids(fwd ? Modality::txt : Modality::img));
    return p;
  }

  SgdMomentum& gen_opt(const GanPair& pair) { return &pair == &m_.g12 ? opt_g12_ : opt_g21_; }
  SgdMomentum& disc_opt(const GanPair& pair) { return &pair == &m_.g12 ? opt_d1_ : opt_d2_; }

  void generator_step(GanPair& pair, const char* phase) {
    const PairData p = pair_batch(pair);
    const Matrix noise = sample_noise(p.cond.rows(), pair.noise, hard_assign(p.q_cond), rng_);
    MLPCache gcache;
    const Matrix fake = generate(pair, noise, p.cond, Mode::train, &gcache);
    DiscriminatorCache dcache;
    const Vector prob = discriminator_forward(pair.disc, discriminator_input(fake, p.q_cond), &dcache);
    record(phase, generator_loss(prob, fake, p.real, cfg_.mu, cfg_.generator_loss_form));

    const GeneratorLossGrad lg = generator_loss_grad(prob, fake, p.real, cfg_.mu, cfg_.generator_loss_form);
    DiscriminatorGrads unused = DiscriminatorGrads::zeros_like(pair.disc);
    const Matrix dinput = discriminator_backward(pair.disc, dcache, lg.dlogit, unused);
    const Matrix dfake = dinput.leftCols(fake.cols()) + lg.dfake;
    NetGrads grads = NetGrads::zeros_like(pair.gen);
    backward(pair.gen, gcache, dfake, grads);
    gen_opt(pair).step(parameter_views(pair.gen), gradient_views(grads));
    update_running_stats(pair.gen, gcache);
  }

  void discriminator_step(GanPair& pair, const char* phase) {
    const PairData p = pair_batch(pair);
    const Matrix noise = sample_noise(p.cond.rows(), pair.noise, hard_assign(p.q_cond), rng_);
    const Matrix fake = generate(pair, noise, p.cond, Mode::train);
    DiscriminatorCache real_cache, fake_cache;
    const Vector pr = discriminator_forward(pair.disc, discriminator_input(p.real, p.q_real), &real_cache);
    const Vector pf = discriminator_forward(pair.disc, discriminator_input(fake, p.q_cond), &fake_cache);
    record(phase, discriminator_loss(pr, pf));
    const auto [dr, df] = discriminator_loss_grad(pr, pf);
    DiscriminatorGrads grads = DiscriminatorGrads::zeros_like(pair.disc);
    discriminator_backward(pair.disc, real_cache, dr, grads);
    discriminator_backward(pair.disc, fake_cache, df, grads);
    disc_opt(pair).step(parameter_views(pair.disc), gradient_views(grads));
  }

  void recompute_centroids() {
    auto& s = m_.state;
    if (!img_rows_.empty() && static_cast<Index>(img_rows_.size()) >= m_.K())
      s.centroid(Modality::img) = lloyd(gather_rows(s.Z_img, img_rows_), s.centroid(Modality::img)).centroids;
    if (!txt_rows_.empty() && static_cast<Index>(txt_rows_.size()) >= m_.K())
      s.centroid(Modality::txt) = lloyd(gather_rows(s.Z_txt, txt_rows_), s.centroid(Modality::txt)).centroids;
    s.centroid(Modality::fus) = lloyd(s.Z_fus, s.centroid(Modality::fus)).centroids;
  }

  void check_finite() const {
    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    const auto& s = m_.state;
    if (!m_.enc_img.all_finite() || !m_.enc_txt.all_finite())
      throw NumericAbort("encoder parameters", iter_, kNaN);
    if (!m_.g12.gen.all_finite() || !m_.g21.gen.all_finite() || !m_.g12.disc.all_finite() ||
        !m_.g21.disc.all_finite())
      throw NumericAbort("gan parameters", iter_, kNaN);
    if (!s.Z_fus.allFinite()) throw NumericAbort("fusion refresh", iter_, kNaN);
    for (const auto& c : s.centroids)
      if (!c.allFinite()) throw NumericAbort("centroid update", iter_, kNaN);
  }

  const IncompleteDataset& ds_;
  TrainedModel& m_;
  const TrainConfig& cfg_;
  Rng rng_;
  std::vector<Index> img_rows_, txt_rows_, complete_, all_rows_;
  FusionWeights weights_;
  Matrix P_img_, P_txt_, P_fus_;
  int iter_ = 0;
  SgdMomentum opt_enc_img_, opt_enc_txt_, opt_mu_img_, opt_mu_txt_, opt_mu_fus_;
  SgdMomentum opt_g12_, opt_g21_, opt_d1_, opt_d2_;
};

}  // namespace detail

/// Rounds every learned value through single precision so that the model is
/// exactly representable in the checkpoint format, then recomputes the state
/// and the final labels.
inline void finalize(TrainedModel& model, const IncompleteDataset& ds) {
  round_to_float(model.enc_img);
  round_to_float(model.enc_txt);
  round_to_float(model.g12.gen);
  round_to_float(model.g21.gen);
  round_to_float(model.g12.disc);
  round_to_float(model.g21.disc);
  for (auto& c : model.state.centroids) round_to_float(c);
  refresh_state(model, ds, model.state);
  model.final_labels =
      hard_assign(soft_assign(model.state.Z_fus, {model.state.centroid(Modality::fus), Modality::fus, model.cfg.delta}));
}

/// Runs the full alternating optimization.
inline TrainedModel train(const IncompleteDataset& ds, const TrainConfig& cfg) {
  TrainedModel model = initialize(ds, cfg);
  detail::Trainer(ds, model).run();
  finalize(model, ds);
  return model;
}

/// Cluster assignments for `ds` under a trained model. `ds` may carry a
/// different presence mask than the training data.
inline ClusteringResult infer(const TrainedModel& model, const IncompleteDataset& ds) {
  ds.validate();
  if (ds.d_img() != model.enc_img.spec.input_dim() || ds.d_txt() != model.enc_txt.spec.input_dim())
    throw InvalidArgument("dataset feature widths do not match the model's encoders");
  SubspaceState s;
  s.centroids = model.state.centroids;
  refresh_state(model, ds, s);
  ClusteringResult r;
  r.Q_fus = soft_assign(s.Z_fus, {s.centroid(Modality::fus), Modality::fus, model.cfg.delta});
  r.labels = hard_assign(r.Q_fus);
  r.Z_fus = std::move(s.Z_fus);
  if (ds.labels) {
    r.acc = clustering_accuracy(r.labels, *ds.labels);
    r.nmi = nmi(r.labels, *ds.labels);
  }
  return r;
}

}  // namespace cigit
