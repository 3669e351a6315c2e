#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "cigit/metrics.hpp"
#include "cigit/trainer.hpp"
#include "fixtures.hpp"

using namespace cigit;

namespace {

std::vector<std::pair<std::string, double>> flatten(const std::vector<LossRecord>& h) {
  std::vector<std::pair<std::string, double>> out;
  for (const auto& r : h) out.emplace_back(r.phase, r.loss);
  return out;
}

IncompleteDataset permute_rows(const IncompleteDataset& ds, const std::vector<Index>& perm) {
  IncompleteDataset out = ds;
  out.img = gather_rows(ds.img, perm);
  out.txt = gather_rows(ds.txt, perm);
  std::vector<std::uint8_t> flags;
  Labels labels;
  for (auto r : perm) {
    flags.push_back(ds.mask.flags(static_cast<std::size_t>(r)));
    labels.push_back((*ds.labels)[static_cast<std::size_t>(r)]);
  }
  out.mask = PresenceMask(flags);
  out.labels = labels;
  return out;
}

}  // namespace

TEST(Train, SingleIterationSmoke) {
  const auto ds = fixture::masked_blobs(0.5, 60);
  const auto model = train(ds, fixture::tiny_config(1, 1));
  EXPECT_EQ(model.final_labels.size(), 60u);
  std::set<std::string> phases;
  for (const auto& r : model.history) phases.insert(r.phase);
  EXPECT_EQ(phases, (std::set<std::string>{"enc_img", "enc_txt", "gen_12", "gen_21", "disc_1", "disc_2"}));
  EXPECT_EQ(model.K(), 3);
  EXPECT_EQ(model.cfg.K, 3);
}

TEST(Train, DeterministicPerSeed) {
  const auto ds = fixture::masked_blobs(0.5);
  const auto a = train(ds, fixture::tiny_config(3));
  const auto b = train(ds, fixture::tiny_config(3));
  EXPECT_EQ(flatten(a.history), flatten(b.history));
  EXPECT_EQ(a.final_labels, b.final_labels);
  EXPECT_EQ(a.state.Z_fus, b.state.Z_fus);
  const auto c = train(ds, fixture::tiny_config(4));
  EXPECT_NE(flatten(a.history), flatten(c.history));
}

TEST(Initialize, CentroidsClusterCompleteData) {
  const auto ds = fixture::blobs(300);
  auto cfg = fixture::tiny_config(2);
  cfg.restarts = 10;
  const auto model = initialize(ds, cfg);
  const Labels pred =
      hard_assign(soft_assign(model.state.Z_fus, {model.state.centroid(Modality::fus), Modality::fus, 1.0}));
  EXPECT_GE(clustering_accuracy(pred, *ds.labels), 0.9);
}

TEST(Initialize, TooFewCompleteRows) {
  // 20 rows at p = 0.9 leave 2 complete rows for K = 3.
  const auto ds = fixture::masked_blobs(0.9, 20);
  EXPECT_THROW(initialize(ds, fixture::tiny_config()), InitializationError);
}

TEST(Initialize, ResolvesK) {
  auto ds = fixture::blobs(60);
  auto cfg = fixture::tiny_config();
  cfg.K = 4;
  EXPECT_THROW(initialize(ds, cfg), InvalidArgument);
  ds.K.reset();
  ds.labels.reset();
  cfg.K = 0;
  EXPECT_THROW(initialize(ds, cfg), InvalidArgument);
  cfg.K = 3;
  EXPECT_EQ(initialize(ds, cfg).K(), 3);
}

TEST(Train, GanInertWithoutAugmentationOrAdversarialSteps) {
  // eta = 0 and no generator/discriminator steps on complete data: the
  // adversarial networks never reach the encoder objective.
  const auto ds = fixture::blobs();
  auto a = fixture::tiny_config(5, 4);
  a.eta_img = a.eta_txt = 0.0;
  a.gen_steps = a.disc_steps = 0;
  auto b = a;
  b.gen_hidden = {20, 6};
  b.disc_trunk = 5;
  b.mb_kernels = 2;
  const auto ma = train(ds, a), mb = train(ds, b);
  EXPECT_EQ(flatten(ma.history), flatten(mb.history));
  EXPECT_EQ(ma.final_labels, mb.final_labels);
}

TEST(Train, NoGanVariantSkipsAdversarialPhases) {
  const auto ds = fixture::masked_blobs(0.5);
  const auto model = train(ds, apply_variant(fixture::tiny_config(), Variant::no_gan));
  ASSERT_FALSE(model.history.empty());
  for (const auto& r : model.history) EXPECT_TRUE(r.phase == "enc_img" || r.phase == "enc_txt") << r.phase;
}

TEST(Train, NoKlVariantSkipsEncoderPhases) {
  const auto ds = fixture::masked_blobs(0.5);
  const auto model = train(ds, apply_variant(fixture::tiny_config(), Variant::no_kl));
  EXPECT_TRUE(model.losses("enc_img").empty());
  EXPECT_FALSE(model.losses("gen_12").empty());
  EXPECT_EQ(model.cfg.alpha, 0.0);
}

TEST(Train, LossesFiniteAndKlTermsNonNegative) {
  const auto ds = fixture::masked_blobs(0.5);
  const auto model = train(ds, fixture::tiny_config(6, 10));
  for (const auto& r : model.history) {
    EXPECT_TRUE(std::isfinite(r.loss));
    if (r.phase.starts_with("enc") || r.phase.starts_with("disc")) EXPECT_GE(r.loss, 0.0);
  }
}

TEST(Train, AbsentRowValuesAreNeverRead) {
  const auto ds = fixture::masked_blobs(0.6);
  const auto clean = train(ds, fixture::tiny_config(7));
  for (double poison : {1e9, -1e9}) {
    auto p = ds;
    for (std::size_t i = 0; i < p.n(); ++i) {
      if (!p.mask.has_img(i)) p.img.row(static_cast<Index>(i)).setConstant(poison);
      if (!p.mask.has_txt(i)) p.txt.row(static_cast<Index>(i)).setConstant(poison);
    }
    const auto m = train(p, fixture::tiny_config(7));
    EXPECT_EQ(flatten(m.history), flatten(clean.history));
    EXPECT_EQ(m.final_labels, clean.final_labels);
    EXPECT_EQ(infer(clean, p).labels, clean.final_labels);
  }
}

TEST(Infer, ReproducesFinalLabels) {
  const auto ds = fixture::masked_blobs(0.5);
  const auto model = train(ds, fixture::tiny_config(8));
  const auto r = infer(model, ds);
  EXPECT_EQ(r.labels, model.final_labels);
  EXPECT_EQ(r.Z_fus, model.state.Z_fus);
  ASSERT_TRUE(r.acc && r.nmi);
  EXPECT_EQ(*r.acc, clustering_accuracy(r.labels, *ds.labels));
  for (Index i = 0; i < r.Q_fus.rows(); ++i) EXPECT_NEAR(r.Q_fus.row(i).sum(), 1.0, 1e-12);
}

TEST(Infer, RowPermutationPermutesLabels) {
  const auto ds = fixture::masked_blobs(0.5);
  const auto model = train(ds, fixture::tiny_config(9));
  std::vector<Index> perm(ds.n());
  std::iota(perm.begin(), perm.end(), Index{0});
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 17, perm.end());
  const auto base = infer(model, ds).labels;
  const auto shuffled = infer(model, permute_rows(ds, perm)).labels;
  for (std::size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(shuffled[i], base[static_cast<std::size_t>(perm[i])]);
}

TEST(Infer, AcceptsADifferentMask) {
  const auto full = fixture::blobs();
  const auto train_ds = apply_mask(full, make_missing_mask(full.n(), 0.5, 0.5, 1));
  const auto model = train(train_ds, fixture::tiny_config(10));
  const auto other = apply_mask(full, make_missing_mask(full.n(), 0.7, 0.5, 2));
  const auto r = infer(model, other);
  EXPECT_EQ(r.labels.size(), full.n());
  EXPECT_TRUE(r.acc.has_value());
  auto wrong = full;
  wrong.img = Matrix::Zero(static_cast<Index>(full.n()), 19);
  EXPECT_THROW(infer(model, wrong), InvalidArgument);
}

TEST(TrainConfigJson, RoundTrip) {
  auto cfg = fixture::tiny_config(42);
  cfg.beta = 0.3;
  cfg.generator_loss_form = GeneratorLossForm::as_printed;
  cfg.variant = Variant::no_kl;
  const auto back = config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back), to_json(cfg));
}

TEST(TrainConfigJson, OverlaysAndRejects) {
  const auto cfg = config_from_json(nlohmann::json{{"beta", 0.2}, {"max_iters", 3}});
  EXPECT_EQ(cfg.beta, 0.2);
  EXPECT_EQ(cfg.max_iters, 3);
  EXPECT_EQ(cfg.alpha, TrainConfig{}.alpha);
  EXPECT_THROW(config_from_json(nlohmann::json{{"betta", 0.2}}), InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json{{"beta", "high"}}), InvalidArgument);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), InvalidArgument);
}

TEST(TrainConfig, Validation) {
  auto bad = [](auto edit) {
    TrainConfig c;
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](TrainConfig& c) { c.beta = 1.5; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.K = 1; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.lr = 0; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.mu = -1; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.max_iters = 0; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](TrainConfig& c) { c.momentum = 1.0; }).validate(), InvalidArgument);
  EXPECT_NO_THROW(TrainConfig{}.validate());
}

TEST(Variant, ParseAndApply) {
  EXPECT_EQ(parse_variant("no_gan"), Variant::no_gan);
  EXPECT_THROW(parse_variant("nogan"), InvalidArgument);
  const auto g = apply_variant(TrainConfig{}, Variant::no_gan);
  EXPECT_EQ(g.eta_img, 0.0);
  EXPECT_EQ(g.gen_steps, 0);
  const auto k = apply_variant(TrainConfig{}, Variant::no_kl);
  EXPECT_EQ(k.enc_steps, 0);
  EXPECT_EQ(std::string(to_string(Variant::full)), "full");
}

TEST(Train, DivergenceIsReported) {
  const auto ds = fixture::masked_blobs(0.5);
  auto cfg = fixture::tiny_config(11, 20);
  cfg.lr = cfg.gan_lr = 1e150;
  try {
    train(ds, cfg);
    FAIL() << "training with an absurd learning rate should abort";
  } catch (const NumericAbort&) {
  } catch (const CollapseAbort&) {
  }
}

TEST(TrainConfig, PresetsParse) {
  for (const char* name : {"wikipedia", "nuswide10k", "bdgp"}) {
    std::ifstream in(std::filesystem::path(CIGIT_PRESET_DIR) / (std::string(name) + ".json"));
    ASSERT_TRUE(in) << name;
    const auto cfg = config_from_json(nlohmann::json::parse(in));
    EXPECT_NO_THROW(cfg.validate()) << name;
    EXPECT_EQ(cfg.enc_hidden.size(), 2u) << name;
  }
}
