// cigit: synthesize datasets, train and evaluate incomplete image-text
// clustering, run missing-rate sweeps, export fused embeddings.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 invalid input, 3 non-finite loss,
// 4 file I/O or format, 5 cluster collapse.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cigit/cigit.hpp"

namespace fs = std::filesystem;
using namespace cigit;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kInvalid = 2, kNumeric = 3, kIo = 4, kCollapse = 5 };

/// Hyperparameter flags. Unset flags leave the config-file or default value.
struct TrainFlags {
  std::string config;
  std::optional<std::int64_t> k;
  std::optional<double> beta, alpha, eta_img, eta_txt, mu, lr;
  std::optional<int> iters, restarts;
  std::optional<Index> batch, dsub;
  std::optional<std::string> variant;

  void add_to(CLI::App* app) {
    app->add_option("--config", config, "JSON file with training settings")->check(CLI::ExistingFile);
    app->add_option("--k", k, "number of clusters");
    app->add_option("--beta", beta, "fusion weight of the text representation");
    app->add_option("--alpha", alpha, "weight of the fused KL term");
    app->add_option("--eta-img", eta_img, "weight of generated image representations");
    app->add_option("--eta-txt", eta_txt, "weight of generated text representations");
    app->add_option("--mu", mu, "generator similarity weight");
    app->add_option("--lr", lr, "encoder and centroid learning rate");
    app->add_option("--iters", iters, "outer iterations");
    app->add_option("--batch", batch, "minibatch size");
    app->add_option("--dsub", dsub, "subspace width");
    app->add_option("--variant", variant, "full, no_gan or no_kl");
    app->add_option("--restarts", restarts, "k-means restarts");
  }

  TrainConfig resolve(std::uint64_t seed) const {
    TrainConfig cfg;
    if (!config.empty()) {
      std::ifstream in(config);
      if (!in) throw IoError("cannot open " + config);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(config + ": " + e.what());
      }
      cfg = config_from_json(j, cfg);
    }
    if (k) cfg.K = *k;
    if (beta) cfg.beta = *beta;
    if (alpha) cfg.alpha = *alpha;
    if (eta_img) cfg.eta_img = *eta_img;
    if (eta_txt) cfg.eta_txt = *eta_txt;
    if (mu) cfg.mu = *mu;
    if (lr) cfg.lr = *lr;
    if (iters) cfg.max_iters = *iters;
    if (restarts) cfg.restarts = *restarts;
    if (batch) cfg.batch_size = *batch;
    if (dsub) cfg.d_sub = *dsub;
    cfg.seed = seed;
    if (variant) cfg.variant = parse_variant(*variant);
    cfg = apply_variant(cfg, cfg.variant);
    cfg.validate();
    return cfg;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

/// Refuses to write into a non-empty directory unless forced.
void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_directory(dir)) throw IoError(dir.string() + " exists and is not a directory");
  if (fs::is_directory(dir) && !fs::is_empty(dir)) {
    if (!force) throw InvalidArgument(dir.string() + " is not empty; pass --force to overwrite");
    fs::remove_all(dir);
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::logic_error&) {
      throw InvalidArgument("cannot parse '" + cell + "' as a number");
    }
  }
  if (out.empty()) throw InvalidArgument("empty list");
  return out;
}

IncompleteDataset load_masked(const std::string& data, std::optional<double> p, std::uint64_t seed) {
  IncompleteDataset ds = read_dataset(data);
  return p ? mask_for_run(ds, *p, seed) : ds;
}

int cmd_synth(std::int64_t k, std::size_t n, Index dimg, Index dtxt, double sigma, std::uint64_t seed,
              std::optional<double> p, const std::string& out, bool force) {
  IncompleteDataset ds = synth_paired_blobs(k, n, dimg, dtxt, sigma, seed);
  if (p) ds = mask_for_run(ds, *p, seed);
  prepare_out(out, force);
  write_dataset(ds, out);
  std::ifstream manifest(fs::path(out) / "manifest.json");
  std::cout << manifest.rdbuf();
  return kOk;
}

int cmd_train(const std::string& data, std::optional<double> p, std::uint64_t seed, const TrainFlags& flags,
              const std::string& out, bool force) {
  const TrainConfig cfg = flags.resolve(seed);
  const IncompleteDataset ds = load_masked(data, p, seed);
  prepare_out(out, force);

  const auto start = std::chrono::steady_clock::now();
  const TrainedModel model = train(ds, cfg);
  const ClusteringResult r = infer(model, ds);
  const double runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  save_checkpoint(model, out);
  nlohmann::ordered_json j;
  j["method"] = "cigit";
  j["variant"] = to_string(model.cfg.variant);
  j["missing_rate"] = p.value_or(ds.mask.missing_rate());
  j["seed"] = seed;
  j["acc"] = r.acc ? nlohmann::ordered_json(*r.acc) : nlohmann::ordered_json(nullptr);
  j["nmi"] = r.nmi ? nlohmann::ordered_json(*r.nmi) : nlohmann::ordered_json(nullptr);
  j["runtime_s"] = runtime;
  j["labels"] = r.labels;
  write_text(fs::path(out) / "results.json", j.dump(2) + "\n");

  std::cout << "variant " << to_string(model.cfg.variant) << "  missing rate " << ds.mask.missing_rate();
  if (r.acc) std::cout << "  ACC " << *r.acc << "  NMI " << *r.nmi;
  std::cout << "  (" << runtime << " s)\n";
  return kOk;
}

int cmd_sweep(const std::string& data, const std::string& plist, const std::string& seeds,
              const std::string& methods, int jobs, const TrainFlags& flags, const std::string& out,
              bool force) {
  SweepPlan plan;
  plan.missing_rates = parse_list(plist);
  for (double s : parse_list(seeds)) {
    if (s < 0 || s != static_cast<double>(static_cast<std::uint64_t>(s)))
      throw InvalidArgument("seeds must be non-negative integers");
    plan.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (!methods.empty()) {
    plan.methods.clear();
    std::stringstream ss(methods);
    for (std::string m; std::getline(ss, m, ',');) plan.methods.push_back(m);
  }
  plan.jobs = jobs;
  const TrainConfig cfg = flags.resolve(0);
  const IncompleteDataset ds = read_dataset(data);

  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  const fs::path csv = fs::path(out) / "sweep.csv";
  if (force) fs::remove(csv);

  const auto table = run_sweep(ds, cfg, plan, csv, [](const SweepRow& row) {
    std::cout << to_csv(row) << std::endl;
  });
  std::size_t failed = 0;
  for (const auto& row : table) failed += row.status != "ok";
  std::cout << table.size() << " rows in " << csv.string() << ", " << failed << " not ok\n";
  return kOk;
}

int cmd_export(const std::string& model_dir, const std::string& data, std::optional<double> p,
               std::optional<std::uint64_t> seed, const std::string& out, bool force) {
  const TrainedModel model = load_checkpoint(model_dir);
  // Without --p/--seed, reuse the mask recorded next to the model.
  const fs::path results = fs::path(model_dir) / "results.json";
  nlohmann::json recorded = nlohmann::json::object();
  if (fs::exists(results)) {
    std::ifstream in(results);
    recorded = nlohmann::json::parse(in, nullptr, false);
    if (recorded.is_discarded() || !recorded.is_object()) throw FormatError(results.string() + " is malformed");
  }
  if (!seed) seed = recorded.value("seed", model.cfg.seed);
  const IncompleteDataset raw = read_dataset(data);
  if (!p && raw.mask.complete_count() == raw.n() && recorded.value("missing_rate", 0.0) > 0.0)
    p = recorded["missing_rate"].get<double>();
  const IncompleteDataset ds = p ? mask_for_run(raw, *p, *seed) : raw;
  const ClusteringResult r = infer(model, ds);

  prepare_out(out, force);
  detail::write_f32(fs::path(out) / "embeddings.f32", r.Z_fus);
  std::vector<std::int64_t> pairs;
  pairs.reserve(r.labels.size() * 2);
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    pairs.push_back(r.labels[i]);
    pairs.push_back(ds.labels ? (*ds.labels)[i] : -1);
  }
  detail::write_file(fs::path(out) / "labels.i64", pairs.data(), pairs.size() * sizeof(std::int64_t));
  nlohmann::ordered_json meta;
  meta["n"] = r.Z_fus.rows();
  meta["d_sub"] = r.Z_fus.cols();
  meta["missing_rate"] = ds.mask.missing_rate();
  meta["labels_columns"] = {"pred", "true"};
  write_text(fs::path(out) / "embeddings.json", meta.dump(2) + "\n");
  std::cout << "wrote " << r.Z_fus.rows() << " x " << r.Z_fus.cols() << " embeddings to " << out << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incomplete image-text clustering with conditional GANs"};
  app.require_subcommand(1);

  std::string data, out, model_dir, plist = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", seeds = "1,2,3", methods;
  std::int64_t k = 3;
  std::size_t n = 600;
  Index dimg = 20, dtxt = 10;
  double sigma = 0.1;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> seed_opt;
  std::optional<double> p;
  int jobs = 1;
  bool force = false;
  TrainFlags tf;

  auto* synth = app.add_subcommand("synth", "write a synthetic paired-blob dataset");
  synth->add_option("--k", k, "number of clusters")->capture_default_str();
  synth->add_option("--n", n, "instances")->capture_default_str();
  synth->add_option("--dimg", dimg, "image feature width")->capture_default_str();
  synth->add_option("--dtxt", dtxt, "text feature width")->capture_default_str();
  synth->add_option("--sigma", sigma, "noise level")->capture_default_str();
  synth->add_option("--seed", seed, "random seed")->capture_default_str();
  synth->add_option("--p", p, "mask the dataset at this missing rate");
  synth->add_option("--out", out, "dataset directory")->required();
  synth->add_flag("--force", force, "overwrite a non-empty output directory");

  auto* trn = app.add_subcommand("train", "train on a dataset and write a model directory");
  trn->add_option("--data", data, "dataset directory")->required();
  trn->add_option("--p", p, "re-mask a complete dataset at this missing rate");
  trn->add_option("--seed", seed, "random seed")->capture_default_str();
  trn->add_option("--out", out, "model directory")->required();
  trn->add_flag("--force", force, "overwrite a non-empty output directory");
  tf.add_to(trn);

  auto* swp = app.add_subcommand("sweep", "evaluate every method over missing rates and seeds");
  swp->add_option("--data", data, "complete dataset directory")->required();
  swp->add_option("--plist", plist, "comma-separated missing rates")->capture_default_str();
  swp->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  swp->add_option("--methods", methods, "subset of cigit,bestsm,zero,mean");
  swp->add_option("--jobs", jobs, "parallel workers")->capture_default_str();
  swp->add_option("--out", out, "directory for sweep.csv")->required();
  swp->add_flag("--force", force, "discard an existing sweep.csv instead of resuming it");
  tf.add_to(swp);

  auto* exp = app.add_subcommand("export-embeddings", "write fused representations and labels");
  exp->add_option("--model", model_dir, "model directory written by train")->required();
  exp->add_option("--data", data, "dataset directory")->required();
  exp->add_option("--p", p, "missing rate (default: the one recorded with the model)");
  exp->add_option("--seed", seed_opt, "mask seed (default: the model's seed)");
  exp->add_option("--out", out, "output directory")->required();
  exp->add_flag("--force", force, "overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*synth) return cmd_synth(k, n, dimg, dtxt, sigma, seed, p, out, force);
    if (*trn) return cmd_train(data, p, seed, tf, out, force);
    if (*swp) return cmd_sweep(data, plist, seeds, methods, jobs, tf, out, force);
    if (*exp) return cmd_export(model_dir, data, p, seed_opt, out, force);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const InitializationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return kNumeric;
  } catch (const CollapseAbort& e) {
    std::cerr << "collapse abort: " << e.what() << "\n";
    return kCollapse;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
