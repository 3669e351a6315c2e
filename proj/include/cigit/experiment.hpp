#pragma once

// Experiment plumbing shared by the command-line tool and the acceptance
// runner: masked runs of each method, result records, and resumable
// missing-rate sweeps written to CSV.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "cigit/dataio.hpp"
#include "cigit/error.hpp"
#include "cigit/evalkit.hpp"
#include "cigit/random.hpp"
#include "cigit/trainer.hpp"

namespace cigit {

inline constexpr double kDefaultSplitRatio = 0.5;
inline const std::vector<std::string> kSweepMethods{"cigit", "bestsm", "zero", "mean"};

/// The presence mask used for (p, seed) everywhere in the tool, so that every
/// method in a sweep sees the same incomplete data.
inline IncompleteDataset mask_for_run(const IncompleteDataset& complete, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 0.9)) throw InvalidArgument("missing rate must lie in [0, 0.9]");
  if (complete.mask.complete_count() != complete.n())
    throw InvalidArgument("masking at a missing rate needs a dataset without absent modalities");
  return apply_mask(complete, make_missing_mask(complete.n(), p, kDefaultSplitRatio, derive_seed(seed, "mask")));
}

struct RunResult {
  std::string method;
  std::string variant;
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  double acc = 0.0;
  double nmi = 0.0;
  double runtime_s = 0.0;
  Labels labels;
};

inline nlohmann::ordered_json to_json(const RunResult& r) {
  nlohmann::ordered_json j;
  j["method"] = r.method;
  j["variant"] = r.variant;
  j["missing_rate"] = r.missing_rate;
  j["seed"] = r.seed;
  j["acc"] = r.acc;
  j["nmi"] = r.nmi;
  j["runtime_s"] = r.runtime_s;
  j["labels"] = r.labels;
  return j;
}

namespace detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace detail

/// One evaluation of `method` on an already-masked dataset. Training-based
/// methods take K and the seed from `cfg`.
inline RunResult run_method(const IncompleteDataset& ds, const std::string& method, const TrainConfig& cfg,
                            double missing_rate) {
  if (!ds.labels) throw InvalidArgument("evaluation needs ground-truth labels");
  const std::int64_t K = detail::resolve_K(ds, cfg);
  detail::Stopwatch clock;
  RunResult r;
  r.method = method;
  r.variant = method == "cigit" ? to_string(cfg.variant) : "";
  r.missing_rate = missing_rate;
  r.seed = cfg.seed;
  MetricPair m;
  if (method == "cigit") {
    const auto model = train(ds, cfg);
    const auto out = infer(model, ds);
    m = {*out.acc, *out.nmi};
    r.labels = out.labels;
  } else if (method == "bestsm") {
    m = best_single_modality(ds, K, cfg.restarts, cfg.seed, nullptr);
  } else if (method == "zero" || method == "mean") {
    m = impute_baseline(ds, parse_impute_strategy(method), K, cfg.restarts, cfg.seed);
  } else {
    throw InvalidArgument("unknown method '" + method + "' (expected cigit, bestsm, zero or mean)");
  }
  r.acc = m.acc;
  r.nmi = m.nmi;
  r.runtime_s = clock.seconds();
  return r;
}

struct SweepRow {
  double missing_rate = 0.0;
  std::uint64_t seed = 0;
  std::string method;
  double acc = 0.0;
  double nmi = 0.0;
  std::string status;  // ok, nan_abort, collapse_abort, failed
  double runtime_s = 0.0;
};

inline const char* kSweepHeader = "missing_rate,seed,method,acc,nmi,status,runtime_s";

inline std::string format_rate(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", p);
  return buf;
}

inline std::string to_csv(const SweepRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%llu,%s,%.6f,%.6f,%s,%.3f", format_rate(r.missing_rate).c_str(),
                static_cast<unsigned long long>(r.seed), r.method.c_str(), r.acc, r.nmi, r.status.c_str(),
                r.runtime_s);
  return buf;
}

inline std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::vector<SweepRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  if (!std::getline(in, line)) return rows;
  if (line != kSweepHeader) throw FormatError(path.string() + ": unexpected sweep header");
  long n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw FormatError(path.string() + ": malformed row", n);
    try {
      rows.push_back({std::stod(f[0]), std::stoull(f[1]), f[2], std::stod(f[3]), std::stod(f[4]), f[5],
                      std::stod(f[6])});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": malformed row", n);
    }
  }
  return rows;
}

struct SweepPlan {
  std::vector<double> missing_rates;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods = kSweepMethods;
  int jobs = 1;
};

/// Runs every (p, seed, method) cell of `plan` that `csv` does not already
/// hold and appends one row per cell. Failures become rows with a non-ok
/// status. Returns the full table (old and new rows).
inline std::vector<SweepRow> run_sweep(const IncompleteDataset& complete, const TrainConfig& cfg,
                                       const SweepPlan& plan, const std::filesystem::path& csv,
                                       const std::function<void(const SweepRow&)>& on_row = {}) {
  for (double p : plan.missing_rates)
    if (!(p >= 0.0 && p <= 0.9)) throw InvalidArgument("missing rate " + std::to_string(p) + " outside [0, 0.9]");
  for (const auto& m : plan.methods)
    if (std::find(kSweepMethods.begin(), kSweepMethods.end(), m) == kSweepMethods.end())
      throw InvalidArgument("unknown method '" + m + "'");
  if (plan.jobs < 1) throw InvalidArgument("jobs must be at least 1");

  std::vector<SweepRow> table = read_sweep_csv(csv);
  std::set<std::tuple<std::string, std::uint64_t, std::string>> done;
  for (const auto& r : table) done.emplace(format_rate(r.missing_rate), r.seed, r.method);

  struct Cell {
    double p;
    std::uint64_t seed;
    std::string method;
  };
  std::vector<Cell> todo;
  for (double p : plan.missing_rates)
    for (auto s : plan.seeds)
      for (const auto& m : plan.methods)
        if (!done.count({format_rate(p), s, m})) todo.push_back({p, s, m});

  const bool fresh = !std::filesystem::exists(csv) || std::filesystem::file_size(csv) == 0;
  std::ofstream out(csv, std::ios::app);
  if (!out) throw IoError("cannot write " + csv.string());
  if (fresh) out << kSweepHeader << '\n' << std::flush;

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const Cell& c = todo[i];
      SweepRow row{c.p, c.seed, c.method, 0.0, 0.0, "ok", 0.0};
      detail::Stopwatch clock;
      try {
        TrainConfig run_cfg = cfg;
        run_cfg.seed = c.seed;
        const auto r = run_method(mask_for_run(complete, c.p, c.seed), c.method, run_cfg, c.p);
        row.acc = r.acc;
        row.nmi = r.nmi;
      } catch (const NumericAbort&) {
        row.status = "nan_abort";
      } catch (const CollapseAbort&) {
        row.status = "collapse_abort";
      } catch (const std::exception&) {
        row.status = "failed";
      }
      row.runtime_s = clock.seconds();
      std::lock_guard lock(writer);
      out << to_csv(row) << '\n' << std::flush;
      table.push_back(row);
      if (on_row) on_row(row);
    }
  };
  const int threads = std::min<int>(plan.jobs, static_cast<int>(todo.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (!out) throw IoError("short write to " + csv.string());
  return table;
}

/// Median ACC of `method` at missing rate `p` over the ok rows of `table`.
inline double median_acc(const std::vector<SweepRow>& table, const std::string& method, double p) {
  std::vector<double> v;
  for (const auto& r : table)
    if (r.method == method && r.status == "ok" && format_rate(r.missing_rate) == format_rate(p)) v.push_back(r.acc);
  if (v.empty()) throw InvalidArgument("no successful " + method + " rows at p = " + format_rate(p));
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace cigit
