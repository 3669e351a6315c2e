#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigit/error.hpp"
#include "cigit/linalg.hpp"
#include "cigit/random.hpp"

namespace cigit {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swapping");

inline constexpr std::uint8_t kHasImg = 0x1;
inline constexpr std::uint8_t kHasTxt = 0x2;

/// Which modalities each instance carries.
class PresenceMask {
 public:
  PresenceMask() = default;

  /// Builds a mask from raw flag bytes (bit0 = image, bit1 = text).
  explicit PresenceMask(std::vector<std::uint8_t> flags) : flags_(std::move(flags)) {
    for (std::size_t i = 0; i < flags_.size(); ++i) {
      if (flags_[i] == 0 || flags_[i] > (kHasImg | kHasTxt))
        throw InvalidArgument("presence flags of instance " + std::to_string(i) +
                              " must name at least one modality");
    }
  }

  static PresenceMask all_present(std::size_t n) {
    return PresenceMask(std::vector<std::uint8_t>(n, kHasImg | kHasTxt));
  }

  std::size_t size() const noexcept { return flags_.size(); }
  bool has_img(std::size_t i) const { return (flags_.at(i) & kHasImg) != 0; }
  bool has_txt(std::size_t i) const { return (flags_.at(i) & kHasTxt) != 0; }
  bool complete(std::size_t i) const { return flags_.at(i) == (kHasImg | kHasTxt); }
  std::uint8_t flags(std::size_t i) const { return flags_.at(i); }
  const std::vector<std::uint8_t>& raw() const noexcept { return flags_; }

  std::size_t complete_count() const {
    return static_cast<std::size_t>(
        std::count(flags_.begin(), flags_.end(), std::uint8_t{kHasImg | kHasTxt}));
  }
  std::size_t img_only_count() const {
    return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), kHasImg));
  }
  std::size_t txt_only_count() const {
    return static_cast<std::size_t>(std::count(flags_.begin(), flags_.end(), kHasTxt));
  }

  /// (n - m) / n.
  double missing_rate() const {
    if (flags_.empty()) return 0.0;
    return static_cast<double>(size() - complete_count()) / static_cast<double>(size());
  }

  std::vector<Index> rows_with_img() const { return select(kHasImg); }
  std::vector<Index> rows_with_txt() const { return select(kHasTxt); }
  std::vector<Index> complete_rows() const { return select(kHasImg | kHasTxt); }

  bool operator==(const PresenceMask&) const = default;

 private:
  std::vector<Index> select(std::uint8_t bits) const {
    std::vector<Index> rows;
    for (std::size_t i = 0; i < flags_.size(); ++i)
      if ((flags_[i] & bits) == bits) rows.push_back(static_cast<Index>(i));
    return rows;
  }

  std::vector<std::uint8_t> flags_;
};

/// Two aligned feature tables plus presence information.
///
/// Rows whose modality is absent hold zeros. The mask, not the values, is
/// authoritative; code must not treat those rows as observations.
struct IncompleteDataset {
  Matrix img;
  Matrix txt;
  PresenceMask mask;
  std::optional<Labels> labels;
  std::optional<std::int64_t> K;
  std::uint64_t seed = 0;

  std::size_t n() const noexcept { return mask.size(); }
  Index d_img() const noexcept { return img.cols(); }
  Index d_txt() const noexcept { return txt.cols(); }

  void validate() const {
    const auto rows = static_cast<Index>(mask.size());
    detail::require(rows >= 1, "dataset has no instances");
    detail::require(img.rows() == rows && txt.rows() == rows,
                    "feature tables must have one row per instance");
    detail::require(img.cols() >= 1 && txt.cols() >= 1, "feature dimensions must be positive");
    detail::require(img.allFinite() && txt.allFinite(), "feature tables contain non-finite values");
    if (labels) {
      detail::require(labels->size() == mask.size(), "label count must equal instance count");
      std::vector<std::int64_t> distinct(labels->begin(), labels->end());
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      detail::require(distinct.size() >= 2, "labels must cover at least two classes");
      detail::require(distinct.front() >= 0, "labels must be non-negative");
      if (K) detail::require(distinct.back() < *K, "labels must lie in [0, K)");
    }
  }
};

namespace detail {
/// round-half-up of a non-negative value, tolerant to representation error.
inline std::size_t round_half_up(double x) {
  return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}
}  // namespace detail

/// Number of complete instances for `n` instances at missing rate `p`.
inline std::size_t complete_count_for(std::size_t n, double p) {
  return detail::round_half_up(static_cast<double>(n) * (1.0 - p));
}

/// Random presence mask with exactly round(n(1-p)) complete instances. Of the
/// incomplete ones, round(split_ratio * (n-m)) are image-only and the rest text-only.
inline PresenceMask make_missing_mask(std::size_t n, double p, double split_ratio,
                                      std::uint64_t seed) {
  detail::require(n >= 1, "n must be at least 1");
  detail::require(p >= 0.0 && p < 1.0, "missing rate p must lie in [0, 1)");
  detail::require(split_ratio >= 0.0 && split_ratio <= 1.0, "split_ratio must lie in [0, 1]");
  const std::size_t m = complete_count_for(n, p);
  detail::require(m >= 1, "missing rate leaves no complete instances");
  const std::size_t incomplete = n - m;
  const std::size_t img_only =
      std::min(incomplete, detail::round_half_up(split_ratio * static_cast<double>(incomplete)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, "mask");
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::uint8_t> flags(n, kHasImg | kHasTxt);
  for (std::size_t r = m; r < n; ++r) flags[order[r]] = (r < m + img_only) ? kHasImg : kHasTxt;
  return PresenceMask(std::move(flags));
}

/// Zero-fills absent modalities according to `mask`.
///
/// The input may already be masked as long as `mask` does not re-enable a
/// modality the input lacks; this makes the operation idempotent.
inline IncompleteDataset apply_mask(const IncompleteDataset& ds, const PresenceMask& mask) {
  if (mask.size() != ds.n() || static_cast<Index>(mask.size()) != ds.img.rows())
    throw InvalidArgument("mask size " + std::to_string(mask.size()) +
                          " does not match dataset size " + std::to_string(ds.n()));
  IncompleteDataset out = ds;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if ((mask.has_img(i) && !ds.mask.has_img(i)) || (mask.has_txt(i) && !ds.mask.has_txt(i)))
      throw InvalidArgument("mask requests a modality that instance " + std::to_string(i) +
                            " does not have");
    const auto r = static_cast<Index>(i);
    if (!mask.has_img(i)) out.img.row(r).setZero();
    if (!mask.has_txt(i)) out.txt.row(r).setZero();
  }
  out.mask = mask;
  return out;
}

/// Two-view Gaussian blobs: K latent clusters pushed through fixed random
/// affine maps into the image and text feature spaces. Values are rounded to
/// single precision so the on-disk format stores them exactly.
inline IncompleteDataset synth_paired_blobs(std::int64_t K, std::size_t n, Index d_img,
                                            Index d_txt, double sigma, std::uint64_t seed) {
  detail::require(K >= 2, "K must be at least 2");
  detail::require(n >= static_cast<std::size_t>(K) * 4, "n must be at least 4K");
  detail::require(d_img >= 1 && d_txt >= 1, "feature dimensions must be positive");
  detail::require(sigma > 0.0 && std::isfinite(sigma), "sigma must be positive");

  constexpr Index kLatent = 4;
  const double min_sep = 10.0 * sigma;
  const double spread = std::max(1.0, min_sep);

  Rng rng = make_rng(seed, "synth");
  std::normal_distribution<double> gauss(0.0, 1.0);

  Matrix centers(K, kLatent);
  bool ok = false;
  for (int attempt = 0; attempt < 10000 && !ok; ++attempt) {
    for (Index i = 0; i < centers.size(); ++i) centers.data()[i] = spread * gauss(rng);
    ok = true;
    for (Index a = 0; a < K && ok; ++a)
      for (Index b = a + 1; b < K && ok; ++b)
        ok = (centers.row(a) - centers.row(b)).norm() >= min_sep;
  }
  if (!ok) throw InvalidArgument("could not place well-separated cluster centers");

  auto affine = [&](Index out_dim, Matrix& A, Vector& b) {
    A.resize(out_dim, kLatent);
    b.resize(out_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kLatent));
    for (Index i = 0; i < A.size(); ++i) A.data()[i] = scale * gauss(rng);
    for (Index i = 0; i < b.size(); ++i) b[i] = gauss(rng);
  };
  Matrix A_img, A_txt;
  Vector b_img, b_txt;
  affine(d_img, A_img, b_img);
  affine(d_txt, A_txt, b_txt);

  std::uniform_int_distribution<std::int64_t> pick(0, K - 1);
  IncompleteDataset ds;
  ds.img.resize(static_cast<Index>(n), d_img);
  ds.txt.resize(static_cast<Index>(n), d_txt);
  ds.labels = Labels(n);
  ds.K = K;
  ds.seed = seed;
  ds.mask = PresenceMask::all_present(n);
  Vector latent(kLatent);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = pick(rng);
    (*ds.labels)[i] = k;
    for (Index j = 0; j < kLatent; ++j) latent[j] = centers(k, j) + sigma * gauss(rng);
    const auto r = static_cast<Index>(i);
    ds.img.row(r) = (A_img * latent + b_img).transpose();
    ds.txt.row(r) = (A_txt * latent + b_txt).transpose();
    for (Index j = 0; j < d_img; ++j) ds.img(r, j) += sigma * gauss(rng);
    for (Index j = 0; j < d_txt; ++j) ds.txt(r, j) += sigma * gauss(rng);
  }
  round_to_float(ds.img);
  round_to_float(ds.txt);
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.json, img.f32, txt.f32, mask.u8, labels.i64.

namespace detail {

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_f32(const std::filesystem::path& path, const Matrix& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  for (Index i = 0; i < m.size(); ++i) buf[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  write_file(path, buf.data(), buf.size() * sizeof(float));
}

inline Matrix read_f32(const std::filesystem::path& path, Index rows, Index cols,
                       const std::string& what) {
  const auto bytes = read_file(path);
  const auto expected = static_cast<std::size_t>(rows * cols) * sizeof(float);
  if (bytes.size() != expected) {
    const auto row_bytes = static_cast<std::size_t>(rows) * sizeof(float);
    if (rows > 0 && bytes.size() % row_bytes == 0)
      throw FormatError(what + " holds " + std::to_string(bytes.size() / row_bytes) +
                            " columns but the manifest declares " + std::to_string(cols),
                        -1, static_cast<long>(bytes.size() / row_bytes));
    throw FormatError(what + " has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected));
  }
  Matrix m(rows, cols);
  const auto* f = reinterpret_cast<const unsigned char*>(bytes.data());
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) {
      float v;
      std::memcpy(&v, f + static_cast<std::size_t>(i * cols + j) * sizeof(float), sizeof(float));
      if (!std::isfinite(v))
        throw FormatError(what + " contains a non-finite value", static_cast<long>(i),
                          static_cast<long>(j));
      m(i, j) = static_cast<double>(v);
    }
  }
  return m;
}

}  // namespace detail

/// Writes `ds` into `dir` (created if needed). Feature values are stored as
/// 32-bit floats, so tables should already be float-representable.
inline void write_dataset(const IncompleteDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["n"] = ds.n();
  manifest["K"] = ds.K ? nlohmann::ordered_json(*ds.K) : nlohmann::ordered_json(nullptr);
  manifest["d_img"] = ds.d_img();
  manifest["d_txt"] = ds.d_txt();
  manifest["has_labels"] = ds.labels.has_value();
  manifest["missing_rate"] = ds.mask.missing_rate();
  manifest["seed"] = ds.seed;
  const std::string text = manifest.dump(2) + "\n";
  detail::write_file(dir / "manifest.json", text.data(), text.size());

  detail::write_f32(dir / "img.f32", ds.img);
  detail::write_f32(dir / "txt.f32", ds.txt);
  detail::write_file(dir / "mask.u8", ds.mask.raw().data(), ds.mask.size());
  std::error_code ignore;
  if (ds.labels)
    detail::write_file(dir / "labels.i64", ds.labels->data(), ds.labels->size() * sizeof(std::int64_t));
  else
    std::filesystem::remove(dir / "labels.i64", ignore);
}

/// Reads a dataset given its manifest path or its directory.
inline IncompleteDataset read_dataset(const std::filesystem::path& manifest_path) {
  auto manifest_file = manifest_path;
  if (std::filesystem::is_directory(manifest_file)) manifest_file /= "manifest.json";
  const auto dir = manifest_file.parent_path();

  nlohmann::json manifest;
  {
    const auto raw = detail::read_file(manifest_file);
    try {
      manifest = nlohmann::json::parse(raw.begin(), raw.end());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("malformed manifest " + manifest_file.string() + ": " + e.what());
    }
  }
  static const char* const kKeys[] = {"n", "K", "d_img", "d_txt", "has_labels", "missing_rate", "seed"};
  if (!manifest.is_object()) throw FormatError("manifest must be a JSON object");
  for (const char* key : kKeys)
    if (!manifest.contains(key)) throw FormatError(std::string("manifest lacks key '") + key + "'");
  if (manifest.size() != std::size(kKeys)) throw FormatError("manifest has unexpected keys");

  IncompleteDataset ds;
  Index n = 0, d_img = 0, d_txt = 0;
  bool has_labels = false;
  try {
    n = manifest.at("n").get<Index>();
    d_img = manifest.at("d_img").get<Index>();
    d_txt = manifest.at("d_txt").get<Index>();
    has_labels = manifest.at("has_labels").get<bool>();
    if (!manifest.at("K").is_null()) ds.K = manifest.at("K").get<std::int64_t>();
    ds.seed = manifest.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest has a field of the wrong type: ") + e.what());
  }
  if (n < 1 || d_img < 1 || d_txt < 1) throw FormatError("manifest sizes must be positive");

  ds.img = detail::read_f32(dir / "img.f32", n, d_img, "img.f32");
  ds.txt = detail::read_f32(dir / "txt.f32", n, d_txt, "txt.f32");

  const auto mask_bytes = detail::read_file(dir / "mask.u8");
  if (static_cast<Index>(mask_bytes.size()) != n)
    throw FormatError("mask.u8 has " + std::to_string(mask_bytes.size()) + " entries, expected " +
                      std::to_string(n));
  std::vector<std::uint8_t> flags(mask_bytes.begin(), mask_bytes.end());
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i] == 0 || flags[i] > 3)
      throw FormatError("mask.u8 has an invalid presence byte", static_cast<long>(i));
  ds.mask = PresenceMask(std::move(flags));

  if (has_labels) {
    const auto bytes = detail::read_file(dir / "labels.i64");
    if (static_cast<Index>(bytes.size()) != n * static_cast<Index>(sizeof(std::int64_t)))
      throw FormatError("labels.i64 has the wrong size");
    Labels labels(static_cast<std::size_t>(n));
    std::memcpy(labels.data(), bytes.data(), bytes.size());
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < 0 || (ds.K && labels[i] >= *ds.K))
        throw FormatError("labels.i64 holds an out-of-range label", static_cast<long>(i));
    ds.labels = std::move(labels);
  }
  try {
    ds.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(e.what());
  }
  return ds;
}

}  // namespace cigit
