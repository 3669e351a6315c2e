#pragma once

// Trained-model directory:
//   config.json      training configuration plus input widths
//   <net>.params     one JSON header line, then little-endian float32 blobs
//   centroids.f32    img, txt, fus centroid tables (3 x K x d_sub)
//   history.csv      iter,phase,loss
//
// Every learned value is float-representable after `finalize`, so loading a
// saved model reproduces it exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cigit/cgan.hpp"
#include "cigit/dataio.hpp"
#include "cigit/error.hpp"
#include "cigit/nn.hpp"
#include "cigit/trainer.hpp"

namespace cigit {

namespace detail {

inline nlohmann::json spec_to_json(const MLPSpec& s) {
  return {{"layer_dims", s.layer_dims},
          {"slope", s.slope},
          {"batchnorm", s.batchnorm},
          {"activate_last", s.activate_last}};
}

inline MLPSpec spec_from_json(const nlohmann::json& j) {
  MLPSpec s;
  s.layer_dims = j.at("layer_dims").get<std::vector<Index>>();
  s.slope = j.at("slope").get<double>();
  s.batchnorm = j.at("batchnorm").get<std::vector<bool>>();
  s.activate_last = j.at("activate_last").get<bool>();
  s.validate();
  return s;
}

class BlobWriter {
 public:
  void put(const double* p, Index count) {
    for (Index i = 0; i < count; ++i) data_.push_back(static_cast<float>(p[i]));
  }
  template <class M>
  void put(const M& m) { put(m.data(), m.size()); }
  const std::vector<float>& data() const { return data_; }

 private:
  std::vector<float> data_;
};

class BlobReader {
 public:
  BlobReader(const char* p, std::size_t bytes, std::string what)
      : p_(p), count_(bytes / sizeof(float)), what_(std::move(what)) {
    if (bytes % sizeof(float) != 0) throw FormatError(what_ + ": payload is not a whole number of floats");
  }
  void get(double* out, Index count) {
    if (pos_ + static_cast<std::size_t>(count) > count_) throw FormatError(what_ + ": payload too short");
    for (Index i = 0; i < count; ++i) {
      float v;
      std::memcpy(&v, p_ + (pos_++) * sizeof(float), sizeof(float));
      if (!std::isfinite(v)) throw FormatError(what_ + ": non-finite parameter");
      out[i] = static_cast<double>(v);
    }
  }
  template <class M>
  void get(M& m) { get(m.data(), m.size()); }
  void finish() const {
    if (pos_ != count_) throw FormatError(what_ + ": trailing data after the last parameter");
  }

 private:
  const char* p_;
  std::size_t count_, pos_ = 0;
  std::string what_;
};

inline void put_net(BlobWriter& w, const NetParams& net) {
  for (const auto& l : net.layers) {
    w.put(l.W);
    w.put(l.b);
    w.put(l.gamma);
    w.put(l.beta);
    w.put(l.running_mean);
    w.put(l.running_var);
  }
}

inline void get_net(BlobReader& r, NetParams& net) {
  for (auto& l : net.layers) {
    r.get(l.W);
    r.get(l.b);
    r.get(l.gamma);
    r.get(l.beta);
    r.get(l.running_mean);
    r.get(l.running_var);
  }
}

inline void write_params_file(const std::filesystem::path& path, const nlohmann::json& header,
                              const BlobWriter& blob) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(blob.data().data()),
            static_cast<std::streamsize>(blob.data().size() * sizeof(float)));
  if (!out) throw IoError("short write to " + path.string());
}

struct ParamsFile {
  nlohmann::json header;
  std::vector<char> bytes;
  std::size_t payload_offset = 0;
};

inline ParamsFile read_params_file(const std::filesystem::path& path) {
  ParamsFile f;
  f.bytes = read_file(path);
  const auto nl = std::find(f.bytes.begin(), f.bytes.end(), '\n');
  if (nl == f.bytes.end()) throw FormatError(path.string() + ": missing header line");
  try {
    f.header = nlohmann::json::parse(f.bytes.begin(), nl);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  f.payload_offset = static_cast<std::size_t>(nl - f.bytes.begin()) + 1;
  return f;
}

}  // namespace detail

inline void save_params(const NetParams& net, const std::filesystem::path& path) {
  detail::BlobWriter w;
  detail::put_net(w, net);
  detail::write_params_file(path, {{"kind", "mlp"}, {"spec", detail::spec_to_json(net.spec)}}, w);
}

inline NetParams load_params(const std::filesystem::path& path) {
  auto f = detail::read_params_file(path);
  try {
    if (f.header.at("kind") != "mlp") throw FormatError(path.string() + ": not an MLP parameter file");
    NetParams net = zero_params(detail::spec_from_json(f.header.at("spec")));
    detail::BlobReader r(f.bytes.data() + f.payload_offset, f.bytes.size() - f.payload_offset, path.string());
    detail::get_net(r, net);
    r.finish();
    return net;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void save_discriminator(const DiscriminatorParams& d, const std::filesystem::path& path) {
  detail::BlobWriter w;
  detail::put_net(w, d.trunk);
  w.put(d.minibatch.kernel);
  detail::put_net(w, d.head);
  const nlohmann::json header{{"kind", "discriminator"},
                              {"trunk", detail::spec_to_json(d.trunk.spec)},
                              {"head", detail::spec_to_json(d.head.spec)},
                              {"minibatch", {{"B", d.minibatch.B}, {"C", d.minibatch.C}}}};
  detail::write_params_file(path, header, w);
}

inline DiscriminatorParams load_discriminator(const std::filesystem::path& path) {
  auto f = detail::read_params_file(path);
  try {
    if (f.header.at("kind") != "discriminator")
      throw FormatError(path.string() + ": not a discriminator parameter file");
    DiscriminatorParams d;
    d.trunk = zero_params(detail::spec_from_json(f.header.at("trunk")));
    d.head = zero_params(detail::spec_from_json(f.header.at("head")));
    d.minibatch.B = f.header.at("minibatch").at("B").get<Index>();
    d.minibatch.C = f.header.at("minibatch").at("C").get<Index>();
    if (d.minibatch.B < 0 || d.minibatch.C < 1)
      throw FormatError(path.string() + ": bad minibatch kernel shape");
    d.minibatch.kernel.resize(d.trunk.spec.output_dim(), d.minibatch.B * d.minibatch.C);
    detail::BlobReader r(f.bytes.data() + f.payload_offset, f.bytes.size() - f.payload_offset, path.string());
    detail::get_net(r, d.trunk);
    r.get(d.minibatch.kernel);
    detail::get_net(r, d.head);
    r.finish();
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_history_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iter,phase,loss\n";
  char buf[64];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%.17g", r.loss);
    out << r.iter << ',' << r.phase << ',' << buf << '\n';
  }
  if (!out) throw IoError("short write to " + path.string());
}

inline std::vector<LossRecord> read_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "iter,phase,loss")
    throw FormatError(path.string() + ": unexpected header");
  std::vector<LossRecord> out;
  long row = 0;
  while (std::getline(in, line)) {
    ++row;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw FormatError(path.string() + ": malformed row", row);
    try {
      out.push_back({std::stoi(line.substr(0, a)), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
    } catch (const std::logic_error&) {
      throw FormatError(path.string() + ": malformed row", row);
    }
  }
  return out;
}

/// Writes `model` into `dir` (created if needed).
inline void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::ordered_json cfg = to_json(model.cfg);
  cfg["d_img"] = model.enc_img.spec.input_dim();
  cfg["d_txt"] = model.enc_txt.spec.input_dim();
  std::ofstream out(dir / "config.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "config.json").string());
  out << cfg.dump(2) << '\n';
  out.close();

  save_params(model.enc_img, dir / "enc_img.params");
  save_params(model.enc_txt, dir / "enc_txt.params");
  save_params(model.g12.gen, dir / "gen_12.params");
  save_params(model.g21.gen, dir / "gen_21.params");
  save_discriminator(model.g12.disc, dir / "disc_1.params");
  save_discriminator(model.g21.disc, dir / "disc_2.params");

  const auto& c = model.state.centroids;
  Matrix all(c[0].rows() * 3, c[0].cols());
  for (int m = 0; m < 3; ++m) all.middleRows(m * c[0].rows(), c[0].rows()) = c[static_cast<std::size_t>(m)];
  detail::write_f32(dir / "centroids.f32", all);
  write_history_csv(model.history, dir / "history.csv");
}

/// Reads a model written by `save_checkpoint`. The subspace state holds only
/// the centroids; call `infer` to obtain representations for a dataset.
inline TrainedModel load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory " + dir.string() + " not found");
  TrainedModel model;
  nlohmann::json cfg;
  try {
    std::ifstream in(dir / "config.json");
    if (!in) throw IoError("cannot open " + (dir / "config.json").string());
    cfg = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("config.json: " + std::string(e.what()));
  }
  if (!cfg.is_object()) throw FormatError("config.json must hold an object");
  cfg.erase("d_img");
  cfg.erase("d_txt");
  try {
    model.cfg = config_from_json(cfg);
    model.cfg.validate();
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("config.json: ") + e.what());
  }
  const auto& c = model.cfg;
  if (c.K < 2) throw FormatError("config.json: checkpoint has no resolved K");

  model.enc_img = load_params(dir / "enc_img.params");
  model.enc_txt = load_params(dir / "enc_txt.params");
  const NoiseSpec noise{c.d_gauss, c.K};
  model.g12 = {Direction::img_to_txt, noise, load_params(dir / "gen_12.params"), load_discriminator(dir / "disc_1.params")};
  model.g21 = {Direction::txt_to_img, noise, load_params(dir / "gen_21.params"), load_discriminator(dir / "disc_2.params")};
  for (const NetParams* g : {&model.g12.gen, &model.g21.gen})
    if (g->spec.input_dim() != c.d_gauss + c.K + c.d_sub || g->spec.output_dim() != c.d_sub)
      throw FormatError("generator shape does not match config.json");
  for (const NetParams* e : {&model.enc_img, &model.enc_txt})
    if (e->spec.output_dim() != c.d_sub) throw FormatError("encoder width does not match config.json");

  const Matrix all = detail::read_f32(dir / "centroids.f32", 3 * c.K, c.d_sub, "centroids.f32");
  for (int m = 0; m < 3; ++m) model.state.centroids[static_cast<std::size_t>(m)] = all.middleRows(m * c.K, c.K);
  model.history = read_history_csv(dir / "history.csv");
  return model;
}

}  // namespace cigit
