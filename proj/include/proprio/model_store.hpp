#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "proprio/checkpoint.hpp"
#include "proprio/io.hpp"
#include "proprio/model.hpp"
#include "proprio/optics.hpp"
#include "proprio/rng.hpp"

namespace proprio::model_store {

// A trained model directory holds everything inference needs:
//   ae.ckpt / ae.json     stage-1 weights and architecture
//   mlp.ckpt / mlp.json   stage-2 weights, input width, stats source
//   norm_stats.json       the training dataset's channel statistics
//   layout.json           sensor layout the dataset was generated with
//   latents.bin           cached stage-2 targets (restartability)
//   *_report.csv          per-epoch loss curves

struct ModelPaths {
  std::filesystem::path root;

  std::filesystem::path ae_ckpt() const { return root / "ae.ckpt"; }
  std::filesystem::path ae_meta() const { return root / "ae.json"; }
  std::filesystem::path mlp_ckpt() const { return root / "mlp.ckpt"; }
  std::filesystem::path mlp_meta() const { return root / "mlp.json"; }
  std::filesystem::path norm_stats() const { return root / "norm_stats.json"; }
  std::filesystem::path layout() const { return root / "layout.json"; }
  std::filesystem::path latents() const { return root / "latents.bin"; }
  std::filesystem::path ae_report() const { return root / "ae_report.csv"; }
  std::filesystem::path mlp_report() const { return root / "mlp_report.csv"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

inline std::string report_csv(const model::TrainReport& report) {
  std::string out = "epoch,train_loss,val_loss,lr\n";
  char line[160];
  for (const auto& e : report.epochs) {
    std::snprintf(line, sizeof(line), "%d,%.12g,%.12g,%.12g\n", e.epoch, e.train_loss, e.val_loss,
                  e.lr);
    out += line;
  }
  return out;
}

inline void save_autoencoder(const ModelPaths& paths, const model::PointNetAutoencoder& ae,
                             const model::TrainReport& report) {
  std::filesystem::create_directories(paths.root);
  tensor::save_checkpoint(paths.ae_ckpt().string(), ae.arch_id(), ae.parameters());
  nlohmann::json meta = {{"version", 1},
                         {"latent", ae.latent_dim},
                         {"m_pr", ae.m_pr},
                         {"extent", ae.extent},
                         {"descriptor", ae.descriptor()},
                         {"arch_id", ae.arch_id()},
                         {"best_epoch", report.best_epoch},
                         {"best_val", report.best_val}};
  io::write_text(paths.ae_meta().string(), meta.dump(2) + "\n");
  io::write_text(paths.ae_report().string(), report_csv(report));
}

inline model::PointNetAutoencoder load_autoencoder(const ModelPaths& paths) {
  auto meta = nlohmann::json::parse(io::read_text(paths.ae_meta().string()));
  if (meta.at("version").get<int>() != 1)
    throw std::runtime_error("ae.json: unsupported version");
  auto engine = make_engine(0);  // immediately overwritten by the checkpoint
  model::PointNetAutoencoder ae(meta.at("latent").get<std::size_t>(),
                                meta.at("m_pr").get<std::size_t>(),
                                meta.at("extent").get<double>(), engine);
  tensor::load_checkpoint(paths.ae_ckpt().string(), ae.arch_id(), ae.parameters());
  return ae;
}

inline void save_regressor(const ModelPaths& paths, const model::LatentRegressor& reg,
                           const model::TrainReport& report, const std::string& stats_source) {
  std::filesystem::create_directories(paths.root);
  tensor::save_checkpoint(paths.mlp_ckpt().string(), reg.arch_id(), reg.parameters());
  nlohmann::json meta = {{"version", 1},
                         {"in_dim", reg.in_dim},
                         {"latent", reg.latent_dim},
                         {"hidden", reg.hidden},
                         {"descriptor", reg.descriptor()},
                         {"arch_id", reg.arch_id()},
                         {"stats_source", stats_source},
                         {"best_epoch", report.best_epoch},
                         {"best_val", report.best_val}};
  io::write_text(paths.mlp_meta().string(), meta.dump(2) + "\n");
  io::write_text(paths.mlp_report().string(), report_csv(report));
}

inline model::LatentRegressor load_regressor(const ModelPaths& paths) {
  auto meta = nlohmann::json::parse(io::read_text(paths.mlp_meta().string()));
  if (meta.at("version").get<int>() != 1)
    throw std::runtime_error("mlp.json: unsupported version");
  auto engine = make_engine(0);
  model::LatentRegressor reg(meta.at("in_dim").get<std::size_t>(),
                             meta.at("latent").get<std::size_t>(), engine,
                             meta.at("hidden").get<std::size_t>());
  tensor::load_checkpoint(paths.mlp_ckpt().string(), reg.arch_id(), reg.parameters());
  return reg;
}

inline model::Pipeline load_pipeline(const std::string& dir) {
  ModelPaths paths{dir};
  model::Pipeline pipe;
  pipe.ae = load_autoencoder(paths);
  pipe.reg = load_regressor(paths);
  pipe.stats = io::norm_stats_from_json(
      nlohmann::json::parse(io::read_text(paths.norm_stats().string())));
  return pipe;
}

// --- latent target cache ------------------------------------------------------

inline void save_latents(const std::string& path, const std::vector<tensor::Tensor>& latents) {
  if (latents.empty()) throw std::invalid_argument("save_latents: empty");
  const std::uint64_t n = latents.size(), width = latents.front().numel();
  std::vector<std::uint8_t> out = {'P', 'R', 'L', 'T'};
  auto put_u64 = [&out](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  put_u64(n);
  put_u64(width);
  for (const auto& t : latents) {
    if (t.numel() != width) throw std::invalid_argument("save_latents: ragged rows");
    for (double v : t.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      put_u64(bits);
    }
  }
  std::uint32_t crc = crc32_ieee(out.data(), out.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  io::write_bytes(path, out);
}

inline std::vector<tensor::Tensor> load_latents(const std::string& path) {
  auto bytes = io::read_bytes(path);
  if (bytes.size() < 24) throw std::runtime_error("latents.bin: truncated");
  if (bytes[0] != 'P' || bytes[1] != 'R' || bytes[2] != 'L' || bytes[3] != 'T')
    throw std::runtime_error("latents.bin: bad magic");
  std::uint32_t stored = 0;
  for (int i = 3; i >= 0; --i) stored = (stored << 8) | bytes[bytes.size() - 4 + i];
  if (crc32_ieee(bytes.data(), bytes.size() - 4) != stored)
    throw std::runtime_error("latents.bin: CRC mismatch");
  auto get_u64 = [&bytes](std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[at + i];
    return v;
  };
  const std::uint64_t n = get_u64(4), width = get_u64(12);
  if (bytes.size() != 24 + n * width * 8)
    throw std::runtime_error("latents.bin: size mismatch");
  std::vector<tensor::Tensor> out;
  out.reserve(n);
  std::size_t at = 20;
  for (std::uint64_t i = 0; i < n; ++i) {
    tensor::Tensor t({static_cast<std::size_t>(width)});
    for (std::uint64_t c = 0; c < width; ++c, at += 8) {
      std::uint64_t bits = get_u64(at);
      std::memcpy(&t.data[c], &bits, sizeof(double));
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace proprio::model_store
