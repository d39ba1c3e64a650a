#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "proprio/geometry.hpp"
#include "proprio/optics.hpp"
#include "proprio/readout.hpp"

namespace proprio::io {

using geometry::DeformationField;
using geometry::PointCloud;

// --- point clouds ------------------------------------------------------------

/// ASCII PLY with x,y,z declared as 32-bit floats. Values are printed with
/// 9 significant digits (float round-trip) so repeated runs are
/// byte-identical.
inline std::string to_ply(const PointCloud& cloud) {
  std::string out;
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
         "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char line[96];
  for (const auto& p : cloud.points) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", static_cast<float>(p.x),
                  static_cast<float>(p.y), static_cast<float>(p.z));
    out += line;
  }
  return out;
}

inline void write_ply(const std::string& path, const PointCloud& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_ply: cannot open " + path);
  f << to_ply(cloud);
}

inline PointCloud read_ply(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_ply: cannot open " + path);
  std::string line;
  std::size_t count = 0;
  bool in_header = true;
  if (!std::getline(f, line) || line != "ply") throw std::runtime_error("read_ply: not a PLY file");
  while (in_header && std::getline(f, line)) {
    if (line.rfind("element vertex", 0) == 0) count = std::stoul(line.substr(15));
    if (line == "end_header") in_header = false;
  }
  if (in_header) throw std::runtime_error("read_ply: missing end_header");
  PointCloud cloud;
  cloud.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(f, line)) throw std::runtime_error("read_ply: truncated vertex list");
    std::istringstream ss(line);
    geometry::Vec3 p;
    if (!(ss >> p.x >> p.y >> p.z)) throw std::runtime_error("read_ply: malformed vertex");
    cloud.points.push_back(p);
  }
  return cloud;
}

inline std::string to_cloud_csv(const PointCloud& cloud) {
  std::string out = "x_mm,y_mm,z_mm\n";
  char line[96];
  for (const auto& p : cloud.points) {
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g\n", p.x, p.y, p.z);
    out += line;
  }
  return out;
}

// --- fields -------------------------------------------------------------------

/// Row-major CSV grid with a northwest origin: the first CSV row holds the
/// y = W edge of the field.
inline std::string to_field_csv(const DeformationField& field) {
  std::string out;
  char cell[32];
  for (int r = field.g - 1; r >= 0; --r) {
    for (int c = 0; c < field.g; ++c) {
      std::snprintf(cell, sizeof(cell), "%.9g", field.at(r, c));
      out += cell;
      out += (c + 1 == field.g) ? '\n' : ',';
    }
  }
  return out;
}

inline void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

// --- normalization statistics ---------------------------------------------------

inline nlohmann::json norm_stats_to_json(const readout::NormStats& stats) {
  nlohmann::json j;
  j["version"] = 1;
  j["source"] = stats.source;
  j["p"] = stats.pd_count;
  j["l"] = stats.led_count;
  j["mean"] = stats.mean;
  j["std"] = stats.stddev;
  std::vector<int> degen(stats.degenerate.begin(), stats.degenerate.end());
  j["degenerate"] = degen;
  return j;
}

inline readout::NormStats norm_stats_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j["version"].get<int>() != 1)
    throw std::runtime_error("norm stats JSON: unsupported version");
  readout::NormStats stats;
  stats.source = j.at("source").get<std::string>();
  stats.pd_count = j.at("p").get<std::size_t>();
  stats.led_count = j.at("l").get<std::size_t>();
  stats.mean = j.at("mean").get<std::vector<double>>();
  stats.stddev = j.at("std").get<std::vector<double>>();
  auto degen = j.at("degenerate").get<std::vector<int>>();
  stats.degenerate.assign(degen.begin(), degen.end());
  if (stats.mean.size() != stats.stddev.size() || stats.mean.size() != stats.degenerate.size() ||
      stats.mean.size() != stats.pd_count * stats.led_count)
    throw std::runtime_error("norm stats JSON: inconsistent sizes");
  return stats;
}

// --- dataset container -------------------------------------------------------------
//
// A dataset is a directory:
//   layout.json      sensor layout (versioned)
//   params.json      optics/readout parameters (flat object)
//   frames.bin       concatenated encoded measurement frames
//   truth/NNNNNN.ply ground-truth point clouds
//   pairs.csv        truth_file,frame_index
//   samples.csv      per-sample metadata (family, pose, depth, delta_z)
//   norm_stats.json  channel statistics fitted on this dataset
//   manifest.json    config hash, seed, code version

struct DatasetPaths {
  std::filesystem::path root;

  std::filesystem::path layout() const { return root / "layout.json"; }
  std::filesystem::path params() const { return root / "params.json"; }
  std::filesystem::path frames() const { return root / "frames.bin"; }
  std::filesystem::path truth_dir() const { return root / "truth"; }
  std::filesystem::path pairs() const { return root / "pairs.csv"; }
  std::filesystem::path samples() const { return root / "samples.csv"; }
  std::filesystem::path norm_stats() const { return root / "norm_stats.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }

  std::string truth_name(std::size_t index) const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu.ply", index);
    return buf;
  }
};

struct SampleMeta {
  std::size_t index = 0;
  std::string family;
  double x = 0, y = 0, yaw_deg = 0, depth = 0, delta_z = 0;
};

struct Dataset {
  optics::SensorLayout layout;
  optics::OpticsParams params;
  std::vector<readout::MeasurementFrame> frames;
  std::vector<PointCloud> truth;
  std::vector<std::pair<std::string, std::size_t>> pairs;  // truth file -> frame index
  std::vector<SampleMeta> meta;
  readout::NormStats stats;
};

inline Dataset load_dataset(const std::string& dir) {
  DatasetPaths paths{dir};
  Dataset ds;
  ds.layout = optics::layout_from_json(nlohmann::json::parse(read_text(paths.layout().string())));
  ds.params = optics::params_from_json(nlohmann::json::parse(read_text(paths.params().string())));
  ds.frames = readout::decode_stream(read_bytes(paths.frames().string()));
  ds.stats = norm_stats_from_json(nlohmann::json::parse(read_text(paths.norm_stats().string())));

  std::istringstream pairs(read_text(paths.pairs().string()));
  std::string line;
  std::getline(pairs, line);  // header
  if (line != "truth_file,frame_index") throw std::runtime_error("pairs.csv: bad header");
  while (std::getline(pairs, line)) {
    if (line.empty()) continue;
    auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("pairs.csv: malformed row");
    ds.pairs.emplace_back(line.substr(0, comma), std::stoul(line.substr(comma + 1)));
  }
  ds.truth.reserve(ds.pairs.size());
  for (const auto& [file, _] : ds.pairs)
    ds.truth.push_back(read_ply((paths.truth_dir() / file).string()));

  std::istringstream meta(read_text(paths.samples().string()));
  std::getline(meta, line);
  if (line != "index,family,x_mm,y_mm,yaw_deg,depth_mm,delta_z_mm")
    throw std::runtime_error("samples.csv: bad header");
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    SampleMeta m;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    if (!(ss >> m.index >> m.family >> m.x >> m.y >> m.yaw_deg >> m.depth >> m.delta_z))
      throw std::runtime_error("samples.csv: malformed row");
    ds.meta.push_back(std::move(m));
  }
  return ds;
}

}  // namespace proprio::io
