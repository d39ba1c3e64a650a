#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <future>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "proprio/crc.hpp"
#include "proprio/geometry.hpp"
#include "proprio/io.hpp"
#include "proprio/model.hpp"
#include "proprio/optics.hpp"
#include "proprio/readout.hpp"
#include "proprio/rng.hpp"
#include "proprio/version.hpp"

namespace proprio::datagen {

using geometry::Indenter;
using geometry::IndenterShape;

/// Dataset synthesis settings. Poses are drawn uniformly over the central
/// 100 mm square (shrunk when a footprint would leave the interior), yaw
/// uniform, depth ~ normal(15, 5) clamped to [0, 25] mm.
struct GenConfig {
  std::size_t n_samples = 2000;
  std::vector<std::string> mix = {"sphere", "cylinder", "cube", "triangular_prism", "u_shape"};
  std::uint64_t seed = 0;
  bool noise = true;
  int grid = 80;
  double extent = 140.0;
  int stride = 4;
  double truth_rate_hz = 30.0;
  optics::OpticsParams params;  // sigma_noise zeroed when noise is off

  nlohmann::json to_json() const {
    return {{"version", 1},
            {"n_samples", n_samples},
            {"mix", mix},
            {"seed", seed},
            {"noise", noise},
            {"grid", grid},
            {"extent", extent},
            {"stride", stride},
            {"truth_rate_hz", truth_rate_hz},
            {"params", optics::to_json(params)}};
  }

  std::string hash() const {
    auto s = to_json().dump();
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%08x", crc32_ieee(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    return buf;
  }
};

inline double clamped_normal(std::mt19937_64& engine, double mean, double stddev, double lo,
                             double hi) {
  std::normal_distribution<double> dist(mean, stddev);
  return std::clamp(dist(engine), lo, hi);
}

inline double uniform(std::mt19937_64& engine, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(engine);
}

/// Draws one indenter: family from the mix, size jitter around the 30-60 mm
/// defaults, pose restricted so the contact footprint stays interior.
inline Indenter sample_indenter(std::mt19937_64& engine, const GenConfig& config) {
  if (config.mix.empty()) throw std::invalid_argument("sample_indenter: empty mix");
  std::uniform_int_distribution<std::size_t> pick(0, config.mix.size() - 1);
  Indenter it;
  it.shape = geometry::indenter_shape_from_string(config.mix[pick(engine)]);
  switch (it.shape) {
    case IndenterShape::sphere:
      it.radius = uniform(engine, 15.0, 25.0);
      break;
    case IndenterShape::cylinder:
      it.radius = uniform(engine, 10.0, 18.0);
      it.length = uniform(engine, 40.0, 65.0);
      break;
    case IndenterShape::cube:
      it.side = uniform(engine, 25.0, 45.0);
      break;
    case IndenterShape::triangular_prism:
      it.length = uniform(engine, 40.0, 65.0);
      it.apex_half_angle_deg = uniform(engine, 35.0, 55.0);
      break;
    case IndenterShape::u_shape:
      it.foot_width = uniform(engine, 10.0, 16.0);
      it.foot_length = uniform(engine, 35.0, 60.0);
      it.foot_gap = uniform(engine, 18.0, 30.0);
      break;
  }
  it.depth = clamped_normal(engine, 15.0, 5.0, 0.0, 25.0);
  it.yaw_deg = uniform(engine, 0.0, 360.0);
  const double c = 0.5 * config.extent, margin = 2.0;
  const double r = it.footprint_radius();
  const double lo = std::max(c - 50.0, r + margin);
  const double hi = std::min(c + 50.0, config.extent - r - margin);
  if (lo >= hi) throw std::invalid_argument("sample_indenter: footprint too large for membrane");
  it.x = uniform(engine, lo, hi);
  it.y = uniform(engine, lo, hi);
  return it;
}

struct GenSummary {
  std::size_t n_samples = 0;
  std::size_t n_frames = 0;
  double dz_mean = 0.0, dz_std = 0.0, dz_min = 0.0, dz_max = 0.0;
  std::string dataset_id;
};

/// Synthesizes the full dataset container under `out_dir`: indentation
/// fields, truth clouds at the configured stride, a 90 Hz emulated sensor
/// stream over the 30 Hz truth stream with software alignment, and the
/// channel statistics of the aligned frames. Deterministic per seed; field
/// solves fan out over `jobs` workers without affecting the output.
inline GenSummary generate_dataset(const GenConfig& config_in, const std::string& out_dir,
                                   std::size_t jobs = 1) {
  GenConfig config = config_in;
  if (!config.noise) config.params.sigma_noise = 0.0;
  config.params.validate();
  if (config.n_samples == 0) throw std::invalid_argument("generate_dataset: need n_samples >= 1");

  namespace fs = std::filesystem;
  io::DatasetPaths paths{out_dir};
  fs::create_directories(paths.truth_dir());

  const auto layout = optics::default_layout(config.extent, config.params.gamma);
  const geometry::FieldConfig field_config{config.grid, config.extent};

  // Draw all indenters up front on the master stream so pose sampling is
  // independent of how the solves are scheduled.
  std::vector<Indenter> indenters(config.n_samples);
  {
    auto engine = make_engine(config.seed, 0x1d0);
    for (auto& it : indenters) it = sample_indenter(engine, config);
  }

  std::vector<geometry::DeformationField> fields(config.n_samples);
  std::vector<Mat<double>> analogs(config.n_samples);
  {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= config.n_samples) return;
        fields[i] = geometry::indent(field_config, indenters[i]);
        analogs[i] = optics::scan(fields[i], layout, config.params);
      }
    };
    std::vector<std::future<void>> futs;
    for (std::size_t j = 0; j < std::max<std::size_t>(1, std::min(jobs, config.n_samples)); ++j)
      futs.push_back(std::async(std::launch::async, worker));
    for (auto& f : futs) f.get();
  }

  // Timeline: sensor frames tick at the TDM frame period; each truth frame
  // is captured 1 ms before its hold window ends, then aligned to the most
  // recent sensor frame.
  const auto sched = readout::schedule(layout.led_count());
  const auto sensor_period_us = static_cast<std::uint64_t>(sched.period_us);
  const auto truth_period_us = static_cast<std::uint64_t>(1e6 / config.truth_rate_hz);
  if (sensor_period_us + 1000 > truth_period_us)
    throw std::invalid_argument("generate_dataset: sensor must be faster than the truth stream");

  std::vector<std::uint64_t> truth_ts(config.n_samples);
  for (std::size_t j = 0; j < config.n_samples; ++j)
    truth_ts[j] = static_cast<std::uint64_t>(j) * truth_period_us + truth_period_us - 1000;
  const std::size_t n_frames = static_cast<std::size_t>(truth_ts.back() / sensor_period_us) + 1;
  std::vector<std::uint64_t> sensor_ts(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) sensor_ts[k] = k * sensor_period_us;

  std::vector<std::uint8_t> frames_bin;
  frames_bin.reserve(n_frames * readout::encoded_frame_size(layout.pd_count(), layout.led_count()));
  std::vector<readout::MeasurementFrame> frames(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) {
    const std::size_t field_idx =
        std::min<std::size_t>(config.n_samples - 1, sensor_ts[k] / truth_period_us);
    frames[k] = readout::digitize(analogs[field_idx], config.params, mix_seed(config.seed, k),
                                  static_cast<std::uint32_t>(k), sensor_ts[k]);
    auto bytes = readout::encode_frame(frames[k]);
    frames_bin.insert(frames_bin.end(), bytes.begin(), bytes.end());
  }
  io::write_bytes(paths.frames().string(), frames_bin);

  auto aligned = readout::align_streams(sensor_ts, truth_ts);
  if (aligned.size() != config.n_samples)
    throw std::logic_error("generate_dataset: alignment dropped truth frames");

  std::string pairs_csv = "truth_file,frame_index\n";
  std::string samples_csv = "index,family,x_mm,y_mm,yaw_deg,depth_mm,delta_z_mm\n";
  std::vector<double> dz(config.n_samples);
  std::vector<Mat<std::uint32_t>> paired_pre;
  paired_pre.reserve(config.n_samples);
  char line[256];
  for (std::size_t j = 0; j < config.n_samples; ++j) {
    auto cloud = geometry::to_pointcloud(fields[j], config.stride);
    auto name = paths.truth_name(j);
    io::write_ply((paths.truth_dir() / name).string(), cloud);
    dz[j] = geometry::delta_z(cloud);
    std::snprintf(line, sizeof(line), "%s,%zu\n", name.c_str(), aligned[j].sensor_index);
    pairs_csv += line;
    std::snprintf(line, sizeof(line), "%zu,%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", j,
                  geometry::to_string(indenters[j].shape), indenters[j].x, indenters[j].y,
                  indenters[j].yaw_deg, indenters[j].depth, dz[j]);
    samples_csv += line;
    paired_pre.push_back(readout::preprocess(frames[aligned[j].sensor_index]));
  }
  io::write_text(paths.pairs().string(), pairs_csv);
  io::write_text(paths.samples().string(), samples_csv);

  GenSummary summary;
  summary.n_samples = config.n_samples;
  summary.n_frames = n_frames;
  summary.dataset_id = config.hash();
  summary.dz_min = dz.front();
  summary.dz_max = dz.front();
  for (double v : dz) {
    summary.dz_mean += v;
    summary.dz_min = std::min(summary.dz_min, v);
    summary.dz_max = std::max(summary.dz_max, v);
  }
  summary.dz_mean /= static_cast<double>(dz.size());
  for (double v : dz) summary.dz_std += (v - summary.dz_mean) * (v - summary.dz_mean);
  summary.dz_std = std::sqrt(summary.dz_std / static_cast<double>(dz.size()));

  const auto stats = paired_pre.size() >= 2
                         ? readout::fit_norm(paired_pre, summary.dataset_id)
                         : readout::NormStats{};
  if (paired_pre.size() < 2)
    throw std::invalid_argument("generate_dataset: need at least 2 samples for norm stats");

  io::write_text(paths.layout().string(), optics::to_json(layout).dump(2) + "\n");
  io::write_text(paths.params().string(), optics::to_json(config.params).dump(2) + "\n");
  io::write_text(paths.norm_stats().string(), io::norm_stats_to_json(stats).dump(2) + "\n");

  nlohmann::json manifest = {{"version", 1},
                             {"kind", "dataset"},
                             {"config", config.to_json()},
                             {"config_hash", summary.dataset_id},
                             {"seed", config.seed},
                             {"code_version", kVersion}};
  io::write_text(paths.manifest().string(), manifest.dump(2) + "\n");
  return summary;
}

/// Reassembles training samples from a stored dataset: preprocess the
/// paired frame, normalize with the dataset's own statistics, pair with
/// the truth cloud.
inline std::vector<model::PairedSample> dataset_to_samples(const io::Dataset& ds) {
  std::vector<model::PairedSample> out;
  out.reserve(ds.pairs.size());
  for (std::size_t j = 0; j < ds.pairs.size(); ++j) {
    model::PairedSample s;
    const auto frame_index = ds.pairs[j].second;
    if (frame_index >= ds.frames.size())
      throw std::runtime_error("dataset: pair references missing frame");
    s.feature = readout::normalize(readout::preprocess(ds.frames[frame_index]), ds.stats);
    s.truth = ds.truth[j];
    s.delta_z_mm = geometry::delta_z(s.truth);
    s.tag = j < ds.meta.size() ? ds.meta[j].family : "";
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace proprio::datagen
