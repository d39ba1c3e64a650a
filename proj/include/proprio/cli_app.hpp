#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "proprio/datagen.hpp"
#include "proprio/importance.hpp"
#include "proprio/io.hpp"
#include "proprio/model.hpp"
#include "proprio/model_store.hpp"
#include "proprio/optics.hpp"
#include "proprio/readout.hpp"
#include "proprio/version.hpp"

namespace proprio::cli {

// Exit codes: 0 success, 2 configuration error, 3 data error,
// 4 training divergence, 1 anything else.
inline constexpr int kOk = 0;
inline constexpr int kRuntimeError = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kDataError = 3;
inline constexpr int kDivergence = 4;

namespace detail {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json load_config_file(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  nlohmann::json j = nlohmann::json::parse(io::read_text(path));
  if (!j.is_object() || !j.contains("version") || j["version"].get<int>() != 1)
    throw CLI::ValidationError("--config", "config file must be a version-1 JSON object");
  return j;
}

/// Flags override config-file values: an option not given on the command
/// line picks up the value stored under its long name (without dashes).
template <class T>
void overlay(const CLI::App& app, const nlohmann::json& cfg, const std::string& flag,
             const std::string& key, T& value) {
  if (app.count(flag) == 0 && cfg.contains(key)) value = cfg.at(key).get<T>();
}

inline std::string config_hash(const nlohmann::json& j) {
  auto s = j.dump();
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x",
                crc32_ieee(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  return buf;
}

inline void write_manifest(const std::string& out_dir, const std::string& command,
                           const nlohmann::json& effective, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  nlohmann::json manifest = {{"version", 1},
                             {"command", command},
                             {"config", effective},
                             {"config_hash", config_hash(effective)},
                             {"seed", seed},
                             {"code_version", kVersion}};
  io::write_text((std::filesystem::path(out_dir) / "manifest.json").string(),
                 manifest.dump(2) + "\n");
}

inline io::Dataset load_dataset_or_throw(const std::string& dir) {
  try {
    return io::load_dataset(dir);
  } catch (const std::exception& e) {
    throw DataError(std::string("dataset '") + dir + "': " + e.what());
  }
}

/// Test-set samples normalized with the *model's* training statistics.
inline std::vector<model::PairedSample> samples_with_stats(const io::Dataset& ds,
                                                           const readout::NormStats& stats) {
  std::vector<model::PairedSample> out;
  out.reserve(ds.pairs.size());
  for (std::size_t j = 0; j < ds.pairs.size(); ++j) {
    model::PairedSample s;
    const auto frame_index = ds.pairs[j].second;
    if (frame_index >= ds.frames.size()) throw DataError("dataset pair references missing frame");
    auto pre = readout::preprocess(ds.frames[frame_index]);
    if (pre.rows * pre.cols != stats.channel_count())
      throw DataError("dataset channel count does not match the model's statistics");
    s.feature = readout::normalize(pre, stats);
    s.truth = ds.truth[j];
    s.delta_z_mm = geometry::delta_z(s.truth);
    s.tag = j < ds.meta.size() ? ds.meta[j].family : "";
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<std::vector<double>> feature_matrix(const std::vector<model::PairedSample>& samples) {
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.feature.v);
  return out;
}

inline std::vector<std::size_t> parse_size_list(const std::string& csv) {
  std::vector<std::size_t> out;
  std::size_t at = 0;
  while (at < csv.size()) {
    auto comma = csv.find(',', at);
    if (comma == std::string::npos) comma = csv.size();
    out.push_back(std::stoul(csv.substr(at, comma - at)));
    at = comma + 1;
  }
  if (out.empty()) throw CLI::ValidationError("list", "expected a comma-separated list");
  return out;
}

inline std::vector<std::string> parse_order_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t at = 0;
  while (at < csv.size()) {
    auto comma = csv.find(',', at);
    if (comma == std::string::npos) comma = csv.size();
    auto name = csv.substr(at, comma - at);
    if (name != "natural" && name != "sage_desc" && name != "sage_asc")
      throw CLI::ValidationError("--orders", "unknown order: " + name);
    out.push_back(name);
    at = comma + 1;
  }
  if (out.empty()) throw CLI::ValidationError("--orders", "expected at least one order");
  return out;
}

inline void copy_any_file(const std::filesystem::path& from, const std::filesystem::path& to) {
  io::write_text(to.string(), io::read_text(from.string()));
}

inline std::string csv_bins(const model::EvalSummary& summary) {
  std::string out = "bin_lo_mm,bin_hi_mm,count,min,q1,median,q3,max,mean,std\n";
  char line[256];
  for (const auto& b : summary.bins) {
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", b.lo,
                  b.hi, b.count, b.min, b.q1, b.median, b.q3, b.max, b.mean, b.stddev);
    out += line;
  }
  return out;
}

inline tensor::TrainConfig stage1_config(int batch, int epochs, double lr, int plateau_patience,
                                         double plateau_factor, int early_stopping,
                                         std::uint64_t seed) {
  tensor::TrainConfig c;
  c.batch_size = batch;
  c.max_epochs = epochs;
  c.optimizer = tensor::OptimizerKind::adam;
  c.lr0 = lr;
  c.scheduler = tensor::SchedulerKind::plateau;
  c.plateau_factor = plateau_factor;
  c.plateau_patience = plateau_patience;
  c.early_stopping_patience = early_stopping;
  c.seed = seed;
  return c;
}

inline tensor::TrainConfig stage2_config(int batch, int epochs, double lr, int t_max,
                                         int early_stopping, std::uint64_t seed) {
  tensor::TrainConfig c;
  c.batch_size = batch;
  c.max_epochs = epochs;
  c.optimizer = tensor::OptimizerKind::sgd_momentum;
  c.lr0 = lr;
  c.scheduler = tensor::SchedulerKind::cosine;
  c.cosine_t_max = t_max;
  c.early_stopping_patience = early_stopping;
  c.seed = seed;
  return c;
}

// --- subcommand handlers ------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::string out;
};

inline void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
  cmd->add_option("--config", args.config_path, "JSON config file (flags override it)");
  cmd->add_option("--seed", args.seed, "master seed for all stochastic choices");
  cmd->add_option("--jobs", args.jobs, "parallel workers for fan-out work");
  auto* out = cmd->add_option("--out", args.out, "output directory");
  if (out_required) out->required();
}

inline int cmd_gen_data(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                        std::size_t n, std::string mix_csv, bool no_noise, int grid, int stride) {
  datagen::GenConfig gen;
  gen.n_samples = n;
  gen.seed = common.seed;
  gen.noise = !no_noise;
  gen.grid = grid;
  gen.stride = stride;
  overlay(cmd, cfg, "--n", "n", gen.n_samples);
  overlay(cmd, cfg, "--grid", "grid", gen.grid);
  overlay(cmd, cfg, "--stride", "stride", gen.stride);
  overlay(cmd, cfg, "--mix", "mix", mix_csv);
  if (!mix_csv.empty()) {
    gen.mix.clear();
    std::size_t at = 0;
    while (at < mix_csv.size()) {
      auto comma = mix_csv.find(',', at);
      if (comma == std::string::npos) comma = mix_csv.size();
      gen.mix.push_back(mix_csv.substr(at, comma - at));
      at = comma + 1;
    }
  }
  for (const auto& fam : gen.mix) geometry::indenter_shape_from_string(fam);  // validate early

  auto summary = datagen::generate_dataset(gen, common.out, common.jobs);
  std::printf("dataset %s: %zu samples, %zu frames\n", summary.dataset_id.c_str(),
              summary.n_samples, summary.n_frames);
  std::printf("delta_z mm: mean %.2f std %.2f range [%.2f, %.2f]\n", summary.dz_mean,
              summary.dz_std, summary.dz_min, summary.dz_max);
  return kOk;
}

inline int cmd_train_ae(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                        std::string data, std::size_t latent, std::size_t m_pr, int epochs,
                        int batch, double lr, int early_stopping, double val_fraction) {
  overlay(cmd, cfg, "--data", "data", data);
  overlay(cmd, cfg, "--latent", "latent", latent);
  overlay(cmd, cfg, "--m-pr", "m_pr", m_pr);
  overlay(cmd, cfg, "--epochs", "epochs", epochs);
  overlay(cmd, cfg, "--batch", "batch", batch);
  overlay(cmd, cfg, "--lr", "lr", lr);

  auto ds = load_dataset_or_throw(data);
  auto samples = datagen::dataset_to_samples(ds);
  auto engine = make_engine(common.seed, 0xae);
  model::PointNetAutoencoder ae(latent, m_pr, ds.layout.extent, engine);
  auto config = stage1_config(batch, epochs, lr, 3, 0.2, early_stopping, common.seed);
  auto report = model::train_autoencoder(ae, samples, config, val_fraction);

  model_store::ModelPaths paths{common.out};
  model_store::save_autoencoder(paths, ae, report);
  copy_any_file(io::DatasetPaths{data}.norm_stats(), paths.norm_stats());
  copy_any_file(io::DatasetPaths{data}.layout(), paths.layout());
  nlohmann::json effective = {{"data", data},       {"latent", latent},
                              {"m_pr", m_pr},       {"epochs", epochs},
                              {"batch", batch},     {"lr", lr},
                              {"val_fraction", val_fraction}};
  write_manifest(common.out, "train-ae", effective, common.seed);
  std::printf("stage-1 done: %zu epochs, best val %.6g (epoch %d)\n", report.epochs.size(),
              report.best_val, report.best_epoch);
  return kOk;
}

inline int cmd_train_mlp(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                         std::string data, std::string ae_dir, int epochs, int batch, double lr,
                         int t_max, int early_stopping, double val_fraction) {
  overlay(cmd, cfg, "--data", "data", data);
  overlay(cmd, cfg, "--ae", "ae", ae_dir);
  overlay(cmd, cfg, "--epochs", "epochs", epochs);
  if (t_max <= 0) t_max = epochs;

  auto ds = load_dataset_or_throw(data);
  auto samples = datagen::dataset_to_samples(ds);
  model_store::ModelPaths ae_paths{ae_dir};
  auto ae = model_store::load_autoencoder(ae_paths);

  model_store::ModelPaths out_paths{common.out};
  std::filesystem::create_directories(out_paths.root);

  // stage-2 targets, cached so the stage is independently restartable
  std::vector<tensor::Tensor> latents;
  const auto cache = out_paths.latents().string();
  bool reused = false;
  if (std::filesystem::exists(cache)) {
    try {
      auto loaded = model_store::load_latents(cache);
      if (loaded.size() == samples.size() && loaded.front().numel() == ae.latent_dim) {
        latents = std::move(loaded);
        reused = true;
      }
    } catch (const std::exception&) {
      // stale or damaged cache: recompute below
    }
  }
  if (latents.empty()) {
    latents = model::compute_latent_targets(ae, samples);
    model_store::save_latents(cache, latents);
  }

  auto feats = feature_matrix(samples);
  auto engine = make_engine(common.seed, 0x351);
  model::LatentRegressor reg(feats.front().size(), ae.latent_dim, engine);
  auto config = stage2_config(batch, epochs, lr, t_max, early_stopping, common.seed);
  auto report = model::train_regressor(reg, feats, latents, config, val_fraction);

  if (out_paths.root != ae_paths.root) {
    copy_any_file(ae_paths.ae_ckpt(), out_paths.ae_ckpt());
    copy_any_file(ae_paths.ae_meta(), out_paths.ae_meta());
    if (std::filesystem::exists(ae_paths.ae_report())) copy_any_file(ae_paths.ae_report(), out_paths.ae_report());
  }
  copy_any_file(io::DatasetPaths{data}.norm_stats(), out_paths.norm_stats());
  copy_any_file(io::DatasetPaths{data}.layout(), out_paths.layout());
  model_store::save_regressor(out_paths, reg, report, ds.stats.source);

  nlohmann::json effective = {{"data", data},   {"ae", ae_dir},         {"epochs", epochs},
                              {"batch", batch}, {"lr", lr},             {"t_max", t_max},
                              {"reused_latent_cache", reused}, {"val_fraction", val_fraction}};
  write_manifest(common.out, "train-mlp", effective, common.seed);
  std::printf("stage-2 done: %zu epochs, best val MSE %.6g (epoch %d)%s\n", report.epochs.size(),
              report.best_val, report.best_epoch, reused ? " [latent cache reused]" : "");
  return kOk;
}

inline int cmd_eval(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                    std::string model_dir, std::string data, std::size_t max_maps) {
  overlay(cmd, cfg, "--model", "model", model_dir);
  overlay(cmd, cfg, "--data", "data", data);

  auto pipe = model_store::load_pipeline(model_dir);
  auto ds = load_dataset_or_throw(data);
  auto samples = samples_with_stats(ds, pipe.stats);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(common.out) / "nn_maps");
  fs::create_directories(fs::path(common.out) / "recon");

  std::vector<double> cd(samples.size()), dz(samples.size()), nnd(samples.size());
  std::string sample_csv = "index,delta_z_mm,cd_mm,nnd_max_mm\n";
  char line[160];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto pred = pipe.reconstruct(samples[i].feature);
    cd[i] = model::chamfer_eval_mm(samples[i].truth, pred);
    dz[i] = samples[i].delta_z_mm;
    auto map = model::nn_error_map(samples[i].truth, pred);
    nnd[i] = map.nnd_max;
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g\n", i, dz[i], cd[i], map.nnd_max);
    sample_csv += line;
    if (i < max_maps) {
      std::string map_csv = "x_mm,y_mm,z_mm,nn_dist_mm\n";
      for (std::size_t k = 0; k < pred.size(); ++k) {
        std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g,%.9g\n", pred.points[k].x,
                      pred.points[k].y, pred.points[k].z, map.distances[k]);
        map_csv += line;
      }
      char name[32];
      std::snprintf(name, sizeof(name), "%06zu.csv", i);
      io::write_text((fs::path(common.out) / "nn_maps" / name).string(), map_csv);
      std::snprintf(name, sizeof(name), "%06zu.ply", i);
      io::write_ply((fs::path(common.out) / "recon" / name).string(), pred);
    }
  }

  auto summary = model::evaluate(cd, dz);
  io::write_text((fs::path(common.out) / "eval_bins.csv").string(), csv_bins(summary));
  io::write_text((fs::path(common.out) / "eval_samples.csv").string(), sample_csv);
  std::string hist = "bin_lo_mm,bin_hi_mm,count\n";
  for (std::size_t k = 0; k < summary.histogram.size(); ++k) {
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%zu\n", k * summary.hist_bin_width,
                  (k + 1) * summary.hist_bin_width, summary.histogram[k]);
    hist += line;
  }
  io::write_text((fs::path(common.out) / "histogram.csv").string(), hist);
  nlohmann::json sj = {{"count", summary.count},   {"mean_mm", summary.mean},
                       {"median_mm", summary.median}, {"std_mm", summary.stddev},
                       {"model", model_dir},       {"data", data}};
  io::write_text((fs::path(common.out) / "eval_summary.json").string(), sj.dump(2) + "\n");

  nlohmann::json effective = {{"model", model_dir}, {"data", data}, {"max_maps", max_maps}};
  write_manifest(common.out, "eval", effective, common.seed);
  std::printf("eval: %zu samples, cd mean %.3f mm median %.3f mm std %.3f mm\n", summary.count,
              summary.mean, summary.median, summary.stddev);
  for (const auto& b : summary.bins)
    if (b.count)
      std::printf("  dz [%5.2f, %5.2f): n=%-5zu mean %.3f mm median %.3f mm\n", b.lo, b.hi,
                  b.count, b.mean, b.median);
  return kOk;
}

inline int cmd_sweep(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                     std::string data, std::string test, std::string latents_csv,
                     std::string mprs_csv, int epochs, int batch, double lr, int early_stopping) {
  overlay(cmd, cfg, "--data", "data", data);
  overlay(cmd, cfg, "--test", "test", test);
  overlay(cmd, cfg, "--latents", "latents", latents_csv);
  overlay(cmd, cfg, "--m-prs", "m_prs", mprs_csv);
  overlay(cmd, cfg, "--epochs", "epochs", epochs);

  auto latents = parse_size_list(latents_csv);
  auto m_prs = parse_size_list(mprs_csv);
  auto train_ds = load_dataset_or_throw(data);
  auto test_ds = load_dataset_or_throw(test);
  auto train_samples = datagen::dataset_to_samples(train_ds);
  auto test_samples = samples_with_stats(test_ds, train_ds.stats);

  auto config = stage1_config(batch, epochs, lr, 3, 0.2, early_stopping, common.seed);
  auto cells = model::sweep(latents, m_prs, train_samples, test_samples, config, train_ds.stats,
                            train_ds.layout.extent, common.jobs);

  std::filesystem::create_directories(common.out);
  std::string csv = "latent,m_pr,mean_mm,std_mm,status,error\n";
  char line[320];
  for (const auto& c : cells) {
    std::snprintf(line, sizeof(line), "%zu,%zu,%.9g,%.9g,%s,%s\n", c.latent, c.m_pr, c.mean_mm,
                  c.std_mm, c.failed ? "failed" : "ok", c.error.c_str());
    csv += line;
  }
  io::write_text((std::filesystem::path(common.out) / "sweep.csv").string(), csv);
  auto best = model::best_cell(cells);
  nlohmann::json bj = {{"latent", cells[best].latent},
                       {"m_pr", cells[best].m_pr},
                       {"mean_mm", cells[best].mean_mm},
                       {"std_mm", cells[best].std_mm}};
  io::write_text((std::filesystem::path(common.out) / "sweep_best.json").string(),
                 bj.dump(2) + "\n");

  nlohmann::json effective = {{"data", data},     {"test", test}, {"latents", latents_csv},
                              {"m_prs", mprs_csv}, {"epochs", epochs}};
  write_manifest(common.out, "sweep", effective, common.seed);
  for (const auto& c : cells)
    std::printf("L=%-5zu M_pr=%-5zu %s mean %.3f mm std %.3f mm\n", c.latent, c.m_pr,
                c.failed ? "FAILED" : "ok", c.mean_mm, c.std_mm);
  std::printf("best: L=%zu M_pr=%zu (%.3f mm)\n", cells[best].latent, cells[best].m_pr,
              cells[best].mean_mm);
  return kOk;
}

inline void write_sage_outputs(const std::string& out_dir, const importance::SageReport& report,
                               const optics::SensorLayout& layout, const std::string& kind) {
  std::string csv = "group_kind,group_index,phi,stderr\n";
  std::string joined = "group_kind,group_index,phi,stderr,x_mm,y_mm\n";
  char line[200];
  for (std::size_t g = 0; g < report.phi.size(); ++g) {
    std::snprintf(line, sizeof(line), "%s,%zu,%.9g,%.9g\n", kind.c_str(), report.group_index[g],
                  report.phi[g], report.stderr_phi[g]);
    csv += line;
    const auto& pos = kind == "LED" ? layout.leds[report.group_index[g]]
                                    : layout.pds[report.group_index[g]];
    std::snprintf(line, sizeof(line), "%s,%zu,%.9g,%.9g,%.9g,%.9g\n", kind.c_str(),
                  report.group_index[g], report.phi[g], report.stderr_phi[g], pos.x, pos.y);
    joined += line;
  }
  auto base = std::filesystem::path(out_dir) / ("sage_" + std::string(kind == "LED" ? "led" : "pd"));
  io::write_text(base.string() + ".csv", csv);
  io::write_text(base.string() + "_xy.csv", joined);
}

inline int cmd_sage(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                    std::string model_dir, std::string data, std::string kind,
                    std::size_t permutations, std::size_t background, std::size_t eval_count) {
  overlay(cmd, cfg, "--model", "model", model_dir);
  overlay(cmd, cfg, "--data", "data", data);

  auto pipe = model_store::load_pipeline(model_dir);
  auto ds = load_dataset_or_throw(data);
  auto samples = samples_with_stats(ds, pipe.stats);
  auto layout = optics::layout_from_json(
      nlohmann::json::parse(io::read_text(model_store::ModelPaths{model_dir}.layout().string())));

  auto feats = feature_matrix(samples);
  auto targets = model::compute_latent_targets(pipe.ae, samples);

  importance::SageOptions opt;
  opt.n_permutations = permutations;
  opt.background_count = background;
  opt.eval_count = eval_count;
  opt.seed = common.seed;

  std::filesystem::create_directories(common.out);
  const std::size_t p = pipe.stats.pd_count, l = pipe.stats.led_count;
  if (kind == "led" || kind == "both") {
    auto report = importance::sage(pipe.reg, importance::led_groups(p, l), feats, targets, feats, opt);
    write_sage_outputs(common.out, report, layout, "LED");
    std::printf("LED sage: u(full)=%.6g, top group %zu\n", report.u_full,
                report.group_index[importance::rank_groups(report, true)[0]]);
  }
  if (kind == "pd" || kind == "both") {
    auto report = importance::sage(pipe.reg, importance::pd_groups(p, l), feats, targets, feats, opt);
    write_sage_outputs(common.out, report, layout, "PD");
    std::printf("PD sage: u(full)=%.6g, top group %zu\n", report.u_full,
                report.group_index[importance::rank_groups(report, true)[0]]);
  }

  nlohmann::json effective = {{"model", model_dir},       {"data", data},
                              {"kind", kind},             {"permutations", permutations},
                              {"background", background}, {"eval_count", eval_count}};
  write_manifest(common.out, "sage", effective, common.seed);
  return kOk;
}

inline int cmd_ablate(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                      std::string model_dir, std::string data, std::string test, std::string kind,
                      std::string k_csv, std::string orders_csv, int epochs, int batch, double lr,
                      std::size_t permutations, std::size_t background, std::size_t eval_count) {
  overlay(cmd, cfg, "--model", "model", model_dir);
  overlay(cmd, cfg, "--data", "data", data);
  overlay(cmd, cfg, "--test", "test", test);
  overlay(cmd, cfg, "--k", "k", k_csv);

  auto pipe = model_store::load_pipeline(model_dir);
  auto train_ds = load_dataset_or_throw(data);
  auto test_ds = load_dataset_or_throw(test);
  auto train_samples = samples_with_stats(train_ds, pipe.stats);
  auto test_samples = samples_with_stats(test_ds, pipe.stats);

  const std::size_t p = pipe.stats.pd_count, l = pipe.stats.led_count;
  auto groups = kind == "pd" ? importance::pd_groups(p, l) : importance::led_groups(p, l);

  std::vector<std::size_t> k_values;
  if (k_csv.empty())
    for (std::size_t k = 1; k <= groups.size(); ++k) k_values.push_back(k);
  else
    k_values = parse_size_list(k_csv);

  auto feats = feature_matrix(train_samples);
  auto targets = model::compute_latent_targets(pipe.ae, train_samples);

  importance::SageOptions opt;
  opt.n_permutations = permutations;
  opt.background_count = background;
  opt.eval_count = eval_count;
  opt.seed = common.seed;
  auto test_feats = feature_matrix(test_samples);
  auto test_targets = model::compute_latent_targets(pipe.ae, test_samples);
  auto sage_report = importance::sage(pipe.reg, groups, test_feats, test_targets, feats, opt);

  std::vector<double> baseline_cd;
  auto baseline = model::evaluate_pipeline(pipe, test_samples, &baseline_cd);

  auto config = stage2_config(batch, epochs, lr, epochs, epochs, common.seed);
  std::map<std::string, std::vector<importance::InclusionPoint>> curves;
  for (const auto& order_name : parse_order_list(orders_csv)) {
    std::vector<std::size_t> order;
    if (order_name == "natural") {
      order.resize(groups.size());
      std::iota(order.begin(), order.end(), 0);
    } else {
      order = importance::rank_groups(sage_report, order_name == "sage_desc");
    }
    curves[order_name] = importance::progressive_inclusion(pipe.ae, groups, order, feats, targets,
                                                           test_samples, k_values, config);
  }

  std::filesystem::create_directories(common.out);
  std::string csv = "order,k,mean_cd_mm,latent_mse\n";
  char line[160];
  for (const auto& [name, curve] : curves)
    for (const auto& pt : curve) {
      std::snprintf(line, sizeof(line), "%s,%zu,%.9g,%.9g\n", name.c_str(), pt.k, pt.mean_cd_mm,
                    pt.latent_mse);
      csv += line;
    }
  io::write_text((std::filesystem::path(common.out) / ("ablate_" + kind + ".csv")).string(), csv);

  nlohmann::json summary = {{"kind", kind},
                            {"baseline_mean_mm", baseline.mean},
                            {"groups", groups.size()}};
  for (const auto& [name, curve] : curves)
    summary["plateau_k"][name] = importance::plateau_k(curve, baseline.mean);
  io::write_text((std::filesystem::path(common.out) / "ablate_summary.json").string(),
                 summary.dump(2) + "\n");

  nlohmann::json effective = {{"model", model_dir}, {"data", data},     {"test", test},
                              {"kind", kind},       {"k", k_csv},       {"orders", orders_csv},
                              {"epochs", epochs},   {"batch", batch},   {"lr", lr}};
  write_manifest(common.out, "ablate", effective, common.seed);
  std::printf("ablate %s: baseline %.3f mm\n", kind.c_str(), baseline.mean);
  for (const auto& [name, curve] : curves) {
    std::printf("  %-10s:", name.c_str());
    for (const auto& pt : curve) std::printf(" K=%zu %.3f", pt.k, pt.mean_cd_mm);
    std::printf("\n");
  }
  return kOk;
}


inline int cmd_bend_characterize(const CommonArgs& common, const nlohmann::json& cfg,
                                 const CLI::App& cmd, double step_deg, double max_deg, int grid,
                                 bool write_fields) {
  overlay(cmd, cfg, "--step", "step", step_deg);
  overlay(cmd, cfg, "--max-angle", "max_angle", max_deg);
  if (step_deg <= 0.0) throw CLI::ValidationError("--step", "step must be positive");

  auto layout = optics::default_layout();
  optics::OpticsParams params;
  // aligned pair: west-edge LED level with the center PD; transverse pair:
  // south-edge LED whose path runs along the bend rulings
  const std::size_t aligned_led = 26, transverse_led = 4, center_pd = 2;

  std::filesystem::create_directories(common.out);
  std::string csv = "theta_deg,aligned,transverse,aligned_rel,transverse_rel\n";
  char line[200];
  double aligned0 = 0.0, transverse0 = 0.0;
  std::size_t rows = 0;
  for (double theta = 0.0; theta <= max_deg + 1e-9; theta += step_deg) {
    auto field = geometry::bend(theta, {grid, layout.extent});
    double a = optics::intensity(field, layout, params, aligned_led)[center_pd];
    double t = optics::intensity(field, layout, params, transverse_led)[center_pd];
    if (rows == 0) {
      aligned0 = a;
      transverse0 = t;
    }
    std::snprintf(line, sizeof(line), "%.9g,%.9g,%.9g,%.9g,%.9g\n", theta, a, t, a / aligned0,
                  t / transverse0);
    csv += line;
    if (write_fields) {
      char name[40];
      std::snprintf(name, sizeof(name), "field_%03d.csv", static_cast<int>(theta));
      io::write_text((std::filesystem::path(common.out) / name).string(), io::to_field_csv(field));
    }
    ++rows;
  }
  io::write_text((std::filesystem::path(common.out) / "bend_characterize.csv").string(), csv);

  nlohmann::json effective = {{"step", step_deg}, {"max_angle", max_deg}, {"grid", grid},
                              {"write_fields", write_fields}};
  write_manifest(common.out, "bend-characterize", effective, common.seed);
  std::printf("bend characterization: %zu angles written\n", rows);
  return kOk;
}

inline int cmd_export(const CommonArgs& common, const nlohmann::json& cfg, const CLI::App& cmd,
                      std::string data, std::string model_dir) {
  overlay(cmd, cfg, "--data", "data", data);
  overlay(cmd, cfg, "--model", "model", model_dir);

  auto ds = load_dataset_or_throw(data);
  auto samples = datagen::dataset_to_samples(ds);
  namespace fs = std::filesystem;
  fs::create_directories(common.out);

  std::string features = "index";
  for (std::size_t ch = 0; ch < ds.stats.channel_count(); ++ch) {
    char h[16];
    std::snprintf(h, sizeof(h), ",ch_%03zu", ch);
    features += h;
  }
  features += "\n";
  char cell[40];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(cell, sizeof(cell), "%zu", i);
    features += cell;
    for (double v : samples[i].feature.v) {
      std::snprintf(cell, sizeof(cell), ",%.9g", v);
      features += cell;
    }
    features += "\n";
  }
  io::write_text((fs::path(common.out) / "features.csv").string(), features);

  std::string dzcsv = "index,family,delta_z_mm\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(cell, sizeof(cell), "%zu,", i);
    dzcsv += cell;
    dzcsv += samples[i].tag;
    std::snprintf(cell, sizeof(cell), ",%.9g\n", samples[i].delta_z_mm);
    dzcsv += cell;
  }
  io::write_text((fs::path(common.out) / "delta_z.csv").string(), dzcsv);

  std::string truth_csv_dir = (fs::path(common.out) / "truth_csv").string();
  fs::create_directories(truth_csv_dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.csv", i);
    io::write_text((fs::path(truth_csv_dir) / name).string(), io::to_cloud_csv(samples[i].truth));
  }

  if (!model_dir.empty()) {
    auto pipe = model_store::load_pipeline(model_dir);
    auto eval_samples = samples_with_stats(ds, pipe.stats);
    fs::create_directories(fs::path(common.out) / "recon");
    std::string rcsv = "index,cd_mm,nnd_max_mm\n";
    for (std::size_t i = 0; i < eval_samples.size(); ++i) {
      auto pred = pipe.reconstruct(eval_samples[i].feature);
      auto map = model::nn_error_map(eval_samples[i].truth, pred);
      std::snprintf(cell, sizeof(cell), "%zu,%.9g,%.9g\n", i,
                    model::chamfer_eval_mm(eval_samples[i].truth, pred), map.nnd_max);
      rcsv += cell;
      char name[32];
      std::snprintf(name, sizeof(name), "%06zu.ply", i);
      io::write_ply((fs::path(common.out) / "recon" / name).string(), pred);
    }
    io::write_text((fs::path(common.out) / "recon_samples.csv").string(), rcsv);
  }

  nlohmann::json effective = {{"data", data}, {"model", model_dir}};
  write_manifest(common.out, "export", effective, common.seed);
  std::printf("export: %zu samples written\n", samples.size());
  return kOk;
}

}  // namespace detail

inline int run(int argc, const char* const* argv) {
  CLI::App app{"software twin of an optical-waveguide membrane shape sensor"};
  app.require_subcommand(1);

  using detail::CommonArgs;
  namespace d = detail;

  // gen-data
  CommonArgs gen_common;
  std::size_t gen_n = 2000;
  std::string gen_mix;
  bool gen_no_noise = false;
  int gen_grid = 80, gen_stride = 4;
  auto* gen = app.add_subcommand("gen-data", "synthesize a paired dataset");
  d::add_common(gen, gen_common);
  gen->add_option("--n", gen_n, "number of paired samples");
  gen->add_option("--mix", gen_mix, "comma list of indenter families");
  gen->add_flag("--no-noise", gen_no_noise, "disable readout noise");
  gen->add_option("--grid", gen_grid, "field grid nodes per axis");
  gen->add_option("--stride", gen_stride, "truth point cloud stride");

  // train-ae
  CommonArgs ae_common;
  std::string ae_data;
  std::size_t ae_latent = 256, ae_m_pr = 1024;
  int ae_epochs = 100, ae_batch = 64, ae_early = 10;
  double ae_lr = 1e-3, ae_val_fraction = 0.1;
  auto* tae = app.add_subcommand("train-ae", "train the stage-1 point-cloud autoencoder");
  d::add_common(tae, ae_common);
  tae->add_option("--data", ae_data, "training dataset directory")->required();
  tae->add_option("--latent", ae_latent, "latent dimension L");
  tae->add_option("--m-pr", ae_m_pr, "predicted cloud size M_pr");
  tae->add_option("--epochs", ae_epochs, "max epochs");
  tae->add_option("--batch", ae_batch, "batch size");
  tae->add_option("--lr", ae_lr, "initial learning rate");
  tae->add_option("--early-stopping", ae_early, "early stopping patience");
  tae->add_option("--val-fraction", ae_val_fraction, "validation split fraction");

  // train-mlp
  CommonArgs mlp_common;
  std::string mlp_data, mlp_ae;
  int mlp_epochs = 100, mlp_batch = 64, mlp_tmax = 0, mlp_early = 10;
  double mlp_lr = 1e-3, mlp_val_fraction = 0.1;
  auto* tmlp = app.add_subcommand("train-mlp", "train the stage-2 PD-to-latent regressor");
  d::add_common(tmlp, mlp_common);
  tmlp->add_option("--data", mlp_data, "training dataset directory")->required();
  tmlp->add_option("--ae", mlp_ae, "directory holding the trained autoencoder")->required();
  tmlp->add_option("--epochs", mlp_epochs, "max epochs");
  tmlp->add_option("--batch", mlp_batch, "batch size");
  tmlp->add_option("--lr", mlp_lr, "initial learning rate");
  tmlp->add_option("--t-max", mlp_tmax, "cosine annealing horizon (default: epochs)");
  tmlp->add_option("--early-stopping", mlp_early, "early stopping patience");
  tmlp->add_option("--val-fraction", mlp_val_fraction, "validation split fraction");

  // eval
  CommonArgs eval_common;
  std::string eval_model, eval_data;
  std::size_t eval_max_maps = 8;
  auto* ev = app.add_subcommand("eval", "evaluate a trained pipeline on a dataset");
  d::add_common(ev, eval_common);
  ev->add_option("--model", eval_model, "model directory")->required();
  ev->add_option("--data", eval_data, "test dataset directory")->required();
  ev->add_option("--max-maps", eval_max_maps, "per-sample NN maps / clouds to write");

  // sweep
  CommonArgs sweep_common;
  std::string sweep_data, sweep_test, sweep_latents = "64,128,256", sweep_mprs = "256,1024";
  int sweep_epochs = 40, sweep_batch = 64, sweep_early = 8;
  double sweep_lr = 1e-3;
  auto* sw = app.add_subcommand("sweep", "hyperparameter sweep over L and M_pr");
  d::add_common(sw, sweep_common);
  sw->add_option("--data", sweep_data, "training dataset directory")->required();
  sw->add_option("--test", sweep_test, "test dataset directory")->required();
  sw->add_option("--latents", sweep_latents, "comma list of latent sizes");
  sw->add_option("--m-prs", sweep_mprs, "comma list of predicted cloud sizes");
  sw->add_option("--epochs", sweep_epochs, "max epochs per cell");
  sw->add_option("--batch", sweep_batch, "batch size");
  sw->add_option("--lr", sweep_lr, "initial learning rate");
  sw->add_option("--early-stopping", sweep_early, "early stopping patience");

  // sage
  CommonArgs sage_common;
  std::string sage_model, sage_data, sage_kind = "both";
  std::size_t sage_perms = 16, sage_bg = 16, sage_eval = 128;
  auto* sg = app.add_subcommand("sage", "grouped feature importance for the trained regressor");
  d::add_common(sg, sage_common);
  sg->add_option("--model", sage_model, "model directory")->required();
  sg->add_option("--data", sage_data, "evaluation dataset directory")->required();
  sg->add_option("--kind", sage_kind, "led | pd | both")
      ->check(CLI::IsMember({"led", "pd", "both"}));
  sg->add_option("--permutations", sage_perms, "sampled permutations");
  sg->add_option("--background", sage_bg, "background draws for marginalization");
  sg->add_option("--eval-count", sage_eval, "evaluation subset size (0 = all)");

  // ablate
  CommonArgs ab_common;
  std::string ab_model, ab_data, ab_test, ab_kind = "led", ab_k, ab_orders = "natural,sage_desc,sage_asc";
  int ab_epochs = 40, ab_batch = 64;
  double ab_lr = 1e-3;
  std::size_t ab_perms = 16, ab_bg = 16, ab_eval = 128;
  auto* ab = app.add_subcommand("ablate", "progressive feature-inclusion retraining");
  d::add_common(ab, ab_common);
  ab->add_option("--model", ab_model, "model directory")->required();
  ab->add_option("--data", ab_data, "training dataset directory")->required();
  ab->add_option("--test", ab_test, "test dataset directory")->required();
  ab->add_option("--kind", ab_kind, "led | pd")->check(CLI::IsMember({"led", "pd"}));
  ab->add_option("--k", ab_k, "comma list of K values (default: 1..group count)");
  ab->add_option("--orders", ab_orders, "comma list of inclusion orders");
  ab->add_option("--epochs", ab_epochs, "max epochs per reduced fit");
  ab->add_option("--batch", ab_batch, "batch size");
  ab->add_option("--lr", ab_lr, "initial learning rate");
  ab->add_option("--permutations", ab_perms, "sage permutations for the ranking");
  ab->add_option("--background", ab_bg, "sage background draws");
  ab->add_option("--eval-count", ab_eval, "sage evaluation subset size");

  // bend-characterize
  CommonArgs bend_common;
  double bend_step = 30.0, bend_max = 150.0;
  int bend_grid = 80;
  bool bend_fields = false;
  auto* bc = app.add_subcommand("bend-characterize", "PD response vs wall angle sweep");
  d::add_common(bc, bend_common);
  bc->add_option("--step", bend_step, "angle step in degrees");
  bc->add_option("--max-angle", bend_max, "final wall angle in degrees");
  bc->add_option("--grid", bend_grid, "field grid nodes per axis");
  bc->add_flag("--write-fields", bend_fields, "also write the height-field CSV grids");

  // export
  CommonArgs ex_common;
  std::string ex_data, ex_model;
  auto* ex = app.add_subcommand("export", "plots-ready CSV/PLY artifacts from a dataset");
  d::add_common(ex, ex_common);
  ex->add_option("--data", ex_data, "dataset directory")->required();
  ex->add_option("--model", ex_model, "optional model directory for reconstructions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (gen->parsed())
      return d::cmd_gen_data(gen_common, d::load_config_file(gen_common.config_path), *gen, gen_n,
                             gen_mix, gen_no_noise, gen_grid, gen_stride);
    if (tae->parsed())
      return d::cmd_train_ae(ae_common, d::load_config_file(ae_common.config_path), *tae, ae_data,
                             ae_latent, ae_m_pr, ae_epochs, ae_batch, ae_lr, ae_early,
                             ae_val_fraction);
    if (tmlp->parsed())
      return d::cmd_train_mlp(mlp_common, d::load_config_file(mlp_common.config_path), *tmlp,
                              mlp_data, mlp_ae, mlp_epochs, mlp_batch, mlp_lr, mlp_tmax, mlp_early,
                              mlp_val_fraction);
    if (ev->parsed())
      return d::cmd_eval(eval_common, d::load_config_file(eval_common.config_path), *ev,
                         eval_model, eval_data, eval_max_maps);
    if (sw->parsed())
      return d::cmd_sweep(sweep_common, d::load_config_file(sweep_common.config_path), *sw,
                          sweep_data, sweep_test, sweep_latents, sweep_mprs, sweep_epochs,
                          sweep_batch, sweep_lr, sweep_early);
    if (sg->parsed())
      return d::cmd_sage(sage_common, d::load_config_file(sage_common.config_path), *sg,
                         sage_model, sage_data, sage_kind, sage_perms, sage_bg, sage_eval);
    if (ab->parsed())
      return d::cmd_ablate(ab_common, d::load_config_file(ab_common.config_path), *ab, ab_model,
                           ab_data, ab_test, ab_kind, ab_k, ab_orders, ab_epochs, ab_batch, ab_lr,
                           ab_perms, ab_bg, ab_eval);
    if (bc->parsed())
      return d::cmd_bend_characterize(bend_common, d::load_config_file(bend_common.config_path),
                                      *bc, bend_step, bend_max, bend_grid, bend_fields);
    if (ex->parsed())
      return d::cmd_export(ex_common, d::load_config_file(ex_common.config_path), *ex, ex_data,
                           ex_model);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const detail::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kDataError;
  } catch (const model::TrainingDivergence& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntimeError;
  }
  return kConfigError;
}

}  // namespace proprio::cli
