// Acceptance suite: runs every acceptance criterion at its stated tolerance
// and prints one pass/fail line per criterion. Exit code is the number of
// failed criteria.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "proprio/datagen.hpp"
#include "proprio/geometry.hpp"
#include "proprio/importance.hpp"
#include "proprio/io.hpp"
#include "proprio/model.hpp"
#include "proprio/model_store.hpp"
#include "proprio/optics.hpp"
#include "proprio/readout.hpp"
#include "proprio/rng.hpp"
#include "proprio/tensor.hpp"

namespace fs = std::filesystem;
using namespace proprio;
using geometry::PointCloud;
using geometry::Vec3;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run_criterion(int id, const std::string& name, double budget_s,
                   const std::function<Outcome()>& fn) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    outcome = fn();
  } catch (const std::exception& e) {
    outcome.pass = false;
    outcome.detail = std::string("exception: ") + e.what();
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0.0 && secs > budget_s) {
    outcome.pass = false;
    outcome.detail += " [exceeded runtime budget]";
  }
  std::printf("[%s] %2d. %-28s (%8.1f s)  %s\n", outcome.pass ? "PASS" : "FAIL", id, name.c_str(),
              secs, outcome.detail.c_str());
  std::fflush(stdout);
  if (!outcome.pass) ++g_failures;
}

std::string fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

// --- finite differences -------------------------------------------------------

double fd_max_error(const std::function<Var(Tape&)>& forward, const std::vector<Var>& params,
                    int probes_per_tensor = 0, std::uint64_t probe_seed = 1) {
  Tape tape;
  Var loss = forward(tape);
  for (const auto& p : params) p->zero_grad();
  tape.backward(loss);

  const double h = 1e-4;
  double worst = 0.0;
  auto engine = make_engine(probe_seed);
  for (const auto& p : params) {
    std::vector<std::size_t> picks;
    if (probes_per_tensor <= 0 || static_cast<std::size_t>(probes_per_tensor) >= p->value.numel()) {
      picks.resize(p->value.numel());
      std::iota(picks.begin(), picks.end(), 0);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, p->value.numel() - 1);
      for (int k = 0; k < probes_per_tensor; ++k) picks.push_back(pick(engine));
    }
    for (std::size_t k : picks) {
      const double keep = p->value[k];
      p->value[k] = keep + h;
      Tape tp;
      const double up = forward(tp)->value[0];
      p->value[k] = keep - h;
      Tape tm;
      const double down = forward(tm)->value[0];
      p->value[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[k];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({1.0, std::abs(analytic), std::abs(numeric)}));
    }
  }
  return worst;
}

Tensor rand_t(std::vector<std::size_t> shape, std::uint64_t seed, double stddev = 1.0) {
  auto engine = make_engine(seed);
  return Tensor::randn(std::move(shape), engine, stddev);
}

// --- brute-force oracles ---------------------------------------------------------

double brute_min_dist2(const Vec3& p, const PointCloud& cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& q : cloud.points) best = std::min(best, model::dist2(p, q));
  return best;
}

PointCloud random_cloud(std::mt19937_64& engine, std::size_t n) {
  std::uniform_real_distribution<double> u(0.0, 120.0);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.push_back({u(engine), u(engine), u(engine)});
  return c;
}

// --- shared pipeline state --------------------------------------------------------

struct SharedState {
  fs::path root;
  std::optional<model::Pipeline> pipeline;
  std::vector<model::PairedSample> train_samples;
  std::vector<model::PairedSample> test_samples;
  std::vector<std::vector<double>> train_features;
  std::vector<Tensor> latent_targets;
  double baseline_mean_mm = 0.0;
  std::optional<importance::SageReport> led_sage;
};

SharedState g_state;

constexpr std::size_t kTrainSamples = 2000;
constexpr std::size_t kTestSamples = 300;
constexpr std::size_t kLatent = 128;
constexpr std::size_t kMpr = 1024;

// --- criteria ---------------------------------------------------------------------

Outcome criterion_gradients() {
  double worst = 0.0;

  {  // linear + bias
    auto a = tensor::make_param(rand_t({4, 5}, 1));
    auto w = tensor::make_param(rand_t({5, 3}, 2));
    auto b = tensor::make_param(rand_t({3}, 3));
    Tensor target = rand_t({4, 3}, 4);
    worst = std::max(worst, fd_max_error(
        [&](Tape& t) { return sum_sq_diff(t, add_bias(t, matmul(t, a, w), b), target); },
        {a, w, b}));
  }
  {  // relu
    auto x = tensor::make_param(rand_t({6, 4}, 5));
    for (auto& v : x->value.data)
      if (std::abs(v) < 0.05) v = 0.3;
    Tensor target = rand_t({6, 4}, 6);
    worst = std::max(worst,
                     fd_max_error([&](Tape& t) { return sum_sq_diff(t, relu(t, x), target); }, {x}));
  }
  {  // shared pointwise mlp over a point set
    auto engine = make_engine(7);
    tensor::PointwiseMlp mlp({3, 8, 6}, engine);
    auto cloud = tensor::make_param(rand_t({10, 3}, 8));
    Tensor target = rand_t({10, 6}, 9);
    std::vector<Var> params{cloud};
    mlp.collect(params);
    worst = std::max(worst, fd_max_error(
        [&](Tape& t) { return sum_sq_diff(t, mlp.forward(t, cloud), target); }, params));
  }
  {  // global max pool
    auto x = tensor::make_param(rand_t({7, 5}, 10));
    Tensor target = rand_t({1, 5}, 11);
    worst = std::max(worst, fd_max_error(
        [&](Tape& t) { return sum_sq_diff(t, global_max_pool(t, x), target); }, {x}));
  }
  {  // transposed convolution
    auto x = tensor::make_param(rand_t({2, 3, 3}, 12));
    auto k = tensor::make_param(rand_t({2, 3, 3, 3}, 13, 0.5));
    auto b = tensor::make_param(rand_t({3}, 14));
    Tensor target = rand_t({3, 6, 6}, 15);
    worst = std::max(worst, fd_max_error(
        [&](Tape& t) { return sum_sq_diff(t, conv_transpose2d(t, x, k, b, 2, 1, 1), target); },
        {x, k, b}));
  }
  {  // reshape + transpose
    auto x = tensor::make_param(rand_t({4, 6}, 16));
    Tensor target = rand_t({3, 8}, 17);
    worst = std::max(worst, fd_max_error(
        [&](Tape& t) { return sum_sq_diff(t, reshape(t, transpose2d(t, x), {3, 8}), target); },
        {x}));
  }
  {  // full toy autoencoder, M = 16, L = 4, sampled probes per tensor
    auto engine = make_engine(18);
    model::PointNetAutoencoder ae(4, 16, 140.0, engine);
    auto cloud_engine = make_engine(19);
    PointCloud cloud = random_cloud(cloud_engine, 16);
    model::CloudScaler scaler{140.0};
    Tensor input = scaler.to_tensor(cloud);
    auto target = std::make_shared<const std::vector<Vec3>>(scaler.to_scaled_points(cloud));
    auto tree = std::make_shared<const model::KdTree3>(*target);
    auto params = ae.parameters();
    worst = std::max(worst, fd_max_error(
        [&](Tape& t) {
          Var in = tensor::make_const(input);
          return model::chamfer_sq_loss(t, ae.decode(t, ae.encode(t, in)), target, tree);
        },
        params, 10, 20));
  }

  return {worst < 1e-4, fmt("max relative error %.3g (tolerance 1e-4)", worst)};
}

Outcome criterion_chamfer_oracle() {
  auto engine = make_engine(21);
  std::uniform_int_distribution<std::size_t> size(1, 100);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    auto a = random_cloud(engine, size(engine));
    auto b = random_cloud(engine, size(engine));

    double slow_sq = 0.0;
    for (const auto& p : a.points) slow_sq += brute_min_dist2(p, b);
    for (const auto& q : b.points) slow_sq += brute_min_dist2(q, a);
    double fast_sq = model::chamfer_sq(a, b);
    worst = std::max(worst, std::abs(fast_sq - slow_sq) / std::max(1e-300, std::abs(slow_sq)));

    double s1 = 0.0, s2 = 0.0;
    for (const auto& p : b.points) s1 += std::sqrt(brute_min_dist2(p, a));
    for (const auto& q : a.points) s2 += std::sqrt(brute_min_dist2(q, b));
    double slow_eval = 0.5 * (s1 / b.size() + s2 / a.size());
    double fast_eval = model::chamfer_eval_mm(a, b);
    worst = std::max(worst, std::abs(fast_eval - slow_eval) / std::max(1e-300, slow_eval));

    auto map = model::nn_error_map(a, b);
    for (std::size_t i = 0; i < b.size(); ++i) {
      double slow = std::sqrt(brute_min_dist2(b.points[i], a));
      worst = std::max(worst, std::abs(map.distances[i] - slow) / std::max(1e-300, slow));
    }
  }
  return {worst < 1e-9, fmt("200 pairs, max relative deviation %.3g (tolerance 1e-9)", worst)};
}

Outcome criterion_directional_sensitivity() {
  auto layout = optics::default_layout();
  optics::OpticsParams params;
  const std::size_t aligned_led = 26, transverse_led = 4, center_pd = 2;
  std::vector<double> aligned, transverse;
  for (double theta : {0.0, 30.0, 60.0, 90.0, 120.0, 150.0}) {
    auto field = geometry::bend(theta);
    aligned.push_back(optics::intensity(field, layout, params, aligned_led)[center_pd]);
    transverse.push_back(optics::intensity(field, layout, params, transverse_led)[center_pd]);
  }
  bool monotone = true;
  double tv_aligned = 0.0, tv_transverse = 0.0;
  for (std::size_t k = 1; k < aligned.size(); ++k) {
    monotone = monotone && aligned[k] < aligned[k - 1];
    tv_aligned += std::abs(aligned[k] - aligned[k - 1]);
    tv_transverse += std::abs(transverse[k] - transverse[k - 1]);
  }
  double ratio = tv_transverse / tv_aligned;
  return {monotone && ratio < 0.2,
          fmt("aligned monotone %s, transverse/aligned variation %.3f (tolerance < 0.20)",
              monotone ? "yes" : "NO", ratio)};
}

Outcome criterion_repeatability() {
  auto layout = optics::default_layout();
  optics::OpticsParams params;
  geometry::DeformationField flat(80, 140.0);
  auto analog = optics::scan(flat, layout, params);

  const int n = 1000;
  std::vector<std::vector<std::uint32_t>> codes(n);
  for (int k = 0; k < n; ++k)
    codes[k] = readout::digitize(analog, params, mix_seed(404, k)).codes.data;

  const double band = 0.0035 * static_cast<double>(readout::kAdcMax);
  std::size_t inside = 0, total = 0;
  for (std::size_t ch = 0; ch < codes[0].size(); ++ch) {
    std::vector<double> vals(n);
    for (int k = 0; k < n; ++k) vals[k] = codes[k][ch];
    std::vector<double> sorted = vals;
    std::sort(sorted.begin(), sorted.end());
    double median = 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    for (double v : vals) {
      ++total;
      if (std::abs(v - median) <= band) ++inside;
    }
  }
  double frac = static_cast<double>(inside) / static_cast<double>(total);
  return {frac >= 0.99, fmt("%.2f%% of 1000-frame repeats within +-0.35%% full scale (need >= 99%%)",
                            100.0 * frac)};
}

Outcome criterion_end_to_end() {
  const auto train_dir = (g_state.root / "train").string();
  const auto test_dir = (g_state.root / "test").string();

  datagen::GenConfig gen;
  gen.n_samples = kTrainSamples;
  gen.seed = 101;
  gen.noise = true;
  gen.grid = 80;
  gen.stride = 4;
  datagen::generate_dataset(gen, train_dir, 2);
  gen.n_samples = kTestSamples;
  gen.seed = 202;  // disjoint seed: disjoint poses
  datagen::generate_dataset(gen, test_dir, 2);

  auto train_ds = io::load_dataset(train_dir);
  auto test_ds = io::load_dataset(test_dir);
  g_state.train_samples = datagen::dataset_to_samples(train_ds);

  // test features are normalized with the training statistics
  g_state.test_samples.clear();
  for (std::size_t j = 0; j < test_ds.pairs.size(); ++j) {
    model::PairedSample s;
    s.feature = readout::normalize(readout::preprocess(test_ds.frames[test_ds.pairs[j].second]),
                                   train_ds.stats);
    s.truth = test_ds.truth[j];
    s.delta_z_mm = geometry::delta_z(s.truth);
    g_state.test_samples.push_back(std::move(s));
  }

  auto engine = make_engine(11, 0xae);
  model::PointNetAutoencoder ae(kLatent, kMpr, train_ds.layout.extent, engine);
  tensor::TrainConfig cfg1;
  cfg1.batch_size = 64;
  cfg1.max_epochs = 30;
  cfg1.early_stopping_patience = 8;
  cfg1.seed = 11;
  auto report1 = model::train_autoencoder(ae, g_state.train_samples, cfg1);

  g_state.latent_targets = model::compute_latent_targets(ae, g_state.train_samples);
  g_state.train_features.clear();
  for (const auto& s : g_state.train_samples) g_state.train_features.push_back(s.feature.v);

  auto engine2 = make_engine(12, 0x351);
  model::LatentRegressor reg(g_state.train_features.front().size(), kLatent, engine2);
  tensor::TrainConfig cfg2;
  cfg2.batch_size = 64;
  cfg2.max_epochs = 100;
  cfg2.optimizer = tensor::OptimizerKind::sgd_momentum;
  cfg2.scheduler = tensor::SchedulerKind::cosine;
  cfg2.cosine_t_max = 100;
  cfg2.early_stopping_patience = 15;
  cfg2.seed = 12;
  auto report2 = model::train_regressor(reg, g_state.train_features, g_state.latent_targets, cfg2);

  g_state.pipeline = model::Pipeline{ae, reg, train_ds.stats};
  model_store::ModelPaths paths{(g_state.root / "model").string()};
  model_store::save_autoencoder(paths, ae, report1);
  model_store::save_regressor(paths, reg, report2, train_ds.stats.source);

  auto summary = model::evaluate_pipeline(*g_state.pipeline, g_state.test_samples);
  g_state.baseline_mean_mm = summary.mean;

  double worst_bin = 0.0;
  for (const auto& b : summary.bins)
    if (b.count > 0 && b.lo < 25.0) worst_bin = std::max(worst_bin, b.mean);
  bool bins_ok = worst_bin <= 1.5 * summary.mean;
  bool mean_ok = summary.mean <= 2.0;
  return {mean_ok && bins_ok,
          fmt("held-out mean cd %.3f mm (need <= 2.0), worst bin mean %.3f <= 1.5x global: %s "
              "[%zu train / %zu test, ae epochs %zu]",
              summary.mean, worst_bin, bins_ok ? "yes" : "NO", g_state.train_samples.size(),
              g_state.test_samples.size(), report1.epochs.size())};
}

Outcome criterion_overfit() {
  datagen::GenConfig gen;
  gen.n_samples = 10;
  gen.seed = 303;
  gen.noise = false;
  gen.grid = 80;
  gen.stride = 5;  // M_gt = 256
  const auto dir = (g_state.root / "overfit").string();
  datagen::generate_dataset(gen, dir, 2);
  auto ds = io::load_dataset(dir);
  auto samples = datagen::dataset_to_samples(ds);

  auto engine = make_engine(31);
  model::PointNetAutoencoder ae(64, 256, ds.layout.extent, engine);
  tensor::TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.max_epochs = 200;
  cfg.early_stopping_patience = 200;
  cfg.seed = 32;
  model::train_autoencoder(ae, samples, cfg, 0.0);

  model::CloudScaler scaler{ds.layout.extent};
  double train_cd = 0.0;
  for (const auto& s : samples) {
    Tape tape;
    auto out = ae.decode(tape, ae.encode(tape, tensor::make_const(scaler.to_tensor(s.truth))));
    train_cd += model::chamfer_eval_mm(s.truth, scaler.to_cloud_mm(out->value));
  }
  train_cd /= samples.size();

  auto targets = model::compute_latent_targets(ae, samples);
  std::vector<std::vector<double>> feats;
  for (const auto& s : samples) feats.push_back(s.feature.v);
  auto engine2 = make_engine(33);
  model::LatentRegressor reg(feats.front().size(), 64, engine2);
  tensor::TrainConfig cfg2;
  cfg2.batch_size = 10;
  cfg2.max_epochs = 4000;
  cfg2.optimizer = tensor::OptimizerKind::sgd_momentum;
  cfg2.scheduler = tensor::SchedulerKind::cosine;
  cfg2.cosine_t_max = 4000;
  cfg2.early_stopping_patience = 4000;
  cfg2.seed = 34;
  auto report = model::train_regressor(reg, feats, targets, cfg2, 0.0);

  bool ok = train_cd < 0.5 && report.best_val < 1e-4;
  return {ok, fmt("train cd %.4f mm (need < 0.5), latent MSE %.3g (need < 1e-4)", train_cd,
                  report.best_val)};
}

Outcome criterion_sage_exactness() {
  // toy exactness: 3 groups, permutation estimator vs exhaustive Shapley
  auto toy_engine = make_engine(41);
  std::vector<double> w = {0.9, -0.4, 0.25, 0.7, -0.6, 0.15};
  model::LatentRegressor toy(6, 1, toy_engine, 8);
  {
    const double big = 100.0;
    toy.l1.weight->value.fill(0.0);
    toy.l1.bias->value.fill(0.0);
    for (std::size_t d = 0; d < 6; ++d) toy.l1.weight->value.at2(d, 0) = w[d];
    toy.l1.bias->value[0] = big;
    toy.l2.weight->value.fill(0.0);
    toy.l2.bias->value.fill(0.0);
    toy.l2.weight->value.at2(0, 0) = 1.0;
    toy.l3.weight->value.fill(0.0);
    toy.l3.bias->value.fill(0.0);
    toy.l3.weight->value.at2(0, 0) = 1.0;
    toy.l3.bias->value[0] = -big;
  }
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::vector<double>> feats(20, std::vector<double>(6));
  for (auto& row : feats)
    for (auto& v : row) v = u(toy_engine);
  std::vector<Tensor> targets;
  for (const auto& v : feats) {
    Tensor t({1});
    for (std::size_t d = 0; d < 6; ++d) t[0] += w[d] * v[d];
    targets.push_back(t);
  }
  std::vector<importance::FeatureGroup> groups(3);
  for (std::size_t g = 0; g < 3; ++g)
    groups[g] = {importance::GroupKind::led, g, {2 * g, 2 * g + 1}};

  importance::SageOptions opt;
  opt.enumerate_all = true;
  opt.background_count = 20;
  auto report = importance::sage(toy, groups, feats, targets, feats, opt);

  importance::PredictivePower u_fn(toy, feats, targets, feats, opt);
  auto mask_of = [&](unsigned gm) {
    std::vector<std::uint8_t> m(6, 0);
    for (std::size_t g = 0; g < 3; ++g)
      if (gm & (1u << g))
        for (auto i : groups[g].members) m[i] = 1;
    return m;
  };
  double toy_err = 0.0;
  for (std::size_t g = 0; g < 3; ++g) {
    double phi = 0.0;
    for (unsigned s = 0; s < 8; ++s) {
      if (s & (1u << g)) continue;
      int size = __builtin_popcount(s);
      double weight = std::tgamma(size + 1) * std::tgamma(3 - size) / std::tgamma(4.0);
      double us = s == 0 ? 0.0 : u_fn(mask_of(s));
      phi += weight * (u_fn(mask_of(s | (1u << g))) - us);
    }
    toy_err = std::max(toy_err, std::abs(report.phi[g] - phi));
  }

  if (!g_state.pipeline)
    return {false, fmt("toy err %.3g but trained pipeline unavailable", toy_err)};

  // efficiency on the real pipeline, both partitions
  importance::SageOptions real_opt;
  real_opt.n_permutations = 16;
  real_opt.background_count = 8;
  real_opt.eval_count = 96;
  real_opt.seed = 55;
  std::vector<std::vector<double>> test_feats;
  for (const auto& s : g_state.test_samples) test_feats.push_back(s.feature.v);
  auto test_targets = model::compute_latent_targets(g_state.pipeline->ae, g_state.test_samples);

  const std::size_t p = g_state.pipeline->stats.pd_count, l = g_state.pipeline->stats.led_count;
  double worst_gap_se = 0.0;
  for (auto groups_real : {importance::led_groups(p, l), importance::pd_groups(p, l)}) {
    auto r = importance::sage(g_state.pipeline->reg, groups_real, test_feats, test_targets,
                              g_state.train_features, real_opt);
    if (groups_real.front().kind == importance::GroupKind::led) g_state.led_sage = r;
    double total = 0.0, se2 = 0.0;
    for (std::size_t g = 0; g < r.phi.size(); ++g) {
      total += r.phi[g];
      se2 += r.stderr_phi[g] * r.stderr_phi[g];
    }
    double gap = std::abs(total - (r.u_full - r.u_empty));
    double se = std::max(std::sqrt(se2), 1e-12);
    worst_gap_se = std::max(worst_gap_se, gap / se);
  }
  bool ok = toy_err < 1e-6 && worst_gap_se <= 3.0;
  return {ok, fmt("toy enumeration err %.3g (need < 1e-6), efficiency gap %.3g s.e. (need <= 3)",
                  toy_err, worst_gap_se)};
}

Outcome criterion_ablation_dominance() {
  if (!g_state.pipeline || !g_state.led_sage)
    return {false, "trained pipeline or LED sage ranking unavailable"};

  const std::size_t p = g_state.pipeline->stats.pd_count, l = g_state.pipeline->stats.led_count;
  auto groups = importance::led_groups(p, l);
  auto desc = importance::rank_groups(*g_state.led_sage, true);
  auto asc = importance::rank_groups(*g_state.led_sage, false);
  std::vector<std::size_t> k_small = {1, 2, 3, 4, 5};
  std::vector<std::size_t> k_full = {groups.size()};

  int desc_wins = 0;
  std::vector<double> full_runs;
  for (int seed = 0; seed < 5; ++seed) {
    tensor::TrainConfig cfg;
    cfg.batch_size = 64;
    cfg.max_epochs = 30;
    cfg.optimizer = tensor::OptimizerKind::sgd_momentum;
    cfg.scheduler = tensor::SchedulerKind::cosine;
    cfg.cosine_t_max = 30;
    cfg.early_stopping_patience = 30;
    cfg.seed = 700 + seed;

    auto curve_desc = importance::progressive_inclusion(
        g_state.pipeline->ae, groups, desc, g_state.train_features, g_state.latent_targets,
        g_state.test_samples, k_small, cfg);
    auto curve_asc = importance::progressive_inclusion(
        g_state.pipeline->ae, groups, asc, g_state.train_features, g_state.latent_targets,
        g_state.test_samples, k_small, cfg);
    double mean_desc = 0.0, mean_asc = 0.0;
    for (std::size_t i = 0; i < k_small.size(); ++i) {
      mean_desc += curve_desc[i].mean_cd_mm;
      mean_asc += curve_asc[i].mean_cd_mm;
    }
    if (mean_desc <= mean_asc) ++desc_wins;

    auto full = importance::progressive_inclusion(g_state.pipeline->ae, groups, desc,
                                                  g_state.train_features, g_state.latent_targets,
                                                  g_state.test_samples, k_full, cfg);
    full_runs.push_back(full[0].mean_cd_mm);
  }

  double mean_full = 0.0, sd_full = 0.0;
  for (double v : full_runs) mean_full += v;
  mean_full /= full_runs.size();
  for (double v : full_runs) sd_full += (v - mean_full) * (v - mean_full);
  sd_full = std::sqrt(sd_full / (full_runs.size() - 1));
  double margin = 3.0 * sd_full + 0.05 * g_state.baseline_mean_mm;
  bool full_ok = std::abs(mean_full - g_state.baseline_mean_mm) <= margin;

  bool ok = desc_wins >= 4 && full_ok;
  return {ok, fmt("sage-desc beat sage-asc in %d/5 seeds (need >= 4); full-K %.3f mm vs baseline "
                  "%.3f mm within %.3f: %s",
                  desc_wins, mean_full, g_state.baseline_mean_mm, margin, full_ok ? "yes" : "NO")};
}

Outcome criterion_timing_model() {
  auto sched = readout::schedule(30, 180.0, 1, 5500.0, 90.0);
  bool active_ok = std::abs(sched.active_us - 5580.0) < 1e-9;
  bool rate_ok = sched.rate_hz >= 90.0 && sched.period_us <= 11100.0;
  std::size_t frame_bytes = readout::encoded_frame_size(5, 30);
  double transfer_ms = static_cast<double>(frame_bytes) * 8.0 / 2e6 * 1e3;
  bool size_ok = frame_bytes == 484 && transfer_ms < 2.5;
  return {active_ok && rate_ok && size_ok,
          fmt("active scan %.2f ms, period %.2f ms (90 Hz %s), frame %zu B -> %.3f ms at 2 Mbit/s",
              sched.active_us / 1e3, sched.period_us / 1e3, rate_ok ? "ok" : "NO", frame_bytes,
              transfer_ms)};
}

Outcome criterion_codec() {
  auto engine = make_engine(61);
  std::uniform_int_distribution<std::uint32_t> code(0, readout::kAdcMax);
  std::uniform_int_distribution<std::size_t> pd(1, 8), ld(1, 40);

  for (int trial = 0; trial < 10000; ++trial) {
    readout::MeasurementFrame f;
    std::size_t p = pd(engine), l = ld(engine);
    f.codes = Mat<std::uint32_t>(p, l);
    f.dark.resize(p);
    for (auto& c : f.codes.data) c = code(engine);
    for (auto& d : f.dark) d = code(engine);
    f.frame_index = static_cast<std::uint32_t>(engine());
    f.t_start_us = engine();
    auto bytes = readout::encode_frame(f);
    if (!(readout::decode_frame(bytes) == f))
      return {false, fmt("round-trip mismatch at trial %d", trial)};
  }

  // every single-bit corruption of a representative frame is detected
  readout::MeasurementFrame f;
  f.codes = Mat<std::uint32_t>(5, 30);
  f.dark.resize(5);
  for (auto& c : f.codes.data) c = code(engine);
  for (auto& d : f.dark) d = code(engine);
  f.frame_index = 77;
  f.t_start_us = 123456;
  auto bytes = readout::encode_frame(f);
  std::size_t undetected = 0;
  for (std::size_t byte = 0; byte < bytes.size(); ++byte)
    for (int bit = 0; bit < 8; ++bit) {
      auto corrupt = bytes;
      corrupt[byte] ^= static_cast<std::uint8_t>(1u << bit);
      try {
        (void)readout::decode_frame(corrupt);
        ++undetected;  // decoded without error: corruption slipped through
      } catch (const readout::CodecError&) {
      }
    }
  return {undetected == 0, fmt("10000 random frames bit-exact; %zu/%zu single-bit corruptions "
                               "undetected (need 0)",
                               undetected, bytes.size() * 8)};
}

Outcome criterion_determinism() {
  // gen-data twice at a reduced scale
  datagen::GenConfig gen;
  gen.n_samples = 40;
  gen.seed = 71;
  auto dir_a = (g_state.root / "det_a").string();
  auto dir_b = (g_state.root / "det_b").string();
  datagen::generate_dataset(gen, dir_a, 1);
  datagen::generate_dataset(gen, dir_b, 1);
  bool gen_ok = io::read_bytes(dir_a + "/frames.bin") == io::read_bytes(dir_b + "/frames.bin") &&
                io::read_text(dir_a + "/norm_stats.json") == io::read_text(dir_b + "/norm_stats.json");

  // both training stages twice at a reduced scale
  auto ds = io::load_dataset(dir_a);
  auto samples = datagen::dataset_to_samples(ds);
  auto run_stages = [&]() {
    auto engine = make_engine(72);
    model::PointNetAutoencoder ae(8, 64, ds.layout.extent, engine);
    tensor::TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 3;
    cfg.seed = 73;
    model::train_autoencoder(ae, samples, cfg);
    auto targets = model::compute_latent_targets(ae, samples);
    std::vector<std::vector<double>> feats;
    for (const auto& s : samples) feats.push_back(s.feature.v);
    auto engine2 = make_engine(74);
    model::LatentRegressor reg(feats.front().size(), 8, engine2);
    tensor::TrainConfig cfg2;
    cfg2.batch_size = 8;
    cfg2.max_epochs = 5;
    cfg2.optimizer = tensor::OptimizerKind::sgd_momentum;
    cfg2.scheduler = tensor::SchedulerKind::cosine;
    cfg2.cosine_t_max = 5;
    cfg2.seed = 75;
    model::train_regressor(reg, feats, targets, cfg2);
    auto ae_bytes = tensor::serialize_params(ae.arch_id(), ae.parameters());
    auto reg_bytes = tensor::serialize_params(reg.arch_id(), reg.parameters());
    ae_bytes.insert(ae_bytes.end(), reg_bytes.begin(), reg_bytes.end());
    return ae_bytes;
  };
  bool train_ok = run_stages() == run_stages();
  return {gen_ok && train_ok, fmt("gen-data byte-identical: %s; training stages byte-identical: %s",
                                  gen_ok ? "yes" : "NO", train_ok ? "yes" : "NO")};
}

Outcome criterion_inference_budget() {
  if (!g_state.pipeline) return {false, "trained pipeline unavailable"};
  const auto& feature = g_state.test_samples.front().feature;
  for (int warm = 0; warm < 5; ++warm) (void)g_state.pipeline->reconstruct(feature);
  const int reps = 50;
  auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < reps; ++k) (void)g_state.pipeline->reconstruct(feature);
  double ms =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() * 1e3 / reps;
  return {ms < 50.0, fmt("reconstruct (M_pr=%zu, L=%zu): %.2f ms/frame (need < 50)", kMpr, kLatent,
                         ms)};
}

}  // namespace

int main() {
  g_state.root = fs::temp_directory_path() / "proprio_acceptance";
  fs::remove_all(g_state.root);
  fs::create_directories(g_state.root);
  std::printf("acceptance artifacts under %s\n", g_state.root.string().c_str());

  run_criterion(1, "gradient correctness", 60.0, criterion_gradients);
  run_criterion(2, "chamfer oracle", 60.0, criterion_chamfer_oracle);
  run_criterion(3, "directional sensitivity", 60.0, criterion_directional_sensitivity);
  run_criterion(4, "repeatability 0.35%", 60.0, criterion_repeatability);
  run_criterion(5, "end-to-end reconstruction", 7200.0, criterion_end_to_end);
  run_criterion(6, "overfit sanity", 0.0, criterion_overfit);
  run_criterion(7, "sage exactness", 0.0, criterion_sage_exactness);
  run_criterion(8, "ablation dominance", 0.0, criterion_ablation_dominance);
  run_criterion(9, "timing model", 60.0, criterion_timing_model);
  run_criterion(10, "codec round trip", 60.0, criterion_codec);
  run_criterion(11, "determinism", 0.0, criterion_determinism);
  run_criterion(12, "inference budget", 0.0, criterion_inference_budget);

  std::printf("%d/12 criteria passed\n", 12 - g_failures);
  return g_failures;
}
