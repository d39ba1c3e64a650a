#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <future>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "proprio/checkpoint.hpp"
#include "proprio/crc.hpp"
#include "proprio/geometry.hpp"
#include "proprio/kdtree.hpp"
#include "proprio/metrics.hpp"
#include "proprio/optim.hpp"
#include "proprio/readout.hpp"
#include "proprio/rng.hpp"
#include "proprio/tensor.hpp"

namespace proprio::model {

using geometry::PointCloud;
using tensor::Tape;
using tensor::Tensor;
using tensor::Var;

class TrainingDivergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One dataset entry: normalized feature vector, ground-truth cloud,
/// deformation magnitude and the indenter family that produced it.
struct PairedSample {
  readout::FeatureVector feature;
  PointCloud truth;
  double delta_z_mm = 0.0;
  std::string tag;

  void validate() const {
    if (feature.v.empty()) throw std::invalid_argument("PairedSample: empty feature");
    for (double v : feature.v)
      if (!std::isfinite(v)) throw std::invalid_argument("PairedSample: non-finite feature");
    double dz = geometry::delta_z(truth);
    if (std::abs(dz - delta_z_mm) > 1e-9)
      throw std::invalid_argument("PairedSample: stored delta_z disagrees with truth cloud");
  }
};

/// Maps membrane coordinates (mm) to the unit-scale frame the networks
/// train in: q = (p - (W/2, W/2, 0)) / (W/2). Purely a conditioning
/// transform; losses in this frame are Eq-form Chamfer scaled by (W/2)^2.
struct CloudScaler {
  double extent = 140.0;

  double scale() const { return 0.5 * extent; }

  Tensor to_tensor(const PointCloud& cloud) const {
    Tensor t({cloud.size(), 3});
    const double c = 0.5 * extent, s = 1.0 / scale();
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      t.data[3 * i + 0] = (cloud.points[i].x - c) * s;
      t.data[3 * i + 1] = (cloud.points[i].y - c) * s;
      t.data[3 * i + 2] = cloud.points[i].z * s;
    }
    return t;
  }

  std::vector<Vec3> to_scaled_points(const PointCloud& cloud) const {
    std::vector<Vec3> out(cloud.size());
    const double c = 0.5 * extent, s = 1.0 / scale();
    for (std::size_t i = 0; i < cloud.size(); ++i)
      out[i] = {(cloud.points[i].x - c) * s, (cloud.points[i].y - c) * s,
                cloud.points[i].z * s};
    return out;
  }

  PointCloud to_cloud_mm(const Tensor& t) const {
    if (t.shape.size() != 2 || t.shape[1] != 3)
      throw std::invalid_argument("CloudScaler: expected M x 3 tensor");
    PointCloud cloud;
    cloud.points.resize(t.shape[0]);
    const double c = 0.5 * extent, s = scale();
    for (std::size_t i = 0; i < t.shape[0]; ++i)
      cloud.points[i] = {t.data[3 * i + 0] * s + c, t.data[3 * i + 1] * s + c,
                         t.data[3 * i + 2] * s};
    return cloud;
  }
};

/// Bidirectional squared-NN Chamfer loss between predicted points and a
/// fixed target cloud, as a differentiable graph op. The target kd-tree is
/// built once per sample and shared across epochs.
inline Var chamfer_sq_loss(Tape& tape, const Var& pred,
                           std::shared_ptr<const std::vector<Vec3>> target,
                           std::shared_ptr<const KdTree3> target_tree) {
  if (pred->value.shape.size() != 2 || pred->value.shape[1] != 3)
    throw std::invalid_argument("chamfer_sq_loss: prediction must be M x 3");
  const std::size_t m = pred->value.shape[0];
  if (m == 0 || target->empty()) throw std::invalid_argument("chamfer_sq_loss: empty cloud");

  std::vector<Vec3> pp(m);
  for (std::size_t i = 0; i < m; ++i)
    pp[i] = {pred->value.data[3 * i], pred->value.data[3 * i + 1], pred->value.data[3 * i + 2]};
  KdTree3 pred_tree(pp);

  auto nn_pred = std::make_shared<std::vector<std::size_t>>(m);       // pred -> target
  auto nn_tgt = std::make_shared<std::vector<std::size_t>>(target->size());  // target -> pred
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    auto hit = target_tree->nearest(pp[i]);
    (*nn_pred)[i] = hit.index;
    loss += hit.dist2;
  }
  for (std::size_t j = 0; j < target->size(); ++j) {
    auto hit = pred_tree.nearest((*target)[j]);
    (*nn_tgt)[j] = hit.index;
    loss += hit.dist2;
  }

  Tensor out({1});
  out[0] = loss;
  return tape.record(std::move(out), {pred}, [target, nn_pred, nn_tgt, m](tensor::Node& node) {
    const Var& pred = node.parents[0];
    if (!pred->requires_grad) return;
    const double g = node.grad[0];
    for (std::size_t i = 0; i < m; ++i) {
      const Vec3& t = (*target)[(*nn_pred)[i]];
      pred->grad.data[3 * i + 0] += 2.0 * g * (pred->value.data[3 * i + 0] - t.x);
      pred->grad.data[3 * i + 1] += 2.0 * g * (pred->value.data[3 * i + 1] - t.y);
      pred->grad.data[3 * i + 2] += 2.0 * g * (pred->value.data[3 * i + 2] - t.z);
    }
    for (std::size_t j = 0; j < target->size(); ++j) {
      const std::size_t i = (*nn_tgt)[j];
      const Vec3& t = (*target)[j];
      pred->grad.data[3 * i + 0] += 2.0 * g * (pred->value.data[3 * i + 0] - t.x);
      pred->grad.data[3 * i + 1] += 2.0 * g * (pred->value.data[3 * i + 1] - t.y);
      pred->grad.data[3 * i + 2] += 2.0 * g * (pred->value.data[3 * i + 2] - t.z);
    }
  });
}

/// Stage-1 point-cloud autoencoder: a point-set encoder (shared pointwise
/// MLP 3-64-128-256, global max pool, FC to the latent) and a decoder that
/// unfolds the latent through stride-2 transposed convolutions over a 4x4
/// seed map when M_pr = (4 * 2^k)^2, else through a fully connected
/// fallback (the non-square case).
struct PointNetAutoencoder {
  std::size_t latent_dim = 256;
  std::size_t m_pr = 1024;
  double extent = 140.0;
  bool grid_decoder = false;
  std::size_t grid_m = 0;

  tensor::PointwiseMlp enc_mlp;
  tensor::Linear enc_fc;
  tensor::Linear dec_fc;
  std::vector<tensor::ConvTranspose2d> dec_stages;
  tensor::Linear dec_proj;
  tensor::Linear fcdec_hidden, fcdec_out;

  static constexpr std::size_t kSeedHw = 4;
  static constexpr std::size_t kSeedChannels = 256;

  PointNetAutoencoder() = default;

  PointNetAutoencoder(std::size_t latent, std::size_t m_pr_, double extent_,
                      std::mt19937_64& engine)
      : latent_dim(latent), m_pr(m_pr_), extent(extent_) {
    if (latent == 0 || m_pr_ == 0) throw std::invalid_argument("autoencoder: zero sizes");
    enc_mlp = tensor::PointwiseMlp({3, 64, 128, 256}, engine);
    enc_fc = tensor::Linear(256, latent, engine);

    const auto m = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(m_pr_))));
    grid_decoder = m * m == m_pr_ && m >= kSeedHw && is_pow2(m / kSeedHw) && m % kSeedHw == 0;
    if (grid_decoder) {
      grid_m = m;
      dec_fc = tensor::Linear(latent, kSeedChannels * kSeedHw * kSeedHw, engine);
      std::size_t stages = log2z(m / kSeedHw);
      std::size_t cin = kSeedChannels;
      for (std::size_t i = 0; i < stages; ++i) {
        std::size_t cout = std::max<std::size_t>(16, cin / 2);
        dec_stages.emplace_back(cin, cout, 3, engine);
        cin = cout;
      }
      dec_proj = tensor::Linear(cin, 3, engine);
    } else {
      fcdec_hidden = tensor::Linear(latent, 512, engine);
      fcdec_out = tensor::Linear(512, 3 * m_pr_, engine);
    }
  }

  static bool is_pow2(std::size_t v) { return v > 0 && (v & (v - 1)) == 0; }
  static std::size_t log2z(std::size_t v) {
    std::size_t k = 0;
    while (v > 1) {
      v >>= 1;
      ++k;
    }
    return k;
  }

  /// (M x 3) scaled cloud -> (1 x L) latent code. Permutation invariant.
  Var encode(Tape& tape, const Var& cloud) const {
    Var x = tensor::relu(tape, enc_mlp.forward(tape, cloud));
    Var pooled = tensor::global_max_pool(tape, x);
    return enc_fc.forward(tape, pooled);
  }

  /// (1 x L) latent -> (M_pr x 3) scaled cloud.
  Var decode(Tape& tape, const Var& z) const {
    if (grid_decoder) {
      Var x = tensor::relu(tape, dec_fc.forward(tape, z));
      x = tensor::reshape(tape, x, {kSeedChannels, kSeedHw, kSeedHw});
      for (const auto& stage : dec_stages) x = tensor::relu(tape, stage.forward(tape, x));
      const std::size_t c =
          dec_stages.empty() ? kSeedChannels : dec_stages.back().kernel->value.shape[1];
      x = tensor::reshape(tape, x, {c, grid_m * grid_m});
      x = tensor::transpose2d(tape, x);
      return dec_proj.forward(tape, x);
    }
    Var x = tensor::relu(tape, fcdec_hidden.forward(tape, z));
    x = fcdec_out.forward(tape, x);
    return tensor::reshape(tape, x, {m_pr, 3});
  }

  std::vector<Var> encoder_parameters() const {
    std::vector<Var> out;
    enc_mlp.collect(out);
    enc_fc.collect(out);
    return out;
  }

  std::vector<Var> decoder_parameters() const {
    std::vector<Var> out;
    if (grid_decoder) {
      dec_fc.collect(out);
      for (const auto& s : dec_stages) s.collect(out);
      dec_proj.collect(out);
    } else {
      fcdec_hidden.collect(out);
      fcdec_out.collect(out);
    }
    return out;
  }

  std::vector<Var> parameters() const {
    auto out = encoder_parameters();
    auto dec = decoder_parameters();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
  }

  std::string descriptor() const {
    return "pointnet_ae L=" + std::to_string(latent_dim) + " Mpr=" + std::to_string(m_pr) +
           " enc=3-64-128-256" + (grid_decoder ? " dec=grid4x4" : " dec=fc512");
  }

  std::uint32_t arch_id() const {
    auto d = descriptor();
    return crc32_ieee(reinterpret_cast<const std::uint8_t*>(d.data()), d.size());
  }

  /// CRC-32 over the serialized parameters; used by the frozen-weights
  /// contract checks.
  std::uint32_t param_checksum() const {
    auto bytes = tensor::serialize_params(arch_id(), parameters());
    return crc32_ieee(bytes.data(), bytes.size());
  }
};

/// Stage-2 regressor h: normalized feature vector -> latent code.
struct LatentRegressor {
  std::size_t in_dim = 150;
  std::size_t latent_dim = 256;
  std::size_t hidden = 256;
  tensor::Linear l1, l2, l3;

  LatentRegressor() = default;
  LatentRegressor(std::size_t in, std::size_t latent, std::mt19937_64& engine,
                  std::size_t hidden_ = 256)
      : in_dim(in), latent_dim(latent), hidden(hidden_) {
    l1 = tensor::Linear(in, hidden, engine);
    l2 = tensor::Linear(hidden, hidden, engine);
    l3 = tensor::Linear(hidden, latent, engine);
  }

  Var forward(Tape& tape, const Var& v) const {
    Var x = tensor::relu(tape, l1.forward(tape, v));
    x = tensor::relu(tape, l2.forward(tape, x));
    return l3.forward(tape, x);
  }

  Tensor predict(const std::vector<double>& v) const {
    if (v.size() != in_dim) throw std::invalid_argument("LatentRegressor: input size mismatch");
    Tape tape;
    Tensor in({1, in_dim});
    in.data = v;
    return forward(tape, tensor::make_const(std::move(in)))->value;
  }

  std::vector<Var> parameters() const {
    std::vector<Var> out;
    l1.collect(out);
    l2.collect(out);
    l3.collect(out);
    return out;
  }

  std::string descriptor() const {
    return "latent_mlp in=" + std::to_string(in_dim) + " h=" + std::to_string(hidden) +
           " L=" + std::to_string(latent_dim);
  }

  std::uint32_t arch_id() const {
    auto d = descriptor();
    return crc32_ieee(reinterpret_cast<const std::uint8_t*>(d.data()), d.size());
  }
};

// --- training ----------------------------------------------------------------

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

struct SplitIndices {
  std::vector<std::size_t> train, val;
};

/// Deterministic shuffled split; val_fraction 0 validates on the training
/// set itself (used by the overfit harnesses).
inline SplitIndices split_train_val(std::size_t n, double val_fraction, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("split_train_val: empty dataset");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  auto engine = make_engine(seed, 0xa11ce);
  std::shuffle(idx.begin(), idx.end(), engine);
  std::size_t n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(n)));
  if (val_fraction > 0.0 && n_val == 0 && n >= 2) n_val = 1;
  SplitIndices split;
  split.val.assign(idx.begin(), idx.begin() + n_val);
  split.train.assign(idx.begin() + n_val, idx.end());
  if (split.train.empty()) throw std::invalid_argument("split_train_val: empty training split");
  return split;
}

namespace detail {

struct AeSampleCache {
  Tensor input;  // M_gt x 3, scaled
  std::shared_ptr<const std::vector<Vec3>> target;
  std::shared_ptr<const KdTree3> tree;
};

inline std::vector<AeSampleCache> build_ae_cache(const std::vector<PairedSample>& samples,
                                                 const CloudScaler& scaler) {
  std::vector<AeSampleCache> cache;
  cache.reserve(samples.size());
  for (const auto& s : samples) {
    AeSampleCache c;
    c.input = scaler.to_tensor(s.truth);
    auto pts = std::make_shared<std::vector<Vec3>>(scaler.to_scaled_points(s.truth));
    c.tree = std::make_shared<KdTree3>(*pts);
    c.target = std::move(pts);
    cache.push_back(std::move(c));
  }
  return cache;
}

}  // namespace detail

/// Stage-1 training: minimizes the squared-sum Chamfer loss with Adam and
/// a reduce-on-plateau schedule, early stopping on the validation loss and
/// returning the best-validation weights. Losses are reported per sample
/// in the scaled frame.
inline TrainReport train_autoencoder(PointNetAutoencoder& ae,
                                     const std::vector<PairedSample>& samples,
                                     const tensor::TrainConfig& config,
                                     double val_fraction = 0.1) {
  config.validate();
  if (samples.empty()) throw std::invalid_argument("train_autoencoder: empty dataset");
  CloudScaler scaler{ae.extent};
  auto cache = detail::build_ae_cache(samples, scaler);
  auto split = split_train_val(samples.size(), val_fraction, config.seed);
  const auto& val_idx = split.val.empty() ? split.train : split.val;

  auto params = ae.parameters();
  tensor::Adam opt(params);
  tensor::PlateauScheduler plateau{config.plateau_factor, config.plateau_patience};
  tensor::EarlyStopper stopper{config.early_stopping_patience};
  double lr = config.lr0;
  TrainReport report;
  std::vector<Tensor> best = tensor::snapshot(params);
  auto engine = make_engine(config.seed, 0xe9);

  auto forward_loss = [&](Tape& tape, std::size_t i) {
    Var in = tensor::make_const(cache[i].input);
    Var z = ae.encode(tape, in);
    Var out = ae.decode(tape, z);
    return chamfer_sq_loss(tape, out, cache[i].target, cache[i].tree);
  };

  std::vector<std::size_t> order = split.train;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), engine);
    double train_loss = 0.0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      const std::size_t stop = std::min(order.size(), at + config.batch_size);
      tensor::zero_grads(params);
      for (std::size_t b = at; b < stop; ++b) {
        Tape tape;
        Var loss = forward_loss(tape, order[b]);
        train_loss += loss->value[0];
        tape.backward(loss);
      }
      tensor::scale_grads(params, 1.0 / static_cast<double>(stop - at));
      opt.step(lr);
    }
    train_loss /= static_cast<double>(order.size());

    double val_loss = 0.0;
    for (std::size_t i : val_idx) {
      Tape tape;
      val_loss += forward_loss(tape, i)->value[0];
    }
    val_loss /= static_cast<double>(val_idx.size());

    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw TrainingDivergence("train_autoencoder: loss diverged (NaN/Inf) at epoch " +
                               std::to_string(epoch));
    report.epochs.push_back({epoch, train_loss, val_loss, lr});

    bool stop = stopper.update(val_loss, epoch);
    if (stopper.improved()) best = tensor::snapshot(params);
    if (stop) {
      report.stopped_early = true;
      break;
    }
    lr = plateau.update(val_loss, lr);
  }
  report.best_epoch = stopper.best_epoch;
  report.best_val = stopper.best;
  tensor::restore(params, best);
  return report;
}

/// Latent targets z = E(S_gt), computed once with the trained encoder.
inline std::vector<Tensor> compute_latent_targets(const PointNetAutoencoder& ae,
                                                  const std::vector<PairedSample>& samples) {
  CloudScaler scaler{ae.extent};
  std::vector<Tensor> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    Tape tape;
    Var in = tensor::make_const(scaler.to_tensor(s.truth));
    out.push_back(ae.encode(tape, in)->value);
  }
  return out;
}

/// Stage-2 training: SGD with momentum 0.9 under cosine annealing,
/// minimizing the squared-error latent loss. The autoencoder is not
/// touched (its parameters live in a disjoint graph).
inline TrainReport train_regressor(LatentRegressor& reg,
                                   const std::vector<std::vector<double>>& features,
                                   const std::vector<Tensor>& targets,
                                   const tensor::TrainConfig& config, double val_fraction = 0.1) {
  config.validate();
  if (features.empty() || features.size() != targets.size())
    throw std::invalid_argument("train_regressor: feature/target size mismatch");
  for (const auto& f : features)
    if (f.size() != reg.in_dim)
      throw std::invalid_argument("train_regressor: feature width mismatch");

  auto split = split_train_val(features.size(), val_fraction, config.seed);
  const auto& val_idx = split.val.empty() ? split.train : split.val;
  auto params = reg.parameters();
  tensor::SgdMomentum opt(params, 0.9);
  tensor::EarlyStopper stopper{config.early_stopping_patience};
  TrainReport report;
  std::vector<Tensor> best = tensor::snapshot(params);
  auto engine = make_engine(config.seed, 0xf2);

  std::vector<Tensor> inputs(features.size());
  std::vector<Tensor> tgt(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    inputs[i] = Tensor({1, reg.in_dim});
    inputs[i].data = features[i];
    tgt[i] = targets[i];
    tgt[i].shape = {1, reg.latent_dim};
    if (tgt[i].numel() != reg.latent_dim)
      throw std::invalid_argument("train_regressor: latent width mismatch");
  }

  auto forward_loss = [&](Tape& tape, std::size_t i) {
    Var v = tensor::make_const(inputs[i]);
    Var z = reg.forward(tape, v);
    return tensor::sum_sq_diff(tape, z, tgt[i]);
  };

  std::vector<std::size_t> order = split.train;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = tensor::cosine_lr(config.lr0, epoch, config.cosine_t_max);
    std::shuffle(order.begin(), order.end(), engine);
    double train_loss = 0.0;
    for (std::size_t at = 0; at < order.size(); at += config.batch_size) {
      const std::size_t stop = std::min(order.size(), at + config.batch_size);
      tensor::zero_grads(params);
      for (std::size_t b = at; b < stop; ++b) {
        Tape tape;
        Var loss = forward_loss(tape, order[b]);
        train_loss += loss->value[0];
        tape.backward(loss);
      }
      tensor::scale_grads(params, 1.0 / static_cast<double>(stop - at));
      opt.step(lr);
    }
    train_loss /= static_cast<double>(order.size());

    double val_loss = 0.0;
    for (std::size_t i : val_idx) {
      Tape tape;
      val_loss += forward_loss(tape, i)->value[0];
    }
    val_loss /= static_cast<double>(val_idx.size());

    if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
      throw TrainingDivergence("train_regressor: loss diverged (NaN/Inf) at epoch " +
                               std::to_string(epoch));
    report.epochs.push_back({epoch, train_loss, val_loss, lr});

    bool stop = stopper.update(val_loss, epoch);
    if (stopper.improved()) best = tensor::snapshot(params);
    if (stop) {
      report.stopped_early = true;
      break;
    }
  }
  report.best_epoch = stopper.best_epoch;
  report.best_val = stopper.best;
  tensor::restore(params, best);
  return report;
}

// --- inference -----------------------------------------------------------------

/// The trained two-stage pipeline plus the normalization statistics it was
/// trained under. reconstruct() refuses feature vectors normalized with a
/// different statistics source.
struct Pipeline {
  PointNetAutoencoder ae;
  LatentRegressor reg;
  readout::NormStats stats;

  PointCloud reconstruct(const readout::FeatureVector& fv) const {
    if (fv.stats_source != stats.source)
      throw std::invalid_argument("reconstruct: feature normalized with '" + fv.stats_source +
                                  "' but model was trained with '" + stats.source + "'");
    if (fv.v.size() != reg.in_dim)
      throw std::invalid_argument("reconstruct: feature width mismatch");
    Tape tape;
    Tensor in({1, reg.in_dim});
    in.data = fv.v;
    Var z = reg.forward(tape, tensor::make_const(std::move(in)));
    Var out = ae.decode(tape, z);
    return CloudScaler{ae.extent}.to_cloud_mm(out->value);
  }
};

// --- evaluation ------------------------------------------------------------------

inline const std::vector<double>& delta_z_bin_edges() {
  static const std::vector<double> edges = {0.0,  10.0, 12.5, 15.0,
                                            17.5, 20.0, 25.0, std::numeric_limits<double>::infinity()};
  return edges;
}

struct BinStats {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0, mean = 0.0, stddev = 0.0;
};

struct EvalSummary {
  std::size_t count = 0;
  double mean = 0.0, median = 0.0, stddev = 0.0;
  double hist_bin_width = 0.25;          // mm
  std::vector<std::size_t> histogram;    // per-sample cd, from 0 upward
  std::vector<BinStats> bins;            // half-open delta-z bins
};

inline BinStats stats_of(std::vector<double> values, double lo, double hi) {
  BinStats b;
  b.lo = lo;
  b.hi = hi;
  b.count = values.size();
  if (values.empty()) return b;
  std::sort(values.begin(), values.end());
  b.min = values.front();
  b.max = values.back();
  b.q1 = quantile_sorted(values, 0.25);
  b.median = quantile_sorted(values, 0.5);
  b.q3 = quantile_sorted(values, 0.75);
  for (double v : values) b.mean += v;
  b.mean /= static_cast<double>(values.size());
  for (double v : values) b.stddev += (v - b.mean) * (v - b.mean);
  b.stddev = std::sqrt(b.stddev / static_cast<double>(values.size()));
  return b;
}

/// Per-sample Chamfer statistics plus the per-deformation-bin breakdown.
/// Accumulation happens over sorted copies so the reported numbers do not
/// depend on sample order.
inline EvalSummary evaluate(const std::vector<double>& cd_mm, const std::vector<double>& dz_mm) {
  if (cd_mm.empty() || cd_mm.size() != dz_mm.size())
    throw std::invalid_argument("evaluate: empty or mismatched inputs");
  EvalSummary s;
  s.count = cd_mm.size();
  auto global = stats_of(cd_mm, 0.0, std::numeric_limits<double>::infinity());
  s.mean = global.mean;
  s.median = global.median;
  s.stddev = global.stddev;

  double top = *std::max_element(cd_mm.begin(), cd_mm.end());
  std::size_t n_hist = static_cast<std::size_t>(std::floor(top / s.hist_bin_width)) + 1;
  s.histogram.assign(n_hist, 0);
  for (double v : cd_mm)
    ++s.histogram[std::min(n_hist - 1, static_cast<std::size_t>(std::floor(v / s.hist_bin_width)))];

  const auto& edges = delta_z_bin_edges();
  for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
    std::vector<double> members;
    for (std::size_t i = 0; i < cd_mm.size(); ++i)
      if (dz_mm[i] >= edges[k] && dz_mm[i] < edges[k + 1]) members.push_back(cd_mm[i]);
    s.bins.push_back(stats_of(std::move(members), edges[k], edges[k + 1]));
  }
  return s;
}

/// Runs the pipeline over a test set and reports chamfer_eval_mm per
/// sample with the bin summary.
inline EvalSummary evaluate_pipeline(const Pipeline& pipe, const std::vector<PairedSample>& test,
                                     std::vector<double>* per_sample_cd = nullptr) {
  if (test.empty()) throw std::invalid_argument("evaluate_pipeline: empty test set");
  std::vector<double> cd(test.size()), dz(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    PointCloud pred = pipe.reconstruct(test[i].feature);
    cd[i] = chamfer_eval_mm(test[i].truth, pred);
    dz[i] = test[i].delta_z_mm;
  }
  if (per_sample_cd) *per_sample_cd = cd;
  return evaluate(cd, dz);
}

// --- hyperparameter sweep ---------------------------------------------------------

struct SweepCell {
  std::size_t latent = 0, m_pr = 0;
  double mean_mm = 0.0, std_mm = 0.0;
  bool failed = false;
  std::string error;
};

inline tensor::TrainConfig stage2_config(const tensor::TrainConfig& base) {
  tensor::TrainConfig c = base;
  c.optimizer = tensor::OptimizerKind::sgd_momentum;
  c.scheduler = tensor::SchedulerKind::cosine;
  c.cosine_t_max = base.max_epochs;
  return c;
}

/// Trains both stages for one (L, M_pr) cell and evaluates on the test
/// set. Failures are recorded, not propagated.
inline SweepCell run_sweep_cell(std::size_t latent, std::size_t m_pr,
                                const std::vector<PairedSample>& train,
                                const std::vector<PairedSample>& test,
                                const tensor::TrainConfig& ae_config,
                                const readout::NormStats& stats, double extent) {
  SweepCell cell;
  cell.latent = latent;
  cell.m_pr = m_pr;
  try {
    auto engine = make_engine(ae_config.seed, (latent << 16) ^ m_pr);
    PointNetAutoencoder ae(latent, m_pr, extent, engine);
    train_autoencoder(ae, train, ae_config);
    auto targets = compute_latent_targets(ae, train);
    std::vector<std::vector<double>> feats(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) feats[i] = train[i].feature.v;
    LatentRegressor reg(feats.front().size(), latent, engine);
    train_regressor(reg, feats, targets, stage2_config(ae_config));
    Pipeline pipe{ae, reg, stats};
    std::vector<double> cd;
    evaluate_pipeline(pipe, test, &cd);
    auto st = stats_of(cd, 0.0, std::numeric_limits<double>::infinity());
    cell.mean_mm = st.mean;
    cell.std_mm = st.stddev;
  } catch (const std::exception& e) {
    cell.failed = true;
    cell.error = e.what();
  }
  return cell;
}

inline std::vector<SweepCell> sweep(const std::vector<std::size_t>& latents,
                                    const std::vector<std::size_t>& m_prs,
                                    const std::vector<PairedSample>& train,
                                    const std::vector<PairedSample>& test,
                                    const tensor::TrainConfig& ae_config,
                                    const readout::NormStats& stats, double extent,
                                    std::size_t jobs = 1) {
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  for (auto l : latents)
    for (auto m : m_prs) cells.emplace_back(l, m);
  std::vector<SweepCell> out(cells.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cells.size(); ++i)
      out[i] = run_sweep_cell(cells[i].first, cells[i].second, train, test, ae_config, stats,
                              extent);
    return out;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      out[i] = run_sweep_cell(cells[i].first, cells[i].second, train, test, ae_config, stats,
                              extent);
    }
  };
  std::vector<std::future<void>> futs;
  for (std::size_t j = 0; j < std::min(jobs, cells.size()); ++j)
    futs.push_back(std::async(std::launch::async, worker));
  for (auto& f : futs) f.get();
  return out;
}

inline std::size_t best_cell(const std::vector<SweepCell>& cells) {
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i].failed) continue;
    if (best == cells.size() || cells[i].mean_mm < cells[best].mean_mm) best = i;
  }
  if (best == cells.size()) throw std::runtime_error("sweep: every cell failed");
  return best;
}

}  // namespace proprio::model
