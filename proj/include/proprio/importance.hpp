#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "proprio/model.hpp"
#include "proprio/rng.hpp"
#include "proprio/tensor.hpp"

namespace proprio::importance {

enum class GroupKind { led, pd };

inline const char* to_string(GroupKind k) { return k == GroupKind::led ? "LED" : "PD"; }

/// One optoelectronic component as a feature-group player. LED group i
/// holds the p photodiode readings taken while LED i is strobed; PD group
/// j holds that photodiode's reading across all l LEDs. Either family
/// partitions the p*l feature channels.
struct FeatureGroup {
  GroupKind kind = GroupKind::led;
  std::size_t index = 0;  // 0-based LED or PD index
  std::vector<std::size_t> members;
};

inline std::vector<FeatureGroup> led_groups(std::size_t p, std::size_t l) {
  std::vector<FeatureGroup> out(l);
  for (std::size_t i = 0; i < l; ++i) {
    out[i].kind = GroupKind::led;
    out[i].index = i;
    for (std::size_t j = 0; j < p; ++j) out[i].members.push_back(i * p + j);
  }
  return out;
}

inline std::vector<FeatureGroup> pd_groups(std::size_t p, std::size_t l) {
  std::vector<FeatureGroup> out(p);
  for (std::size_t j = 0; j < p; ++j) {
    out[j].kind = GroupKind::pd;
    out[j].index = j;
    for (std::size_t i = 0; i < l; ++i) out[j].members.push_back(i * p + j);
  }
  return out;
}

inline void check_partition(const std::vector<FeatureGroup>& groups, std::size_t n_features) {
  std::vector<std::uint8_t> seen(n_features, 0);
  for (const auto& g : groups)
    for (auto m : g.members) {
      if (m >= n_features) throw std::invalid_argument("feature group index out of range");
      if (seen[m]++) throw std::invalid_argument("feature groups overlap: not a partition");
    }
  for (auto s : seen)
    if (!s) throw std::invalid_argument("feature groups do not cover the feature set");
}

struct SageReport {
  GroupKind kind = GroupKind::led;
  std::vector<std::size_t> group_index;
  std::vector<double> phi;
  std::vector<double> stderr_phi;
  double u_empty = 0.0;
  double u_full = 0.0;
  std::size_t n_permutations = 0;
};

struct SageOptions {
  std::size_t n_permutations = 16;
  bool enumerate_all = false;       // walk all K! orders (toy sizes)
  std::size_t background_count = 16;
  std::size_t eval_count = 0;       // 0 = use the whole eval set
  std::uint64_t seed = 0;
};

/// Evaluates the predictive power u(S) of feature subsets for a trained
/// regressor. Excluded features are marginalized by averaging the model
/// over a fixed set of background draws from the empirical marginal, so
/// u(empty) = 0 holds by construction and u(full) needs no marginalization.
class PredictivePower {
 public:
  PredictivePower(const model::LatentRegressor& h,
                  const std::vector<std::vector<double>>& eval_features,
                  const std::vector<tensor::Tensor>& eval_targets,
                  const std::vector<std::vector<double>>& background_pool,
                  const SageOptions& options)
      : h_(h) {
    if (eval_features.empty() || eval_features.size() != eval_targets.size())
      throw std::invalid_argument("PredictivePower: empty or mismatched eval set");
    if (background_pool.empty())
      throw std::invalid_argument("PredictivePower: empty background pool");
    dim_ = eval_features.front().size();

    auto engine = make_engine(options.seed, 0xba5e);
    std::size_t n_eval = eval_features.size();
    if (options.eval_count > 0 && options.eval_count < n_eval) n_eval = options.eval_count;
    std::vector<std::size_t> idx(eval_features.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), engine);
    for (std::size_t k = 0; k < n_eval; ++k) {
      features_.push_back(eval_features[idx[k]]);
      targets_.push_back(eval_targets[idx[k]]);
    }

    std::size_t nb = std::min(options.background_count, background_pool.size());
    std::vector<std::size_t> bidx(background_pool.size());
    std::iota(bidx.begin(), bidx.end(), 0);
    std::shuffle(bidx.begin(), bidx.end(), engine);
    for (std::size_t k = 0; k < nb; ++k) backgrounds_.push_back(background_pool[bidx[k]]);
  }

  std::size_t feature_dim() const { return dim_; }

  /// u(S) = E[L(h_empty, Z)] - E[L(h_S(v_S), Z)]; `in_subset` marks the
  /// feature indices retained.
  double operator()(const std::vector<std::uint8_t>& in_subset) const {
    return baseline_loss() - restricted_loss(in_subset);
  }

  double baseline_loss() const {
    if (!baseline_) {
      std::vector<std::uint8_t> none(dim_, 0);
      baseline_ = restricted_loss(none);
    }
    return *baseline_;
  }

  double restricted_loss(const std::vector<std::uint8_t>& in_subset) const {
    if (in_subset.size() != dim_)
      throw std::invalid_argument("PredictivePower: subset mask size mismatch");
    const std::size_t L = targets_.front().numel();
    std::vector<double> merged(dim_);
    std::vector<double> mean_pred(L);
    double loss = 0.0;
    for (std::size_t n = 0; n < features_.size(); ++n) {
      std::fill(mean_pred.begin(), mean_pred.end(), 0.0);
      for (const auto& bg : backgrounds_) {
        for (std::size_t d = 0; d < dim_; ++d)
          merged[d] = in_subset[d] ? features_[n][d] : bg[d];
        tensor::Tensor pred = h_.predict(merged);
        for (std::size_t c = 0; c < L; ++c) mean_pred[c] += pred[c];
      }
      const double inv = 1.0 / static_cast<double>(backgrounds_.size());
      for (std::size_t c = 0; c < L; ++c) {
        const double d = mean_pred[c] * inv - targets_[n][c];
        loss += d * d;
      }
    }
    return loss / static_cast<double>(features_.size());
  }

 private:
  const model::LatentRegressor& h_;
  std::size_t dim_ = 0;
  std::vector<std::vector<double>> features_;
  std::vector<tensor::Tensor> targets_;
  std::vector<std::vector<double>> backgrounds_;
  mutable std::optional<double> baseline_;
};

/// Shapley values over group players via permutation sampling: marginal
/// gains u(prefix + G) - u(prefix) accumulated along sampled orders.
/// Telescoping makes the efficiency identity sum(phi) = u(full) - u(empty)
/// exact for any number of permutations. Deterministic for a fixed seed.
inline SageReport sage(const model::LatentRegressor& h, const std::vector<FeatureGroup>& groups,
                       const std::vector<std::vector<double>>& eval_features,
                       const std::vector<tensor::Tensor>& eval_targets,
                       const std::vector<std::vector<double>>& background_pool,
                       const SageOptions& options) {
  if (groups.empty()) throw std::invalid_argument("sage: no groups");
  if (groups.size() > 64) throw std::invalid_argument("sage: more than 64 groups unsupported");
  PredictivePower u(h, eval_features, eval_targets, background_pool, options);
  check_partition(groups, u.feature_dim());

  const std::size_t K = groups.size();
  std::map<std::uint64_t, double> memo;
  auto u_of_mask = [&](std::uint64_t mask) {
    auto it = memo.find(mask);
    if (it != memo.end()) return it->second;
    std::vector<std::uint8_t> subset(u.feature_dim(), 0);
    for (std::size_t g = 0; g < K; ++g)
      if (mask & (1ULL << g))
        for (auto m : groups[g].members) subset[m] = 1;
    double val = u(subset);
    memo[mask] = val;
    return val;
  };

  std::vector<std::vector<std::size_t>> orders;
  if (options.enumerate_all) {
    if (K > 8) throw std::invalid_argument("sage: exhaustive enumeration limited to 8 groups");
    std::vector<std::size_t> perm(K);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      orders.push_back(perm);
    } while (std::next_permutation(perm.begin(), perm.end()));
  } else {
    for (std::size_t s = 0; s < options.n_permutations; ++s) {
      std::vector<std::size_t> perm(K);
      std::iota(perm.begin(), perm.end(), 0);
      auto engine = make_engine(options.seed, 0x9e37 + s);
      std::shuffle(perm.begin(), perm.end(), engine);
      orders.push_back(std::move(perm));
    }
  }

  std::vector<double> acc(K, 0.0), acc2(K, 0.0);
  for (const auto& perm : orders) {
    std::uint64_t mask = 0;
    double u_prev = 0.0;  // u(empty) = 0 by construction
    for (std::size_t g : perm) {
      mask |= 1ULL << g;
      double u_cur = u_of_mask(mask);
      double marginal = u_cur - u_prev;
      acc[g] += marginal;
      acc2[g] += marginal * marginal;
      u_prev = u_cur;
    }
  }

  SageReport report;
  report.kind = groups.front().kind;
  report.n_permutations = orders.size();
  const double n = static_cast<double>(orders.size());
  for (std::size_t g = 0; g < K; ++g) {
    report.group_index.push_back(groups[g].index);
    double mean = acc[g] / n;
    report.phi.push_back(mean);
    double var = n > 1 ? std::max(0.0, (acc2[g] - n * mean * mean) / (n - 1.0)) : 0.0;
    report.stderr_phi.push_back(std::sqrt(var / n));
  }
  report.u_empty = 0.0;
  report.u_full = u_of_mask(K == 64 ? ~0ULL : ((1ULL << K) - 1));
  return report;
}

/// Group visit order by descending (or ascending) SAGE value; ties break
/// toward the lower group index.
inline std::vector<std::size_t> rank_groups(const SageReport& report, bool descending) {
  std::vector<std::size_t> order(report.phi.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? report.phi[a] > report.phi[b] : report.phi[a] < report.phi[b];
  });
  return order;
}

enum class InclusionOrder { natural, sage_desc, sage_asc };

inline const char* to_string(InclusionOrder o) {
  switch (o) {
    case InclusionOrder::natural: return "natural";
    case InclusionOrder::sage_desc: return "sage_desc";
    case InclusionOrder::sage_asc: return "sage_asc";
  }
  return "?";
}

struct InclusionPoint {
  std::size_t k = 0;
  double mean_cd_mm = 0.0;
  double latent_mse = 0.0;  // best validation loss of the reduced fit
};

/// Progressive feature inclusion: for each K, keep the union of the first
/// K groups, retrain a reduced regressor from scratch on those features
/// only (frozen decoder untouched), and score the composed model on the
/// test set.
inline std::vector<InclusionPoint> progressive_inclusion(
    const model::PointNetAutoencoder& ae, const std::vector<FeatureGroup>& groups,
    const std::vector<std::size_t>& visit_order,
    const std::vector<std::vector<double>>& train_features,
    const std::vector<tensor::Tensor>& latent_targets,
    const std::vector<model::PairedSample>& test, const std::vector<std::size_t>& k_values,
    const tensor::TrainConfig& config) {
  if (visit_order.size() != groups.size())
    throw std::invalid_argument("progressive_inclusion: order size mismatch");
  for (auto k : k_values)
    if (k == 0 || k > groups.size())
      throw std::invalid_argument("progressive_inclusion: K outside [1, group count]");

  std::vector<InclusionPoint> curve;
  for (auto k : k_values) {
    std::vector<std::size_t> kept;
    for (std::size_t g = 0; g < k; ++g) {
      const auto& members = groups[visit_order[g]].members;
      kept.insert(kept.end(), members.begin(), members.end());
    }
    std::sort(kept.begin(), kept.end());

    auto restrict = [&kept](const std::vector<double>& v) {
      std::vector<double> out(kept.size());
      for (std::size_t i = 0; i < kept.size(); ++i) out[i] = v[kept[i]];
      return out;
    };
    std::vector<std::vector<double>> reduced(train_features.size());
    for (std::size_t i = 0; i < train_features.size(); ++i) reduced[i] = restrict(train_features[i]);

    tensor::TrainConfig cfg = config;
    cfg.seed = mix_seed(config.seed, 0x1c0 + k);
    auto engine = make_engine(cfg.seed, 0xfeed);
    model::LatentRegressor reg(kept.size(), ae.latent_dim, engine);
    auto report = model::train_regressor(reg, reduced, latent_targets, cfg);

    model::CloudScaler scaler{ae.extent};
    double mean_cd = 0.0;
    for (const auto& sample : test) {
      tensor::Tape tape;
      tensor::Tensor in({1, kept.size()});
      in.data = restrict(sample.feature.v);
      tensor::Var z = reg.forward(tape, tensor::make_const(std::move(in)));
      tensor::Var out = ae.decode(tape, z);
      mean_cd += model::chamfer_eval_mm(sample.truth, scaler.to_cloud_mm(out->value));
    }
    mean_cd /= static_cast<double>(test.size());
    curve.push_back({k, mean_cd, report.best_val});
  }
  return curve;
}

/// Smallest K whose error is within `tolerance` (relative) of the
/// full-model error; groups.size()+1 if the curve never gets there.
inline std::size_t plateau_k(const std::vector<InclusionPoint>& curve, double full_error,
                             double tolerance = 0.05) {
  for (const auto& pt : curve)
    if (pt.mean_cd_mm <= full_error * (1.0 + tolerance)) return pt.k;
  return curve.empty() ? 0 : curve.back().k + 1;
}

}  // namespace proprio::importance
