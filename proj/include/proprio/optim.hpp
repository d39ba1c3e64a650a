#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "proprio/tensor.hpp"

namespace proprio::tensor {

enum class OptimizerKind { adam, sgd_momentum };
enum class SchedulerKind { plateau, cosine };

struct TrainConfig {
  int batch_size = 64;
  int max_epochs = 100;
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr0 = 1e-3;
  SchedulerKind scheduler = SchedulerKind::plateau;
  double plateau_factor = 0.2;
  int plateau_patience = 3;
  int cosine_t_max = 100;
  int early_stopping_patience = 10;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (lr0 <= 0.0) throw std::invalid_argument("TrainConfig: lr0 must be positive");
    if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be >= 1");
  }
};

inline void zero_grads(const std::vector<Var>& params) {
  for (const auto& p : params) p->zero_grad();
}

inline void scale_grads(const std::vector<Var>& params, double s) {
  for (const auto& p : params)
    for (auto& g : p->grad.data) g *= s;
}

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Var> params;
  std::vector<Tensor> m, v;
  long t = 0;

  explicit Adam(std::vector<Var> params_) : params(std::move(params_)) {
    for (const auto& p : params) {
      m.push_back(Tensor::zeros(p->value.shape));
      v.push_back(Tensor::zeros(p->value.shape));
    }
  }

  void step(double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->value;
      const auto& g = params[i]->grad;
      for (std::size_t j = 0; j < p.numel(); ++j) {
        m[i][j] = beta1 * m[i][j] + (1.0 - beta1) * g[j];
        v[i][j] = beta2 * v[i][j] + (1.0 - beta2) * g[j] * g[j];
        p[j] -= lr * (m[i][j] / bc1) / (std::sqrt(v[i][j] / bc2) + eps);
      }
    }
  }
};

struct SgdMomentum {
  double momentum = 0.9;
  std::vector<Var> params;
  std::vector<Tensor> velocity;

  explicit SgdMomentum(std::vector<Var> params_, double momentum_ = 0.9)
      : momentum(momentum_), params(std::move(params_)) {
    for (const auto& p : params) velocity.push_back(Tensor::zeros(p->value.shape));
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->value;
      const auto& g = params[i]->grad;
      for (std::size_t j = 0; j < p.numel(); ++j) {
        velocity[i][j] = momentum * velocity[i][j] + g[j];
        p[j] -= lr * velocity[i][j];
      }
    }
  }
};

/// Multiplies lr by `factor` once `patience` consecutive epochs pass with
/// no improvement greater than min_delta.
struct PlateauScheduler {
  double factor = 0.2;
  int patience = 3;
  double min_delta = 1e-8;
  double best = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;

  double update(double val_loss, double lr) {
    if (val_loss < best - min_delta) {
      best = val_loss;
      bad_epochs = 0;
    } else if (++bad_epochs >= patience) {
      lr *= factor;
      bad_epochs = 0;
    }
    return lr;
  }
};

/// lr(e) = lr0 * (1 + cos(pi * e / T_max)) / 2, clamped at e = T_max.
inline double cosine_lr(double lr0, int epoch, int t_max) {
  if (t_max < 1) throw std::invalid_argument("cosine_lr: T_max must be >= 1");
  const double e = static_cast<double>(std::min(epoch, t_max));
  return lr0 * (1.0 + std::cos(M_PI * e / static_cast<double>(t_max))) / 2.0;
}

/// Signals a stop after `patience` consecutive non-improving epochs. The
/// caller keeps the best-epoch weight snapshot.
struct EarlyStopper {
  int patience = 10;
  double min_delta = 0.0;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int bad_epochs = 0;

  EarlyStopper() = default;
  explicit EarlyStopper(int patience_, double min_delta_ = 0.0)
      : patience(patience_), min_delta(min_delta_) {}

  /// Returns true when training should stop; improved() tells the caller
  /// to snapshot weights.
  bool update(double val_loss, int epoch) {
    if (val_loss < best - min_delta) {
      best = val_loss;
      best_epoch = epoch;
      bad_epochs = 0;
      improved_ = true;
      return false;
    }
    improved_ = false;
    return ++bad_epochs >= patience;
  }
  bool improved() const { return improved_; }

 private:
  bool improved_ = false;
};

inline std::vector<Tensor> snapshot(const std::vector<Var>& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->value);
  return out;
}

inline void restore(const std::vector<Var>& params, const std::vector<Tensor>& snap) {
  if (params.size() != snap.size()) throw std::invalid_argument("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.shape != snap[i].shape)
      throw std::invalid_argument("restore: shape mismatch");
    params[i]->value = snap[i];
  }
}

}  // namespace proprio::tensor
