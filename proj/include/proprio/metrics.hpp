#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "proprio/geometry.hpp"
#include "proprio/kdtree.hpp"

namespace proprio::model {

using geometry::PointCloud;

/// Nearest-neighbor squared distance from every point of `from` to the set
/// behind `index`.
inline std::vector<double> nn_dist2(const std::vector<Vec3>& from, const KdTree3& index) {
  std::vector<double> out(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) out[i] = index.nearest(from[i]).dist2;
  return out;
}

/// Training-form Chamfer distance: sum of squared nearest-neighbor
/// distances in both directions (mm^2). Symmetric in its arguments.
inline double chamfer_sq(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer_sq: empty cloud");
  KdTree3 ta(a.points), tb(b.points);
  // directional sums accumulate separately so swapping the arguments gives
  // the bit-identical total
  double ab = 0.0, ba = 0.0;
  for (double d : nn_dist2(a.points, tb)) ab += d;
  for (double d : nn_dist2(b.points, ta)) ba += d;
  return ab + ba;
}

/// Reporting-form Chamfer distance in mm: half the sum of the two mean
/// Euclidean nearest-neighbor distances.
inline double chamfer_eval_mm(const PointCloud& gt, const PointCloud& pr) {
  if (gt.empty() || pr.empty()) throw std::invalid_argument("chamfer_eval_mm: empty cloud");
  KdTree3 tgt(gt.points), tpr(pr.points);
  double mean_pr = 0.0, mean_gt = 0.0;
  for (double d : nn_dist2(pr.points, tgt)) mean_pr += std::sqrt(d);
  for (double d : nn_dist2(gt.points, tpr)) mean_gt += std::sqrt(d);
  mean_pr /= static_cast<double>(pr.size());
  mean_gt /= static_cast<double>(gt.size());
  return 0.5 * (mean_pr + mean_gt);
}

struct NnErrorMap {
  std::vector<double> distances;  // per predicted point, mm
  double nnd_max = 0.0;
};

/// Spatial error map: Euclidean distance from each predicted point to its
/// nearest ground-truth point, plus the worst case (nnd_max).
inline NnErrorMap nn_error_map(const PointCloud& gt, const PointCloud& pr) {
  if (gt.empty() || pr.empty()) throw std::invalid_argument("nn_error_map: empty cloud");
  KdTree3 tgt(gt.points);
  NnErrorMap map;
  map.distances.resize(pr.size());
  for (std::size_t i = 0; i < pr.size(); ++i) {
    map.distances[i] = std::sqrt(tgt.nearest(pr.points[i]).dist2);
    map.nnd_max = std::max(map.nnd_max, map.distances[i]);
  }
  return map;
}

/// Quantile with linear interpolation between closest ranks; `sorted`
/// must be ascending and non-empty.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty data");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  const double frac = h - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace proprio::model
